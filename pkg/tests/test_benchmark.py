import importlib.util
from pathlib import Path

import pytest

from sensbench import kernels

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif(not kernels.compiled_available(), reason="compiled extension not built")
def test_benchmark_runs_and_backends_agree(tmp_path, capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    out = tmp_path / "bench.json"
    assert bench.main(["--entities", "10", "--days", "40", "--repeat", "1", "--epochs", "2", "--json", str(out)]) == 0
    text = capsys.readouterr().out
    assert "max parameter difference" in text
    assert out.exists()
