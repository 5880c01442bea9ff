"""Command-line entry point: ``sensbench {synth,train,run,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import SensBenchError
from .runner import EXIT_FATAL, EXIT_OK, cmd_report, cmd_run, cmd_synth, cmd_train

log = logging.getLogger("sensbench")


def _out_dir(args, config) -> Path:
    out = args.out or (config.out and str(Path(config.base_dir) / config.out))
    if not out:
        raise SensBenchError("no output directory: pass --out or set 'out' in the config")
    return Path(out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sensbench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run config (TOML)")
        p.add_argument("--seed", type=int, help="override the config's global seed")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("synth", help="write a synthetic panel CSV and its ground-truth ranking"))
    common(sub.add_parser("train", help="train the config's built-in models and save them"))
    p = sub.add_parser("run", help="run every (model, method) cell of the grid")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells (default 1)")
    p = sub.add_parser("report", help="agreement and accuracy tables for a run directory")
    p.add_argument("run_dir", nargs="?", help="run directory (or --out)")
    p.add_argument("--out", help="run directory")
    p.add_argument("--truth", help="ground-truth JSON ({features, ranks} or {features, scores})")
    p.add_argument("--truth-ascending", action="store_true",
                   help="smaller truth scores mean more important")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            run_dir = args.run_dir or args.out
            if not run_dir:
                raise SensBenchError("report needs a run directory")
            summary = cmd_report(run_dir, args.truth, invert_truth=args.truth_ascending)
            if summary["accuracy"]:
                for row in summary["accuracy"]:
                    print(f"{row['model']}.{row['method']}: spearman={row['spearman']}")
            print(f"tables written to {Path(run_dir) / 'matrices'}")
            return EXIT_OK

        config = load_config(args.config, seed=args.seed)
        out = _out_dir(args, config)
        if args.command == "synth":
            files = cmd_synth(config, out)
            print(json.dumps({k: str(v) for k, v in files.items()}))
            return EXIT_OK
        if args.command == "train":
            summary = cmd_train(config, out)
            for mid, info in summary.items():
                print(f"{mid}: train_mse={info['train_mse']:.6g} (init {info['init_mse']:.6g})")
            return EXIT_OK
        code, manifest = cmd_run(config, out, jobs=args.jobs)
        for cell in manifest["cells"]:
            msg = f"{cell['model']}.{cell['method']}: {cell['status']}"
            print(msg if cell["status"] == "ok" else f"{msg} ({cell['error']})")
        return code
    except (SensBenchError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
