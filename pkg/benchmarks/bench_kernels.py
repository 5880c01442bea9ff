"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times the moving average, one epoch of each model's gradient descent and a
full training run on a synthetic panel, then checks that both backends agree.
"""

import argparse
import json
import statistics
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from sensbench import kernels
from sensbench.models import TrainConfig, train
from sensbench.panel import SynthConfig, make_windows, synth_generate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def cases(windows):
    X, Y = windows.inputs, windows.targets
    n, L, k = X.shape
    H = Y.shape[1]
    ma = kernels.moving_average(X, 3)
    trend = np.ascontiguousarray(ma.reshape(n, -1))
    seasonal = np.ascontiguousarray((X - ma).reshape(n, -1))
    rng = np.random.default_rng(0)
    order = rng.permutation(n).astype(np.int64)
    width = 32
    Z = np.ascontiguousarray(X.reshape(n, -1))

    def moving_average(impl):
        return lambda: impl.moving_average(X, 3)

    def linear_epoch(impl):
        Wt, Ws, b = np.zeros((H, L * k)), np.zeros((H, L * k)), np.zeros(H)
        return lambda: impl.linear_epoch(trend, seasonal, Y, Wt, Ws, b, order, 32, 0.01, 0.0)

    def mlp_epoch(impl):
        W1 = rng.uniform(-0.05, 0.05, (width, L * k))
        b1 = np.zeros(width)
        W2 = rng.uniform(-0.05, 0.05, (H, width))
        b2 = np.zeros(H)
        return lambda: impl.mlp_epoch(Z, Y, W1.copy(), b1.copy(), W2.copy(), b2.copy(), order, 32, 0.01, 0.0)

    return {"moving_average": moving_average, "linear_epoch": linear_epoch, "mlp_epoch": mlp_epoch}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=200)
    ap.add_argument("--days", type=int, default=60)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        print("compiled extension not built; only the python backend is timed", file=sys.stderr)
    backends = ["python"] + (["compiled"] if kernels.compiled_available() else [])

    panel, _ = synth_generate(SynthConfig(entities=args.entities, days=args.days, standardize=True, seed=0))
    windows = make_windows(panel, 13, 15)
    print(f"{len(windows)} windows, lookback 13, horizon 15, k {panel.k}; best of {args.repeat}\n")

    results = {}
    with threadpool_limits(limits=1):
        for name, make in cases(windows).items():
            for b in backends:
                results[(name, b)] = best_of(make(kernels.get_backend(b)), args.repeat)
        for kind in ("linear-decomp", "mlp"):
            cfg = TrainConfig(epochs=args.epochs, seed=0)
            models = {}
            for b in backends:
                def run(b=b):
                    models[b] = train(kind, windows, cfg, backend=b)
                results[(f"train {kind}", b)] = best_of(run, max(1, args.repeat // 2))
            if len(models) == 2:
                p, c = models["python"].to_dict(), models["compiled"].to_dict()
                diff = max(float(np.max(np.abs(np.asarray(p[key]) - np.asarray(c[key]))))
                           for key in p if isinstance(p[key], list))
                print(f"train {kind}: max parameter difference between backends {diff:.2e}")

    print(f"\n{'kernel':<24}{'python (s)':>12}{'compiled (s)':>14}{'speedup':>10}")
    rows = []
    for name in dict.fromkeys(n for n, _ in results):
        py = results[(name, "python")][0]
        comp = results.get((name, "compiled"), (float("nan"),))[0]
        print(f"{name:<24}{py:>12.5f}{comp:>14.5f}{py / comp:>9.2f}x")
        rows.append({"case": name, "python": py, "compiled": comp, "speedup": py / comp})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"windows": len(windows), "rows": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
