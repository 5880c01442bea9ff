"""Reference adapter processes for the external-model protocol.

Run ``python -m sensbench.adapter --model model.json`` to serve a saved
built-in model, or ``--echo`` for a model that repeats the last value of one
input column.  :func:`serve` is the building block for wrapping any other
forecaster.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Callable, TextIO

import numpy as np

from .models import load_model


def serve(predict: Callable[[np.ndarray], np.ndarray], spec: dict, *, stdin: TextIO = sys.stdin,
          stdout: TextIO = sys.stdout, crash_after: int | None = None) -> int:
    """Answer protocol requests until ``shutdown`` or end of input; returns the exit code."""
    served = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
        except (json.JSONDecodeError, AttributeError):
            resp = {"error": "malformed request"}
        else:
            if op == "shutdown":
                return 0
            if op == "spec":
                resp = dict(spec)
            elif op == "predict":
                if crash_after is not None and served >= crash_after:
                    print(f"adapter: simulated crash after {served} predictions", file=sys.stderr)
                    sys.stderr.flush()
                    return 3
                try:
                    x = np.asarray(req["input"], dtype=np.float64)
                    resp = {"forecast": [float(v) for v in predict(x)]}
                    served += 1
                except Exception as exc:  # report to the engine instead of dying
                    resp = {"error": f"{type(exc).__name__}: {exc}"}
            else:
                resp = {"error": f"unknown op {op!r}"}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m sensbench.adapter", description=__doc__.splitlines()[0])
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="saved built-in model (JSON) to serve")
    src.add_argument("--echo", action="store_true", help="repeat the last value of --echo-column")
    ap.add_argument("--lookback", type=int, default=13)
    ap.add_argument("--horizon", type=int, default=15)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--echo-column", type=int, default=0)
    ap.add_argument("--declare-k", type=int, help="announce this k in the handshake (fault injection)")
    ap.add_argument("--crash-after", type=int, help="exit abruptly after this many predictions")
    args = ap.parse_args(argv)

    if args.model:
        model = load_model(args.model)
        spec = model.spec.to_dict()
        predict = model.predict
    else:
        spec = {"lookback": args.lookback, "horizon": args.horizon, "k": args.k}
        col, horizon = args.echo_column, args.horizon

        def predict(x):
            return np.full(horizon, x[-1, col])

    if args.declare_k is not None:
        spec["k"] = args.declare_k
    return serve(predict, spec, crash_after=args.crash_after)


if __name__ == "__main__":
    sys.exit(main())
