"""Out-of-process forecasters spoken to over line-delimited JSON on stdin/stdout.

Protocol (one request in flight, responses in order)::

    -> {"op": "spec"}                      <- {"lookback": 13, "horizon": 15, "k": 8}
    -> {"op": "predict", "input": [[...]]} <- {"forecast": [...]}
    -> {"op": "shutdown"}                  <- process exits 0
"""

from __future__ import annotations

import collections
import json
import math
import queue
import shlex
import subprocess
import threading
from typing import Sequence

import numpy as np

from .errors import AdapterError, ContractError, HandshakeError
from .models import ForecastModel, ModelSpec

__all__ = ["ExternalModel", "connect_external", "DEFAULT_TIMEOUT"]

DEFAULT_TIMEOUT = 30.0
_EOF = object()


def _pump(stream, sink) -> None:
    try:
        for line in iter(stream.readline, ""):
            sink(line)
    except (OSError, ValueError):
        pass


class ExternalModel(ForecastModel):
    """Handle on an adapter process.  Requests are serialised through one lock."""

    kind = "external"

    def __init__(self, command: Sequence[str] | str, spec: ModelSpec, *, timeout: float = DEFAULT_TIMEOUT,
                 env=None, cwd=None):
        super().__init__(spec)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._broken: str | None = None
        self._lines: queue.Queue = queue.Queue()
        self._stderr = collections.deque(maxlen=40)
        self.requests_sent = 0
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                env=env,
                cwd=cwd,
            )
        except OSError as exc:
            raise AdapterError(f"cannot spawn adapter {self.command!r}: {exc}") from None

        def on_line(line):
            self._lines.put(line)

        out = threading.Thread(target=self._pump_stdout, args=(on_line,), daemon=True)
        err = threading.Thread(target=_pump, args=(self._proc.stderr, self._stderr.append), daemon=True)
        out.start()
        err.start()
        try:
            self._handshake()
        except Exception:
            self._kill()
            raise

    def _pump_stdout(self, on_line) -> None:
        _pump(self._proc.stdout, on_line)
        self._lines.put(_EOF)

    def diagnostics(self) -> str:
        code = self._proc.poll()
        tail = "".join(self._stderr).strip()
        parts = [f"command={self.command!r}", f"returncode={code}", f"requests_sent={self.requests_sent}"]
        if tail:
            parts.append(f"stderr tail:\n{tail[-2000:]}")
        return "; ".join(parts)

    def _fail(self, reason: str) -> AdapterError:
        self._broken = reason
        self._kill()
        return AdapterError(f"{reason} ({self.diagnostics()})")

    def _request(self, payload: dict) -> dict:
        with self._lock:
            if self._broken:
                raise AdapterError(f"adapter unusable after earlier failure: {self._broken}")
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError):
                raise self._fail("adapter closed its input") from None
            self.requests_sent += 1
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise self._fail(f"no response within {self.timeout:g}s to {payload.get('op')!r}") from None
            if line is _EOF:
                self._proc.wait(timeout=5)
                raise self._fail(f"adapter exited while handling {payload.get('op')!r}")
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                raise self._fail(f"garbled frame: {line[:200]!r}") from None
            if not isinstance(msg, dict):
                raise self._fail(f"frame is not a JSON object: {line[:200]!r}")
            if "error" in msg:
                raise AdapterError(f"adapter reported error: {msg['error']}")
            return msg

    def _handshake(self) -> None:
        msg = self._request({"op": "spec"})
        try:
            declared = ModelSpec(int(msg["lookback"]), int(msg["horizon"]), int(msg["k"]))
        except (KeyError, TypeError, ValueError):
            raise self._fail(f"malformed spec response {msg!r}") from None
        if declared != self.spec:
            self._broken = "spec mismatch"
            raise HandshakeError(
                f"adapter declares lookback={declared.lookback}, horizon={declared.horizon}, k={declared.k}; "
                f"engine expects lookback={self.lookback}, horizon={self.horizon}, k={self.k}"
            )

    def predict(self, x) -> np.ndarray:
        X = self._check_batch(np.asarray(x, dtype=np.float64)[None])
        msg = self._request({"op": "predict", "input": X[0].tolist()})
        fc = msg.get("forecast")
        if not isinstance(fc, list) or len(fc) != self.horizon:
            raise self._fail(f"forecast frame has wrong shape: {str(fc)[:200]}")
        try:
            out = np.array([float(v) for v in fc])
        except (TypeError, ValueError):
            raise self._fail("forecast contains non-numeric values") from None
        if not all(math.isfinite(v) for v in out):
            raise ContractError("adapter returned a non-finite forecast")
        return out

    def predict_batch(self, X) -> np.ndarray:
        X = self._check_batch(X)
        return np.stack([self.predict(x) for x in X]) if len(X) else np.empty((0, self.horizon))

    def _kill(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                pass
        for fh in (self._proc.stdin, self._proc.stdout, self._proc.stderr):
            try:
                fh.close()
            except (OSError, ValueError):
                pass

    def close(self) -> int | None:
        """Ask the adapter to exit and return its exit code."""
        with self._lock:
            if self._proc.poll() is None and not self._broken:
                try:
                    self._proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
                    self._proc.stdin.flush()
                    self._proc.wait(timeout=min(self.timeout, 10.0))
                except (OSError, ValueError, subprocess.TimeoutExpired):
                    pass
            self._kill()
            return self._proc.returncode

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        proc = getattr(self, "_proc", None)
        if proc is not None and proc.poll() is None:
            try:
                proc.kill()
            except OSError:
                pass


def connect_external(command: Sequence[str] | str, spec: ModelSpec, *, timeout: float = DEFAULT_TIMEOUT,
                     env=None, cwd=None) -> ExternalModel:
    """Spawn an adapter, check its declared spec and return a usable model handle."""
    return ExternalModel(command, spec, timeout=timeout, env=env, cwd=cwd)
