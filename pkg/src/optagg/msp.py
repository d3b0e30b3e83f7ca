"""MSP/1: newline-delimited JSON model protocol over a child process's stdio.

Requests and replies are one UTF-8 JSON object per line::

    -> {"id": 1, "op": "meta"}
    <- {"id": 1, "d": 3, "name": "echo", "gradient": true}
    -> {"id": 2, "op": "predict", "inputs": [[1.0, 2.0, 3.0]]}
    <- {"id": 2, "scores": [6.0]}
    -> {"id": 3, "op": "gradient", "input": [1.0, 2.0, 3.0]}
    <- {"id": 3, "grad": [1.0, 1.0, 1.0]}

Failures are reported as ``{"id": ..., "error": "..."}``.  Ids increase
strictly per connection and every reply echoes its request id.

Running ``python -m optagg.msp`` starts the bundled reference server, a
model computing ``f(x) = sum(x)``.
"""
import argparse
import json
import queue
import subprocess
import sys
import threading

import numpy as np

from .errors import InvalidInput, ModelUnavailable, ProtocolError
from .models import Model

MAX_BATCH = 256
HANDSHAKE_TIMEOUT = 10.0


class ExternalModel(Model):
    """Proxy for a model served by a child process.

    One request is in flight at a time; concurrent callers block on an
    internal lock.
    """

    def __init__(self, argv, timeout=HANDSHAKE_TIMEOUT, request_timeout=120.0):
        self.argv = list(argv)
        self.request_timeout = request_timeout
        self.request_log = []
        self._lock = threading.Lock()
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise ModelUnavailable(f"cannot start {self.argv}: {exc}") from exc
        self._lines = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        try:
            meta = self._request({"op": "meta"}, timeout=timeout)
        except Exception:
            self.close()
            raise
        try:
            self.input_dim = int(meta["d"])
            self.name = str(meta["name"])
            self.has_gradient = meta["gradient"]
        except (KeyError, TypeError, ValueError) as exc:
            self.close()
            raise ProtocolError(f"malformed meta reply {meta!r}") from exc
        if not isinstance(self.has_gradient, bool) or self.input_dim < 1:
            self.close()
            raise ProtocolError(f"malformed meta reply {meta!r}")

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _request(self, payload, timeout=None):
        with self._lock:
            self._next_id += 1
            msg = {"id": self._next_id, **payload}
            self.request_log.append(payload)
            try:
                self._proc.stdin.write(json.dumps(msg) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError) as exc:
                raise ModelUnavailable(f"external model stdin closed: {exc}") from exc
            try:
                line = self._lines.get(timeout=timeout or self.request_timeout)
            except queue.Empty:
                raise ModelUnavailable(f"no reply to {payload['op']!r} within timeout") from None
            if line is None:
                raise ModelUnavailable("external model exited")
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"reply is not JSON: {line[:80]!r}") from exc
            if not isinstance(reply, dict) or reply.get("id") != msg["id"]:
                raise ProtocolError(f"reply id {reply.get('id') if isinstance(reply, dict) else None} "
                                    f"does not match request id {msg['id']}")
            if "error" in reply:
                raise ModelUnavailable(f"external model error: {reply['error']}")
            return reply

    def predict_batch(self, inputs):
        X = self._check_batch(inputs)
        scores = []
        for start in range(0, X.shape[0], MAX_BATCH):
            chunk = X[start:start + MAX_BATCH]
            reply = self._request({"op": "predict", "inputs": chunk.tolist()})
            got = reply.get("scores")
            if not isinstance(got, list) or len(got) != chunk.shape[0]:
                raise ProtocolError("predict reply has wrong number of scores")
            scores.extend(got)
        return np.array(scores, dtype=np.float64)

    def gradient(self, x):
        if not self.has_gradient:
            return super().gradient(x)
        x = self._check_batch(x)[0]
        reply = self._request({"op": "gradient", "input": x.tolist()})
        grad = reply.get("grad")
        if not isinstance(grad, list) or len(grad) != self.input_dim:
            raise ProtocolError("gradient reply has wrong length")
        return np.array(grad, dtype=np.float64)

    def gradient_batch(self, inputs):
        X = self._check_batch(inputs)
        return np.stack([self.gradient(x) for x in X])

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_model_connect(argv, timeout=HANDSHAKE_TIMEOUT):
    """Start ``argv`` and return a proxy after a successful ``meta`` handshake."""
    if not argv:
        raise InvalidInput("external model command line is empty")
    return ExternalModel(argv, timeout=timeout)


def handle(model, msg):
    """Compute the reply object for one decoded request."""
    rid = msg.get("id")
    try:
        op = msg["op"]
        if op == "meta":
            return {"id": rid, "d": model.input_dim, "name": model.name,
                    "gradient": bool(model.has_gradient)}
        if op == "predict":
            scores = model.predict_batch(np.asarray(msg["inputs"], dtype=np.float64))
            return {"id": rid, "scores": [float(s) for s in scores]}
        if op == "gradient":
            grad = model.gradient(np.asarray(msg["input"], dtype=np.float64))
            return {"id": rid, "grad": [float(g) for g in grad]}
        return {"id": rid, "error": f"unknown op {op!r}"}
    except Exception as exc:  # reported to the client, never fatal to the server
        return {"id": rid, "error": f"{type(exc).__name__}: {exc}"}


def serve(model, stdin=None, stdout=None):
    """Answer MSP/1 requests for ``model`` until stdin closes."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = {"id": None, "error": f"bad JSON: {exc}"}
        else:
            reply = handle(model, msg)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


class SumModel(Model):
    """``f(x) = sum(x)``: the reference model behind ``python -m optagg.msp``."""

    has_gradient = True

    def __init__(self, d, name="echo_sum"):
        self.input_dim = d
        self.name = name

    def predict_batch(self, inputs):
        return self._check_batch(inputs).sum(axis=1)

    def gradient_batch(self, inputs):
        return np.ones_like(self._check_batch(inputs))


def main(argv=None):
    parser = argparse.ArgumentParser(description="reference MSP/1 server computing sum(x)")
    parser.add_argument("--dim", type=int, default=3)
    args = parser.parse_args(argv)
    serve(SumModel(args.dim))


if __name__ == "__main__":
    main()
