"""External-classifier server over newline-delimited JSON on stdin/stdout.

Requests:  {"op":"fit","features":[[...]],"labels":[...]}
           {"op":"predict","features":[[...]]}
           {"op":"shutdown"}
Replies:   {"ok":true}, {"ok":true,"probs":[...]}, or {"ok":false,"error":"..."}

One reply per request, flushed immediately.  Malformed input gets an error
reply and the loop continues; only "shutdown" (or EOF) ends the process.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


class BackendError(RuntimeError):
    pass


class FrequencyBackend:
    """Per-cell frequency classifier: the mean training label for each
    distinct feature row, global mean for unseen rows.

    Arithmetic note: rows are keyed by their float64 byte image and label
    sums accumulate in row order, so probabilities are bit-identical to any
    client that computes running-sum cell means over the same rows.
    """

    name = "frequency"

    def __init__(self, seed: int = 0):
        self._means = None
        self._global = None

    def fit(self, features, labels):
        rows = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise BackendError("fit needs a nonempty 2-d feature matrix")
        if len(labels) != rows.shape[0]:
            raise BackendError("labels must align with features")
        sums: dict = {}
        counts: dict = {}
        total = 0.0
        for row, label in zip(rows, labels):
            value = float(label)
            if value not in (0.0, 1.0):
                raise BackendError("labels must be binary")
            key = row.tobytes()
            if key in sums:
                sums[key] += value
                counts[key] += 1
            else:
                sums[key] = value
                counts[key] = 1
            total += value
        self._means = {k: sums[k] / counts[k] for k in sums}
        self._global = total / rows.shape[0]

    def predict(self, features):
        if self._means is None:
            raise BackendError("not fitted")
        rows = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        return [self._means.get(row.tobytes(), self._global) for row in rows]


class TabPFNBackend:
    """In-context tabular foundation model backend (requires the `tabpfn`
    package; probabilities are passed through unchanged)."""

    name = "tabpfn"

    def __init__(self, seed: int = 0):
        try:
            from tabpfn import TabPFNClassifier
        except ImportError as exc:
            raise BackendError("tabpfn is not installed") from exc
        self._classifier_cls = TabPFNClassifier
        self._seed = seed
        self._model = None
        self._single_class = None

    def fit(self, features, labels):
        x = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=int)
        classes = np.unique(y)
        if classes.size == 1:
            self._single_class = float(classes[0])
            self._model = None
            return
        self._single_class = None
        self._model = self._classifier_cls(random_state=self._seed)
        self._model.fit(x, y)

    def predict(self, features):
        if self._model is None and self._single_class is None:
            raise BackendError("not fitted")
        if self._single_class is not None:
            return [self._single_class] * len(features)
        probs = self._model.predict_proba(np.asarray(features, dtype=float))
        return [float(p) for p in probs[:, 1]]


BACKENDS = {"frequency": FrequencyBackend, "tabpfn": TabPFNBackend}


def resolve_backend(name: str, seed: int):
    """Instantiate the requested backend; "auto" prefers a foundation model
    when one is importable and never silently substitutes otherwise."""
    if name == "auto":
        try:
            backend = TabPFNBackend(seed)
        except BackendError:
            backend = FrequencyBackend(seed)
        print(f"survadapter: serving backend {backend.name}", file=sys.stderr)
        return backend
    if name not in BACKENDS:
        raise BackendError(f"unknown backend {name!r}")
    return BACKENDS[name](seed)


def handle(message: dict, backend, row_cap: int | None) -> tuple[dict, bool]:
    """One request -> (reply, keep_running)."""
    op = message.get("op")
    if op == "fit":
        features = message.get("features")
        labels = message.get("labels")
        if not isinstance(features, list) or not isinstance(labels, list):
            return {"ok": False, "error": "fit needs features and labels lists"}, True
        if row_cap is not None and len(features) > row_cap:
            return {"ok": False,
                    "error": f"row cap exceeded: {len(features)} > {row_cap}"}, True
        try:
            backend.fit(features, labels)
        except (BackendError, ValueError, TypeError) as exc:
            return {"ok": False, "error": str(exc)}, True
        return {"ok": True}, True
    if op == "predict":
        features = message.get("features")
        if not isinstance(features, list):
            return {"ok": False, "error": "predict needs a features list"}, True
        try:
            probs = backend.predict(features)
        except (BackendError, ValueError, TypeError) as exc:
            return {"ok": False, "error": str(exc)}, True
        bad = [p for p in probs if not (0.0 <= p <= 1.0)]
        if bad:
            return {"ok": False, "error": f"backend probability out of range: {bad[0]}"}, True
        return {"ok": True, "probs": probs}, True
    if op == "shutdown":
        return {"ok": True}, False
    return {"ok": False, "error": f"unknown op {op!r}"}, True


def serve(backend, row_cap=None, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("request must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            stdout.write(json.dumps({"ok": False, "error": f"malformed request: {exc}"}) + "\n")
            stdout.flush()
            continue
        reply, keep_running = handle(message, backend, row_cap)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
        if not keep_running:
            return 0
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="survadapter")
    parser.add_argument("--backend", default="auto",
                        help="frequency | tabpfn | auto (default: auto)")
    parser.add_argument("--row-cap", type=int, default=None,
                        help="reject fit requests larger than this many rows")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        backend = resolve_backend(args.backend, args.seed)
    except BackendError as exc:
        print(f"survadapter: {exc}", file=sys.stderr)
        return 2
    return serve(backend, row_cap=args.row_cap)


if __name__ == "__main__":
    sys.exit(main())
