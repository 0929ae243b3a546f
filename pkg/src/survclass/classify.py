"""Probabilistic binary classifiers over expanded survival examples.

All classifiers share one contract: ``fit(features, labels)`` then
``predict_probability(features) -> values in [0, 1]``.  Everything here is
deterministic: identical data and configuration give bit-identical
predictions.
"""

from __future__ import annotations

import json
import math
import os
import select
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from .grid import feature_matrix, labels as example_labels

LOG_EPS = 1e-12


class NotFittedError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    """Failure in the external-classifier wire protocol; the message names
    the protocol stage."""


@dataclass(frozen=True)
class TrainingConfig:
    max_iterations: int = 10_000
    gradient_tolerance: float = 1e-8
    l2_penalty: float = 1e-6
    boosting_rounds: int = 200
    learning_rate: float = 0.1
    histogram_bins: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations <= 0 or self.boosting_rounds < 0:
            raise ValueError("iteration counts must be positive")
        if min(self.gradient_tolerance, self.l2_penalty, self.learning_rate) < 0:
            raise ValueError("tolerances and rates must be nonnegative")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")


def bce(p: float, y) -> float:
    """Binary cross-entropy -{y log p + (1-y) log(1-p)} with p clamped away
    from the endpoints."""
    p = min(max(float(p), LOG_EPS), 1.0 - LOG_EPS)
    y = float(y)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def bce_vector(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), LOG_EPS, 1.0 - LOG_EPS)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def dataset_bce(classifier, examples) -> float:
    """Mean per-example cross-entropy of a fitted classifier on expanded
    examples (comparable across grid granularities)."""
    if not examples:
        raise ValueError("no examples")
    x = feature_matrix(examples)
    y = example_labels(examples)
    p = classifier.predict_probability(x)
    return float(np.mean(bce_vector(p, y)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_training_inputs(x: np.ndarray, y: np.ndarray):
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be 2-d and aligned with labels")
    if x.shape[0] == 0:
        raise ValueError("no training rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    if not np.all(np.isfinite(y)) or not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")


def logistic_objective(weights: np.ndarray, intercept: float, x: np.ndarray,
                       y: np.ndarray, l2_penalty: float):
    """Mean BCE of the linear-logit model plus l2_penalty * ||w||^2 (the
    intercept is unpenalized).  Returns (value, weight gradient, intercept
    gradient)."""
    z = x @ weights + intercept
    p = _sigmoid(z)
    value = float(np.mean(bce_vector(p, y))) + l2_penalty * float(weights @ weights)
    resid = (p - y) / y.shape[0]
    grad_w = x.T @ resid + 2.0 * l2_penalty * weights
    grad_b = float(np.sum(resid))
    return value, grad_w, grad_b


class LogisticClassifier:
    """L2-regularized logistic regression fit by full-batch gradient descent
    with Armijo backtracking, started from zero weights."""

    def __init__(self, config: TrainingConfig | None = None):
        self.config = config or TrainingConfig()
        self.weights_ = None
        self.intercept_ = None
        self.objective_path_ = None
        self.converged_ = False

    def fit(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_training_inputs(x, y)
        cfg = self.config
        w = np.zeros(x.shape[1])
        b = 0.0
        value, grad_w, grad_b = logistic_objective(w, b, x, y, cfg.l2_penalty)
        path = [value]
        step = 1.0
        self.converged_ = False
        for _ in range(cfg.max_iterations):
            gnorm = abs(grad_b)
            if grad_w.size:
                gnorm = max(gnorm, float(np.max(np.abs(grad_w))))
            if gnorm < cfg.gradient_tolerance:
                self.converged_ = True
                break
            gsq = float(grad_w @ grad_w) + grad_b * grad_b
            step = min(step * 2.0, 1e8)
            while True:
                w_new = w - step * grad_w
                b_new = b - step * grad_b
                v_new, gw_new, gb_new = logistic_objective(w_new, b_new, x, y, cfg.l2_penalty)
                if v_new <= value - 1e-4 * step * gsq:
                    break
                step *= 0.5
                if step < 1e-20:
                    break
            if step < 1e-20:
                break
            w, b, value, grad_w, grad_b = w_new, b_new, v_new, gw_new, gb_new
            path.append(value)
        self.weights_ = w
        self.intercept_ = b
        self.objective_path_ = path
        return self

    def predict_probability(self, x):
        if self.weights_ is None:
            raise NotFittedError("predict before fit")
        x = np.asarray(x, dtype=float)
        return _sigmoid(x @ self.weights_ + self.intercept_)


def _stump_thresholds(values: np.ndarray, bins: int) -> np.ndarray:
    """Candidate split points for one feature: midpoints between the unique
    values, thinned to quantile cuts when there are more than `bins`."""
    uniq = np.unique(values)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    return np.unique(np.quantile(values, np.arange(1, bins) / bins))


class BoostedStumpsClassifier:
    """Gradient-boosted depth-1 trees on the logit scale.

    Each round greedily picks the single split maximizing the Newton gain
    over per-feature histogram thresholds (hessian regularizer fixed at 1.0);
    ties break to the lowest feature index, then the lowest threshold.
    """

    _REG = 1.0

    def __init__(self, config: TrainingConfig | None = None):
        self.config = config or TrainingConfig()
        self.base_logit_ = None
        self.stumps_ = None
        self.train_bce_path_ = None

    def fit(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_training_inputs(x, y)
        cfg = self.config
        base_p = min(max(float(np.mean(y)), LOG_EPS), 1.0 - LOG_EPS)
        self.base_logit_ = math.log(base_p / (1.0 - base_p))
        n, d = x.shape
        thresholds = [_stump_thresholds(x[:, f], cfg.histogram_bins) for f in range(d)]
        bin_idx = [np.searchsorted(thresholds[f], x[:, f], side="left")
                   for f in range(d)]
        z = np.full(n, self.base_logit_)
        stumps = []
        path = [float(np.mean(bce_vector(_sigmoid(z), y)))]
        for _ in range(cfg.boosting_rounds):
            p = _sigmoid(z)
            g = y - p
            h = p * (1.0 - p)
            g_total = float(np.sum(g))
            h_total = float(np.sum(h))
            base_score = g_total * g_total / (h_total + self._REG)
            best = None  # (gain, feature, threshold_idx, left value, right value)
            for f in range(d):
                thr = thresholds[f]
                if thr.size == 0:
                    continue
                gl = np.cumsum(np.bincount(bin_idx[f], weights=g, minlength=thr.size + 1))[:-1]
                hl = np.cumsum(np.bincount(bin_idx[f], weights=h, minlength=thr.size + 1))[:-1]
                gr = g_total - gl
                hr = h_total - hl
                gains = gl * gl / (hl + self._REG) + gr * gr / (hr + self._REG) - base_score
                m = int(np.argmax(gains))  # first max: lowest threshold wins ties
                gain = float(gains[m])
                if best is None or gain > best[0]:
                    best = (gain, f, m,
                            float(gl[m] / (hl[m] + self._REG)),
                            float(gr[m] / (hr[m] + self._REG)))
            if best is None:
                # no splittable feature: single global Newton step
                value = g_total / (h_total + self._REG)
                stumps.append((-1, 0.0, value, value))
                z = z + cfg.learning_rate * value
            else:
                _, f, m, left, right = best
                stumps.append((f, float(thresholds[f][m]), left, right))
                z = z + cfg.learning_rate * np.where(bin_idx[f] <= m, left, right)
            path.append(float(np.mean(bce_vector(_sigmoid(z), y))))
        self.stumps_ = stumps
        self.train_bce_path_ = path
        return self

    def predict_probability(self, x):
        if self.stumps_ is None:
            raise NotFittedError("predict before fit")
        x = np.asarray(x, dtype=float)
        z = np.full(x.shape[0], self.base_logit_)
        lr = self.config.learning_rate
        for f, thr, left, right in self.stumps_:
            if f < 0:
                z = z + lr * left
            else:
                z = z + lr * np.where(x[:, f] <= thr, left, right)
        return _sigmoid(z)


class FrequencyClassifier:
    """Empirical mean label per distinct feature row; unseen rows fall back
    to the global label mean.  On finite-support features this is the exact
    minimizer of the mean cross-entropy."""

    def __init__(self):
        self.means_ = None
        self.global_mean_ = None

    def fit(self, x, y):
        x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=float)
        if x.shape[0] == 0:
            raise ValueError("no training rows")
        sums: dict = {}
        counts: dict = {}
        for row, label in zip(x, y):
            key = row.tobytes()
            if key in sums:
                sums[key] += label
                counts[key] += 1
            else:
                sums[key] = label
                counts[key] = 1
        self.means_ = {k: sums[k] / counts[k] for k in sums}
        total = 0.0
        for label in y:
            total += label
        self.global_mean_ = total / y.shape[0]
        return self

    def predict_probability(self, x):
        if self.means_ is None:
            raise NotFittedError("predict before fit")
        x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
        means = self.means_
        fallback = self.global_mean_
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            out[i] = means.get(x[i].tobytes(), fallback)
        return out


def logistic_fit(examples, config: TrainingConfig | None = None) -> LogisticClassifier:
    return LogisticClassifier(config).fit(feature_matrix(examples), example_labels(examples))


def boosted_stumps_fit(examples, config: TrainingConfig | None = None) -> BoostedStumpsClassifier:
    return BoostedStumpsClassifier(config).fit(feature_matrix(examples), example_labels(examples))


def frequency_fit(examples) -> FrequencyClassifier:
    return FrequencyClassifier().fit(feature_matrix(examples), example_labels(examples))


# ---------------------------------------------------------------------------
# external classifier protocol (newline-delimited JSON over a child process)


class _LineChannel:
    """Newline-delimited message exchange with a child process, with a
    per-message timeout."""

    def __init__(self, proc: subprocess.Popen, timeout: float):
        self.proc = proc
        self.timeout = timeout
        self._buf = b""

    def send(self, stage: str, message: dict):
        try:
            self.proc.stdin.write((json.dumps(message) + "\n").encode())
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"{stage}: child closed its input ({exc})") from exc

    def receive(self, stage: str) -> dict:
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise ProtocolError(f"{stage}: timed out after {self.timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ProtocolError(f"{stage}: child exited without replying")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        try:
            reply = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"{stage}: malformed reply ({exc})") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"{stage}: malformed reply (not an object)")
        if not reply.get("ok", False):
            raise ProtocolError(f"{stage}: backend error: {reply.get('error', 'unknown')}")
        return reply


def external_fit_predict(command, train_features, train_labels, query_features,
                         timeout: float = 300.0) -> np.ndarray:
    """Run one fit+predict session against an external classifier process.

    The child receives ``fit`` then ``predict`` then ``shutdown`` messages on
    stdin (one JSON object per line) and must reply one line per message.
    """
    args = shlex.split(command) if isinstance(command, str) else list(command)
    train_features = np.asarray(train_features, dtype=float)
    train_labels = np.asarray(train_labels, dtype=float)
    query_features = np.asarray(query_features, dtype=float)
    try:
        proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    except OSError as exc:
        raise ProtocolError(f"spawn: cannot start {args[0]!r} ({exc})") from exc
    try:
        chan = _LineChannel(proc, timeout)
        chan.send("fit", {
            "op": "fit",
            "features": [[float(v) for v in row] for row in train_features],
            "labels": [int(v) for v in train_labels],
        })
        chan.receive("fit")
        chan.send("predict", {
            "op": "predict",
            "features": [[float(v) for v in row] for row in query_features],
        })
        reply = chan.receive("predict")
        probs = reply.get("probs")
        if not isinstance(probs, list) or len(probs) != query_features.shape[0]:
            raise ProtocolError(
                f"predict: reply has {len(probs) if isinstance(probs, list) else 'no'} "
                f"probabilities, expected {query_features.shape[0]}")
        out = np.array([float(p) for p in probs])
        if np.any(~np.isfinite(out)) or np.any(out < 0.0) or np.any(out > 1.0):
            raise ProtocolError("predict: probability out of range")
        chan.send("shutdown", {"op": "shutdown"})
        return out
    finally:
        try:
            proc.stdin.close()
        except OSError:
            pass
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class ExternalClassifier:
    """Client for an external classifier process speaking the line protocol.

    The training set is kept in memory and re-sent for every prediction
    batch, so each prediction is one self-contained child session (matching
    in-context learners, which hold no state between datasets).
    """

    def __init__(self, command, timeout: float = 300.0):
        self.command = command
        self.timeout = timeout
        self._train = None

    def fit(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_training_inputs(x, y)
        self._train = (x, y)
        return self

    def predict_probability(self, x):
        if self._train is None:
            raise NotFittedError("predict before fit")
        return external_fit_predict(self.command, self._train[0], self._train[1],
                                    np.asarray(x, dtype=float), timeout=self.timeout)
