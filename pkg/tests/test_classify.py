import math
import stat
import sys

import numpy as np
import pytest

from survclass.classify import (BoostedStumpsClassifier, ExternalClassifier,
                                FrequencyClassifier, LogisticClassifier,
                                NotFittedError, ProtocolError, TrainingConfig,
                                bce, bce_vector, dataset_bce,
                                external_fit_predict, frequency_fit,
                                logistic_fit, logistic_objective)
from survclass.grid import Grid, StaticRecord, expand_static


def make_examples(zs, events, xs=None):
    xs = xs if xs is not None else [(1.0,)] * len(zs)
    records = [StaticRecord(np.asarray(x, dtype=float), z, e)
               for x, z, e in zip(xs, zs, events)]
    return expand_static(records, Grid((1.0, 2.0, 3.0)))


class TestBce:
    def test_half(self):
        assert bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect(self):
        assert bce(1.0, 1) <= 1e-12

    def test_quarter(self):
        assert bce(0.25, 0) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_endpoint_clamped(self):
        assert math.isfinite(bce(0.0, 1))
        assert math.isfinite(bce(1.0, 0))


class _ConstantClassifier:
    def __init__(self, p):
        self.p = p

    def predict_probability(self, x):
        return np.full(len(x), self.p)


class TestDatasetBce:
    def test_exact_labels(self):
        examples = make_examples([1.5, 2.5], [True, True])

        class Oracle:
            def predict_probability(self, x):
                return np.array([1.0 if r[-1] >= z else 0.0
                                 for r, z in zip(x, [1.5, 1.5, 1.5, 2.5, 2.5, 2.5])])

        assert dataset_bce(Oracle(), examples) <= 1e-10

    def test_coin_flip(self):
        examples = make_examples([1.5, 2.5], [True, False])
        assert dataset_bce(_ConstantClassifier(0.5), examples) == pytest.approx(math.log(2))

    def test_constant_point_two(self):
        # labels (1, 0, 0) at p = 0.2
        examples = make_examples([0.5], [True])[:1] + make_examples([3.5], [False])[:2]
        assert [e.label for e in examples] == [1, 0, 0]
        expected = (-math.log(0.2) - 2 * math.log(0.8)) / 3
        assert dataset_bce(_ConstantClassifier(0.2), examples) == pytest.approx(expected, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError, match="no examples"):
            dataset_bce(_ConstantClassifier(0.5), [])


class TestLogistic:
    def test_constant_feature_matches_label_mean(self):
        x = np.ones((8, 1))
        y = np.array([1, 0, 0, 0, 1, 0, 0, 0], dtype=float)
        clf = LogisticClassifier(TrainingConfig(l2_penalty=1e-6)).fit(x, y)
        assert clf.predict_probability(x)[0] == pytest.approx(0.25, abs=1e-3)

    def test_all_zero_labels_saturate(self):
        x = np.linspace(-1, 1, 12).reshape(-1, 1)
        clf = LogisticClassifier().fit(x, np.zeros(12))
        assert np.all(clf.predict_probability(x) < 0.01)

    def test_separable_pair(self):
        x = np.array([[-1.0], [1.0]])
        y = np.array([0.0, 1.0])
        clf = LogisticClassifier().fit(x, y)
        assert np.mean(bce_vector(clf.predict_probability(x), y)) < 0.1

    def test_objective_nonincreasing(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((40, 3))
        y = (x[:, 0] + 0.3 * rng.standard_normal(40) > 0).astype(float)
        clf = LogisticClassifier().fit(x, y)
        path = clf.objective_path_
        assert all(b <= a + 1e-15 for a, b in zip(path, path[1:]))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((30, 2))
        y = rng.integers(0, 2, 30).astype(float)
        a = LogisticClassifier().fit(x, y).predict_probability(x)
        b = LogisticClassifier().fit(x, y).predict_probability(x)
        assert np.array_equal(a, b)

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            LogisticClassifier().predict_probability(np.ones((1, 1)))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            LogisticClassifier().fit(np.array([[np.nan]]), np.array([1.0]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        h = 1e-6
        for _ in range(10):
            n, d = int(rng.integers(5, 25)), int(rng.integers(1, 4))
            x = rng.standard_normal((n, d))
            y = rng.integers(0, 2, n).astype(float)
            w = rng.uniform(-1.5, 1.5, d)
            b = float(rng.uniform(-1, 1))
            l2 = float(rng.choice([0.0, 1e-3, 1e-2]))
            _, grad_w, grad_b = logistic_objective(w, b, x, y, l2)
            approx = np.empty(d + 1)
            for j in range(d):
                wp, wm = w.copy(), w.copy()
                wp[j] += h
                wm[j] -= h
                approx[j] = (logistic_objective(wp, b, x, y, l2)[0]
                             - logistic_objective(wm, b, x, y, l2)[0]) / (2 * h)
            approx[d] = (logistic_objective(w, b + h, x, y, l2)[0]
                         - logistic_objective(w, b - h, x, y, l2)[0]) / (2 * h)
            analytic = np.concatenate([grad_w, [grad_b]])
            rel = np.max(np.abs(analytic - approx)) / max(1.0, np.max(np.abs(analytic)))
            assert rel < 1e-5


class TestBoostedStumps:
    def test_learns_threshold_function(self):
        rng = np.random.default_rng(0)
        x = rng.random((200, 3))
        y = (x[:, 1] > 0.6).astype(float)
        clf = BoostedStumpsClassifier().fit(x, y)
        assert clf.train_bce_path_[-1] < 0.05

    def test_zero_rounds_is_base_rate(self):
        x = np.arange(20, dtype=float).reshape(-1, 1)
        y = np.array([1.0] * 8 + [0.0] * 12)
        clf = BoostedStumpsClassifier(TrainingConfig(boosting_rounds=0)).fit(x, y)
        np.testing.assert_allclose(clf.predict_probability(x), 0.4)

    def test_duplicate_columns_tie_break(self):
        rng = np.random.default_rng(2)
        x = rng.random((100, 1))
        y = (x[:, 0] > 0.5).astype(float)
        single = BoostedStumpsClassifier().fit(x, y)
        doubled = BoostedStumpsClassifier().fit(np.hstack([x, x]), y)
        assert np.array_equal(single.predict_probability(x),
                              doubled.predict_probability(np.hstack([x, x])))

    def test_training_bce_nonincreasing(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((120, 4))
        y = (x[:, 0] + x[:, 2] > 0).astype(float)
        clf = BoostedStumpsClassifier().fit(x, y)
        path = clf.train_bce_path_
        assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            BoostedStumpsClassifier().predict_probability(np.ones((1, 1)))


class TestFrequency:
    def test_cell_mean(self):
        x = np.array([[0.0], [0.0], [0.0]])
        clf = FrequencyClassifier().fit(x, np.array([1.0, 0.0, 1.0]))
        assert clf.predict_probability(np.array([[0.0]]))[0] == pytest.approx(2 / 3)

    def test_unseen_cell_gets_global_mean(self):
        x = np.array([[0.0], [0.0], [1.0], [1.0], [1.0]])
        y = np.array([1.0, 0.0, 0.0, 1.0, 0.0])
        clf = FrequencyClassifier().fit(x, y)
        assert clf.predict_probability(np.array([[9.0]]))[0] == pytest.approx(0.4)

    def test_pure_cells(self):
        x = np.array([[0.0], [0.0], [1.0], [1.0]])
        clf = FrequencyClassifier().fit(x, np.array([0.0, 0.0, 1.0, 1.0]))
        np.testing.assert_allclose(clf.predict_probability(np.array([[0.0], [1.0]])),
                                   [0.0, 1.0])

    def test_minimizes_training_bce(self):
        # empirical minimizer: no other classifier beats it on finite support
        rng = np.random.default_rng(8)
        examples = make_examples(rng.integers(1, 8, 40) / 2.0,
                                 rng.integers(0, 2, 40).astype(bool))
        freq = frequency_fit(examples)
        best = dataset_bce(freq, examples)
        for other in (logistic_fit(examples),
                      _ConstantClassifier(0.5),
                      _ConstantClassifier(float(np.mean([e.label for e in examples])))):
            assert best <= dataset_bce(other, examples) + 1e-12


ECHO_SERVER = """\
#!/usr/bin/env python3
import json, sys
state = {"labels": None}
for line in sys.stdin:
    msg = json.loads(line)
    if msg["op"] == "fit":
        state["labels"] = msg["labels"]
        print(json.dumps({"ok": True}), flush=True)
    elif msg["op"] == "predict":
        mean = sum(state["labels"]) / len(state["labels"])
        print(json.dumps({"ok": True, "probs": [mean] * len(msg["features"])}), flush=True)
    else:
        print(json.dumps({"ok": True}), flush=True)
        break
"""

BAD_PROB_SERVER = """\
#!/usr/bin/env python3
import json, sys
for line in sys.stdin:
    msg = json.loads(line)
    if msg["op"] == "fit":
        print(json.dumps({"ok": True}), flush=True)
    elif msg["op"] == "predict":
        print(json.dumps({"ok": True, "probs": [1.5] * len(msg["features"])}), flush=True)
    else:
        print(json.dumps({"ok": True}), flush=True)
        break
"""

CRASH_SERVER = """\
#!/usr/bin/env python3
import sys
sys.exit(2)
"""


def write_server(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(body)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return f"{sys.executable} {path}"


class TestExternalProtocol:
    def test_fit_predict_roundtrip(self, tmp_path):
        command = write_server(tmp_path, "echo.py", ECHO_SERVER)
        probs = external_fit_predict(command, [[0.0], [1.0]], [0, 1],
                                     [[0.0], [0.5], [1.0]], timeout=30)
        np.testing.assert_allclose(probs, [0.5, 0.5, 0.5])
        assert len(probs) == 3

    def test_probability_out_of_range(self, tmp_path):
        command = write_server(tmp_path, "bad.py", BAD_PROB_SERVER)
        with pytest.raises(ProtocolError, match="probability out of range"):
            external_fit_predict(command, [[0.0]], [1], [[0.0]], timeout=30)

    def test_child_crash_names_stage(self, tmp_path):
        command = write_server(tmp_path, "crash.py", CRASH_SERVER)
        with pytest.raises(ProtocolError, match="fit"):
            external_fit_predict(command, [[0.0]], [1], [[0.0]], timeout=30)

    def test_classifier_wrapper(self, tmp_path):
        command = write_server(tmp_path, "echo.py", ECHO_SERVER)
        clf = ExternalClassifier(command, timeout=30)
        with pytest.raises(NotFittedError):
            clf.predict_probability(np.ones((1, 1)))
        clf.fit(np.array([[0.0], [1.0], [2.0]]), np.array([1.0, 0.0, 0.0]))
        probs = clf.predict_probability(np.array([[5.0]]))
        assert probs[0] == pytest.approx(1 / 3)
