"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are fixed here at the values stated for each criterion; the
consistency experiments use generator configurations whose censoring is
independent of the event time, with sampling noise (3-sigma binomial at the
rarest cell) comfortably inside the stated bounds.
"""

import json
import time

import numpy as np

import survclass.bench as bench
import survclass.synth as synth
from survclass.classify import FrequencyClassifier, logistic_objective
from survclass.cli import main as cli_main
from survclass.grid import (FeatureOptions, Grid, expand_dynamic,
                            expand_static, feature_matrix, labels)
from survclass.infer import (HazardCurve, clip_monotone, survival_dynamic,
                             survival_from_hazard, survival_matrix)
from survclass.metrics import (MetricConfig, MetricUndefined, auc_at_time,
                               brier_at_time, cindex_ipcw, dynamic_metrics,
                               elo_ratings, kaplan_meier)

from instances import censoring_steps, random_curves, random_instance
from oracles import (auc_oracle, brier_oracle, cindex_oracle, dynamic_oracle,
                     km_oracle, step_left, step_value)


def _verdict(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: {status}{suffix}")
    assert ok, f"{name}: {detail}"


# 4 covariate cells; events on the boundaries, censoring mass strictly below
# the first boundary plus administrative mass beyond the horizon, so the
# per-cell label means are unbiased for the tabulated CDF.
STATIC_CONSISTENCY_TRUTH = synth.DiscreteTruth(
    support=((0.0,), (1.0,), (2.0,), (3.0,)),
    boundaries=(1.0, 2.0, 3.0),
    cdf_table=((0.30, 0.55, 0.80), (0.20, 0.50, 0.85),
               (0.35, 0.60, 0.75), (0.25, 0.45, 0.70)),
    censor_dist=(0.30, 0.0, 0.0),
)


def _static_consistency_error(n: int, seed: int) -> float:
    grid = Grid(STATIC_CONSISTENCY_TRUTH.boundaries)
    records = synth.gen_discrete(STATIC_CONSISTENCY_TRUTH, n, seed)
    examples = expand_static(records, grid)
    clf = FrequencyClassifier().fit(feature_matrix(examples), labels(examples))
    support = np.asarray(STATIC_CONSISTENCY_TRUTH.support, dtype=float)
    fitted = survival_matrix(clf, support, grid)
    truth = np.array([[synth.true_survival(STATIC_CONSISTENCY_TRUTH, tuple(row), k)
                       for k in (1, 2, 3)] for row in support])
    return float(np.max(np.abs(fitted - truth)))


def test_static_consistency_at_scale():
    started = time.monotonic()
    err_small = _static_consistency_error(20_000, seed=101)
    err_large = _static_consistency_error(200_000, seed=202)
    elapsed = time.monotonic() - started
    _verdict("static-consistency",
             err_small <= 0.05 and err_large <= 0.02 and elapsed < 60.0,
             f"max|err| {err_small:.4f} @20k, {err_large:.4f} @200k, {elapsed:.1f}s")


DYNAMIC_CONSISTENCY_TRUTH = synth.DynamicTruth(
    boundaries=(1.0, 2.0, 3.0),
    state_probs=(0.5, 0.5),
    obs_times=(0.0, 0.6, 1.6),
    obs_values=(((1.0,), (1.4,), (1.8,)), ((5.0,), (4.4,), (3.8,))),
    hazard_table=((0.15, 0.30, 0.40), (0.30, 0.50, 0.55)),
    censor_dist=(0.30, 0.0, 0.0),
)


def test_dynamic_consistency_at_scale():
    started = time.monotonic()
    truth = DYNAMIC_CONSISTENCY_TRUTH
    grid = Grid(truth.boundaries)
    options = FeatureOptions()
    records = synth.gen_dynamic(truth, 50_000, seed=404)
    examples = expand_dynamic(records, grid, options)
    clf = FrequencyClassifier().fit(feature_matrix(examples), labels(examples))

    representatives = {}
    for record in records:
        state = truth.state_of(record)
        for k in range(grid.k - 1):
            key = (state, k)
            if key not in representatives and record.observed_time > grid.time_at(k):
                representatives[key] = record
        if len(representatives) == 2 * (grid.k - 1):
            break

    worst = 0.0
    for (state, k), record in sorted(representatives.items()):
        curve = survival_dynamic(clf, record, grid, k, options)
        for delta, estimate in enumerate(curve.values, start=1):
            oracle = truth.conditional_survival(state, k, delta)
            worst = max(worst, abs(estimate - oracle))
    elapsed = time.monotonic() - started
    _verdict("dynamic-consistency",
             worst <= 0.05 and elapsed < 120.0,
             f"max|err| {worst:.4f} over every (k, delta), {elapsed:.1f}s")


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(31337)
    grid = Grid((1.0, 2.5, 4.0, 5.5))
    checked = {"cindex": 0, "auc": 0, "brier": 0, "dynamic": 0}
    worst = 0.0
    for _ in range(200):
        times, events, risks = random_instance(rng, n_max=50)
        g, steps = censoring_steps(times, events)
        t_max = float(np.max(times))
        try:
            mine = cindex_ipcw(risks, times, events, g, MetricConfig(t_max=t_max))
            ref = cindex_oracle(list(risks), list(times), list(events), steps, t_max)
            worst = max(worst, abs(mine - ref))
            checked["cindex"] += 1
        except (MetricUndefined, ZeroDivisionError):
            pass
        t = float(np.median(times))
        try:
            mine = auc_at_time(risks, times, events, g, t)
            ref = auc_oracle(list(risks), list(times), list(events), steps, t)
            worst = max(worst, abs(mine - ref))
            checked["auc"] += 1
        except (MetricUndefined, ZeroDivisionError):
            pass
        s_vals = random_curves(rng, len(times), [t])
        from survclass.infer import SurvivalCurve
        curves = [SurvivalCurve((t,), (row[0],)) for row in s_vals]
        try:
            mine = brier_at_time(curves, times, events, g, t)
            ref = brier_oracle([row[0] for row in s_vals], list(times),
                               list(events), steps, t)
            worst = max(worst, abs(mine - ref))
            checked["brier"] += 1
        except MetricUndefined:
            pass
        # dynamic variants on the cohort at risk at t_1
        k = 1
        at_risk = times > grid.time_at(k)
        if at_risk.sum() >= 4:
            ct, ce, cr = times[at_risk], events[at_risk], risks[at_risk]
            horizons = grid.boundaries[k:]
            cs = random_curves(rng, int(at_risk.sum()), horizons)
            curves = [SurvivalCurve(tuple(horizons), tuple(row)) for row in cs]
            mine = dynamic_metrics(cr, curves, ct, ce, g, grid, k)
            ref = dynamic_oracle(list(cr), [list(r) for r in cs], list(ct),
                                 list(ce), steps, list(grid.boundaries), k)
            for key in ("cindex", "integrated_auc", "ibs"):
                if ref[key] is None or mine[key] is None:
                    assert ref[key] is None and mine[key] is None
                else:
                    worst = max(worst, abs(mine[key] - ref[key]))
            checked["dynamic"] += 1

    km_exact = True
    for _ in range(200):
        times, events, _ = random_instance(rng, n_max=30)
        km = kaplan_meier(times, events)
        steps = km_oracle(list(times), list(events))
        for t in np.unique(times):
            if km.value(t) != step_value(steps, t) or \
                    km.left_value(t) != step_left(steps, t):
                km_exact = False
    ok = worst <= 1e-10 and km_exact and all(v >= 100 for v in checked.values())
    _verdict("metric-oracle-equivalence", ok,
             f"max deviation {worst:.2e}, km exact: {km_exact}, counts {checked}")


def test_correlation_bce_vs_ibs(tmp_path):
    started = time.monotonic()
    rng = np.random.default_rng(888)
    paths = []
    for i in range(20):
        beta_scale = float(rng.uniform(0.0, 1.5))
        truth = synth.WeibullTruth(
            coefficients=tuple(beta_scale * rng.choice([-1.0, 1.0], 3)),
            shape=float(rng.uniform(0.8, 2.0)),
            censor_rate=float(rng.uniform(0.1, 0.6)),
        )
        n = int(rng.integers(250, 500))
        records = synth.gen_weibull(truth, n, 3, seed=1000 + i)
        path = tmp_path / f"w{i:02d}.csv"
        path.write_text(synth.static_csv(records))
        paths.append(str(path))
    config = bench.ExperimentConfig(
        datasets=tuple(paths), setting="static", k_values=(5,),
        models=("logistic", "stumps", "frequency"), seed=77,
        out_dir=str(tmp_path / "out"))
    table = bench.run_experiment(config)

    points = {"test_bce": [], "ibs": [], "classification_auc": [], "cindex": []}
    for dataset in table.datasets():
        for model in table.models():
            values = {b: bench.aggregate_metric(table, dataset, model, b)
                      for b in points}
            if all(v is not None for v in values.values()):
                for b, v in values.items():
                    points[b].append(v)
    r_bce_ibs = bench.pearson_r(points["test_bce"], points["ibs"])
    r_auc_cindex = bench.pearson_r(points["classification_auc"], points["cindex"])
    elapsed = time.monotonic() - started
    _verdict("correlation-bce-ibs",
             r_bce_ibs >= 0.7 and r_auc_cindex > 0.0 and elapsed < 600.0
             and len(points["ibs"]) >= 55,
             f"r(BCE,IBS)={r_bce_ibs:.3f}, r(clsAUC,C)={r_auc_cindex:.3f}, "
             f"{len(points['ibs'])} points, {elapsed:.0f}s")


def test_monotonicity_invariants():
    rng = np.random.default_rng(4242)
    violations = 0
    for _ in range(10_000):
        values = rng.random(int(rng.integers(1, 12)))
        clipped = clip_monotone(values)
        if np.any(np.diff(clipped) > 0) or np.any(clipped > values):
            violations += 1
        if not np.array_equal(clip_monotone(clipped), clipped):
            violations += 1
        hazard = survival_from_hazard(
            HazardCurve(tuple(range(1, values.size + 1)), tuple(values)))
        if np.any(np.diff(hazard.values) > 0):
            violations += 1
    _verdict("monotonicity-invariants", violations == 0,
             f"{violations} violations over 10000 vectors")


def test_rank_invariance():
    rng = np.random.default_rng(515)
    transforms = (lambda r: 2.0 * r, lambda r: r ** 3, np.exp)
    checked = 0
    exact = True
    while checked < 100:
        times, events, risks = random_instance(rng)
        g, _ = censoring_steps(times, events)
        cfg = MetricConfig(t_max=float(np.max(times)))
        t = float(np.median(times))
        try:
            base_c = cindex_ipcw(risks, times, events, g, cfg)
            base_a = auc_at_time(risks, times, events, g, t)
        except MetricUndefined:
            continue
        for transform in transforms:
            if cindex_ipcw(transform(risks), times, events, g, cfg) != base_c:
                exact = False
            if auc_at_time(transform(risks), times, events, g, t) != base_a:
                exact = False
        checked += 1
    _verdict("rank-invariance", exact,
             "C-index and AUC exactly invariant on 100 instances x 3 transforms")


def test_elo_arithmetic():
    two_model = elo_ratings({"arena": {"A": 1.0, "B": 0.0}}, higher_better=True)
    exact = two_model == {"A": 1016.0, "B": 984.0}
    rng = np.random.default_rng(99)
    conserved = True
    for _ in range(1000):
        models = [f"m{j}" for j in range(int(rng.integers(2, 7)))]
        scores = {m: float(np.round(rng.random(), 1)) for m in models}
        ratings = elo_ratings({"arena": scores}, higher_better=True)
        if abs(sum(ratings.values()) - 1000.0 * len(models)) > 1e-9:
            conserved = False
    _verdict("elo-arithmetic", exact and conserved,
             f"two-model arena {two_model}, sums conserved over 1000 arenas: {conserved}")


def test_gradient_check():
    rng = np.random.default_rng(2024)
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(5, 30)), int(rng.integers(1, 5))
        x = rng.standard_normal((n, d))
        y = rng.integers(0, 2, n).astype(float)
        w = rng.uniform(-2.0, 2.0, d)
        b = float(rng.uniform(-1.5, 1.5))
        l2 = float(rng.choice([0.0, 1e-4, 1e-2]))
        _, grad_w, grad_b = logistic_objective(w, b, x, y, l2)
        analytic = np.concatenate([grad_w, [grad_b]])
        approx = np.empty(d + 1)
        for j in range(d):
            wp, wm = w.copy(), w.copy()
            wp[j] += h
            wm[j] -= h
            approx[j] = (logistic_objective(wp, b, x, y, l2)[0]
                         - logistic_objective(wm, b, x, y, l2)[0]) / (2 * h)
        approx[d] = (logistic_objective(w, b + h, x, y, l2)[0]
                     - logistic_objective(w, b - h, x, y, l2)[0]) / (2 * h)
        rel = float(np.max(np.abs(analytic - approx)) / max(1.0, np.max(np.abs(analytic))))
        worst = max(worst, rel)
    _verdict("gradient-check", worst < 1e-5, f"worst relative error {worst:.2e}")


def test_run_determinism(tmp_path):
    records = synth.gen_weibull(synth.WeibullTruth((0.7, -0.4), 1.4, 0.3), 220, 2, seed=55)
    data = tmp_path / "det.csv"
    data.write_text(synth.static_csv(records))
    tables = []
    for run in ("one", "two"):
        out_dir = tmp_path / run
        config_path = tmp_path / f"{run}.json"
        config_path.write_text(json.dumps({
            "datasets": [str(data)], "setting": "static", "k_values": [4, 5],
            "models": ["logistic", "stumps", "frequency"], "seed": 11,
            "out_dir": str(out_dir),
        }))
        assert cli_main(["run", "--config", str(config_path)]) == 0
        tables.append((out_dir / "results.csv").read_bytes())
    _verdict("run-determinism", tables[0] == tables[1],
             f"{len(tables[0])} bytes, identical: {tables[0] == tables[1]}")
