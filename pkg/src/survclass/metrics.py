"""Censoring estimators and the IPCW evaluation suite.

Conventions shared by every estimator here:
  * censoring weights for an event at T use the left limit G(T-) of the
    censoring Kaplan-Meier curve, so a jump at T itself never zeroes the
    weight;
  * tied risk scores earn 0.5 concordance / AUC credit;
  * boundaries where a metric is undefined are signaled with
    MetricUndefined and dropped by the integrating caller.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class MetricUndefined(ValueError):
    """The metric has no value on this input (e.g. no comparable pairs)."""


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous nonincreasing step function with value 1 at 0."""

    jump_times: tuple
    jump_values: tuple

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.jump_times, self.jump_times[1:])):
            raise ValueError("jump times must be strictly increasing")

    def value(self, t):
        """Value at time t (right-continuous); accepts scalars or arrays."""
        jumps = np.asarray(self.jump_times)
        vals = np.concatenate(([1.0], np.asarray(self.jump_values, dtype=float)))
        idx = np.searchsorted(jumps, t, side="right")
        out = vals[idx]
        return float(out) if np.isscalar(t) else out

    def left_value(self, t):
        """Left limit at time t; accepts scalars or arrays."""
        jumps = np.asarray(self.jump_times)
        vals = np.concatenate(([1.0], np.asarray(self.jump_values, dtype=float)))
        idx = np.searchsorted(jumps, t, side="left")
        out = vals[idx]
        return float(out) if np.isscalar(t) else out


@dataclass(frozen=True)
class MetricConfig:
    t_max: float
    tie_credit: float = 0.5

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class EloConfig:
    initial_rating: float = 1000.0
    k_factor: float = 32.0


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit estimator of P(T > t) from right-censored data."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if times.size == 0:
        raise ValueError("no observations")
    if times.shape != events.shape:
        raise ValueError("times and events must align")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    e_sorted = events[order]
    uniq, first = np.unique(t_sorted, return_index=True)
    deaths = np.add.reduceat(e_sorted.astype(float), first)
    at_risk = times.size - first
    factors = 1.0 - deaths / at_risk
    survival = np.cumprod(factors)
    keep = deaths > 0
    return StepFunction(tuple(uniq[keep]), tuple(survival[keep]))


def censoring_km(times, events) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survival P(C > t): the
    product-limit estimator with the event indicator flipped."""
    events = np.asarray(events).astype(bool)
    return kaplan_meier(times, ~events)


def conditional_censoring(g: StepFunction, t: float, u: float) -> float:
    """P(C > u | C > t) as the unconditional Kaplan-Meier ratio G(u)/G(t)."""
    if u < t:
        raise ValueError("u must be >= t")
    g_t = g.value(t)
    if g_t <= 0.0:
        raise MetricUndefined("no censoring support")
    return g.value(u) / g_t


def _case_weights(g: StepFunction, case_times: np.ndarray, power: int,
                  scale: float = 1.0):
    """IPCW weights G(T-)^-power for event times, with optional conditional
    rescaling; zero censoring support at a case raises."""
    g_left = np.asarray(g.left_value(case_times), dtype=float) / scale
    if np.any(g_left <= 0.0):
        raise MetricUndefined("zero censoring weight at an event time")
    return g_left ** (-power)


def cindex_ipcw(risks, times, events, g: StepFunction, config: MetricConfig,
                min_time: float = 0.0, g_scale: float = 1.0) -> float:
    """Truncated IPCW concordance: over pairs with T_i < T_j, T_i <= t_max
    (and T_i > min_time), the weighted fraction where the earlier event got
    the higher risk score; ties count half."""
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    cases = np.where(events & (times <= config.t_max) & (times > min_time))[0]
    if cases.size == 0:
        raise MetricUndefined("no comparable pairs")
    weights = _case_weights(g, times[cases], power=2, scale=g_scale)
    numerator = 0.0
    denominator = 0.0
    for start in range(0, cases.size, 256):
        block = cases[start:start + 256]
        w = weights[start:start + 256]
        later = times[None, :] > times[block, None]
        wins = later & (risks[block, None] > risks[None, :])
        ties = later & (risks[block, None] == risks[None, :])
        credit = wins.sum(axis=1) + config.tie_credit * ties.sum(axis=1)
        numerator += float(w @ credit)
        denominator += float(w @ later.sum(axis=1))
    if denominator == 0.0:
        raise MetricUndefined("no comparable pairs")
    return numerator / denominator


def auc_at_time(risks, times, events, g: StepFunction, t: float,
                min_time: float = 0.0, g_scale: float = 1.0) -> float:
    """IPCW AUC at horizon t: cases are observed events in (min_time, t],
    controls are subjects observed beyond t; case weights are 1/G(T-)."""
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    case_mask = events & (times <= t) & (times > min_time)
    control_mask = times > t
    if not case_mask.any() or not control_mask.any():
        raise MetricUndefined("no cases or no controls")
    weights = _case_weights(g, times[case_mask], power=1, scale=g_scale)
    control_risks = np.sort(risks[control_mask])
    case_risks = risks[case_mask]
    below = np.searchsorted(control_risks, case_risks, side="left")
    upto = np.searchsorted(control_risks, case_risks, side="right")
    credit = below + 0.5 * (upto - below)
    return float(weights @ credit) / (float(np.sum(weights)) * control_risks.size)


def integrated_auc(risks, times, events, g: StepFunction,
                   s_marginal: StepFunction, grid) -> float:
    """Weighted average of the per-boundary AUCs, weighting each boundary by
    the marginal survival mass S(t_{k-1}) - S(t_k) falling in its interval.
    Boundaries with undefined AUC are dropped."""
    total = 0.0
    total_weight = 0.0
    prev_s = s_marginal.value(0.0)
    for t in grid.boundaries:
        s_t = s_marginal.value(t)
        w = prev_s - s_t
        prev_s = s_t
        try:
            auc = auc_at_time(risks, times, events, g, t)
        except MetricUndefined:
            continue
        total += w * auc
        total_weight += w
    if total_weight <= 0.0:
        raise MetricUndefined("all weights zero")
    return total / total_weight


def brier_at_time(curves, times, events, g: StepFunction, t: float,
                  min_time: float = 0.0, g_scale: float = 1.0) -> float:
    """IPCW Brier score at t: squared error of the predicted survival against
    the observed status, events reweighted by 1/G(T-) and survivors by
    1/G(t)."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    s_t = np.array([c.value_at(t) for c in curves], dtype=float)
    g_t = g.value(t) / g_scale
    if g_t <= 0.0:
        raise MetricUndefined("zero censoring support")
    case_mask = events & (times <= t) & (times > min_time)
    control_mask = times > t
    total = 0.0
    if case_mask.any():
        w = _case_weights(g, times[case_mask], power=1, scale=g_scale)
        total += float(np.sum(w * s_t[case_mask] ** 2))
    if control_mask.any():
        total += float(np.sum((1.0 - s_t[control_mask]) ** 2)) / g_t
    return total / times.size


def integrated_brier(brier_values, grid) -> float:
    """Trapezoidal average of the Brier scores over [t_1, t_{K-1}]."""
    values = np.asarray(brier_values, dtype=float)
    boundaries = np.asarray(grid.boundaries, dtype=float)
    if values.size != boundaries.size:
        raise ValueError("need one Brier value per boundary")
    if values.size < 2:
        raise MetricUndefined("cannot integrate a single boundary")
    return float(np.trapezoid(values, boundaries) / (boundaries[-1] - boundaries[0]))


def dynamic_metrics(risks, curves, times, events, g: StepFunction, grid, k: int,
                    t_max: float | None = None) -> dict:
    """Landmarked metrics for the cohort at risk at t_k.

    Inputs are restricted to subjects with observed time beyond t_k; curves
    are conditional curves over horizons t_{k+1}..t_{K-1}.  Censoring terms
    use the conditional ratio G(.)/G(t_k); the integrated-AUC weights use the
    conditional Kaplan-Meier of the cohort itself.  Metrics that are
    undefined on this cohort come back as None.
    """
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    t_k = grid.time_at(k)
    horizons = grid.boundaries[k:]
    out = {"cindex": None, "integrated_auc": None, "ibs": None}
    if times.size == 0 or len(horizons) == 0:
        return out
    g_at_k = g.value(t_k)
    if g_at_k <= 0.0:
        return out
    if t_max is None:
        t_max = horizons[-1]

    try:
        out["cindex"] = cindex_ipcw(risks, times, events, g,
                                    MetricConfig(t_max=t_max),
                                    min_time=t_k, g_scale=g_at_k)
    except MetricUndefined:
        pass

    cond_km = kaplan_meier(times, events)
    km_at_origin = cond_km.value(t_k)  # 1 whenever the cohort is truly at risk
    total = 0.0
    total_weight = 0.0
    prev_s = km_at_origin
    for t in horizons:
        s_t = cond_km.value(t)
        w = (prev_s - s_t) / km_at_origin if km_at_origin > 0 else 0.0
        prev_s = s_t
        try:
            auc = auc_at_time(risks, times, events, g, t, min_time=t_k, g_scale=g_at_k)
        except MetricUndefined:
            continue
        total += w * auc
        total_weight += w
    if total_weight > 0.0:
        out["integrated_auc"] = total / total_weight

    if len(horizons) >= 2:
        try:
            briers = [brier_at_time(curves, times, events, g, t,
                                    min_time=t_k, g_scale=g_at_k)
                      for t in horizons]
            span = horizons[-1] - horizons[0]
            out["ibs"] = float(np.trapezoid(np.asarray(briers), np.asarray(horizons)) / span)
        except MetricUndefined:
            pass
    return out


def elo_ratings(table: dict, higher_better: bool,
                config: EloConfig | None = None) -> dict:
    """Elo ratings from per-dataset per-model scores.

    One arena per dataset: all models start at the initial rating and play a
    single round-robin, pairs visited in lexicographic name order; a strictly
    better oriented score wins, equal scores draw.  The final rating is the
    mean over dataset arenas.
    """
    config = config or EloConfig()
    models = _check_table(table)
    totals = {m: 0.0 for m in models}
    for dataset in sorted(table):
        scores = table[dataset]
        ratings = {m: config.initial_rating for m in models}
        for a, b in itertools.combinations(sorted(models), 2):
            sa, sb = scores[a], scores[b]
            if sa == sb:
                outcome = 0.5
            else:
                a_better = sa > sb if higher_better else sa < sb
                outcome = 1.0 if a_better else 0.0
            expected = 1.0 / (1.0 + 10.0 ** ((ratings[b] - ratings[a]) / 400.0))
            ratings[a] += config.k_factor * (outcome - expected)
            ratings[b] += config.k_factor * ((1.0 - outcome) - (1.0 - expected))
        for m in models:
            totals[m] += ratings[m]
    return {m: totals[m] / len(table) for m in models}


def average_rank(table: dict, higher_better: bool) -> dict:
    """Mean rank (1 = best) across datasets, ties sharing the mean rank."""
    models = _check_table(table)
    totals = {m: 0.0 for m in models}
    for dataset in table:
        scores = np.array([table[dataset][m] for m in models], dtype=float)
        oriented = -scores if higher_better else scores
        order = np.argsort(oriented, kind="stable")
        ranks = np.empty(len(models))
        pos = 0
        while pos < len(models):
            end = pos
            while end + 1 < len(models) and oriented[order[end + 1]] == oriented[order[pos]]:
                end += 1
            mean_rank = (pos + end) / 2.0 + 1.0
            for i in range(pos, end + 1):
                ranks[order[i]] = mean_rank
            pos = end + 1
        for m, r in zip(models, ranks):
            totals[m] += float(r)
    return {m: totals[m] / len(table) for m in models}


def _check_table(table: dict):
    if not table:
        raise ValueError("empty score table")
    models = sorted({m for scores in table.values() for m in scores})
    if len(models) < 2:
        raise ValueError("need at least two models")
    for dataset, scores in table.items():
        for m in models:
            if m not in scores or scores[m] is None:
                raise ValueError(f"missing score for model {m!r} on dataset {dataset!r}")
    return models
