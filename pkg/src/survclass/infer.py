"""Survival-curve reconstruction from classifier probabilities.

Two routes to a curve:
  * failure mode: S(t_k) = 1 - p(event by t_k), clipped to a running minimum
    so the curve is nonincreasing;
  * hazard mode: per-interval hazards multiplied out, monotone by
    construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FeatureOptions, Grid, StaticExample, _assemble_features, _locf_state


@dataclass(frozen=True)
class SurvivalCurve:
    grid_times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.grid_times) != len(self.values):
            raise ValueError("times and values must align")
        if len(self.values) == 0:
            raise ValueError("empty curve")

    def value_at(self, t: float) -> float:
        try:
            return self.values[self.grid_times.index(t)]
        except ValueError:
            raise KeyError(f"curve has no value at t={t}") from None


@dataclass(frozen=True)
class HazardCurve:
    grid_times: tuple
    values: tuple


def clip_monotone(values: np.ndarray) -> np.ndarray:
    """Running minimum from early to late boundaries; idempotent and never
    increases a value."""
    return np.minimum.accumulate(np.asarray(values, dtype=float))


def _checked_probabilities(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("classifier output outside [0, 1]")
    return p


def survival_matrix(classifier, covariates: np.ndarray, grid: Grid) -> np.ndarray:
    """Clipped survival values for many subjects at once, one row per subject
    and one column per boundary."""
    covariates = np.asarray(covariates, dtype=float)
    n, d = covariates.shape
    m = len(grid.boundaries)
    queries = np.empty((n * m, d + 1))
    queries[:, :d] = np.repeat(covariates, m, axis=0)
    queries[:, d] = np.tile(np.asarray(grid.boundaries, dtype=float), n)
    p = _checked_probabilities(classifier.predict_probability(queries))
    raw = 1.0 - p.reshape(n, m)
    return np.minimum.accumulate(raw, axis=1)


def survival_static(classifier, x, grid: Grid) -> SurvivalCurve:
    """Survival curve for one subject from a classifier fit on the static
    expansion schema."""
    values = survival_matrix(classifier, np.atleast_2d(np.asarray(x, dtype=float)), grid)[0]
    return SurvivalCurve(tuple(grid.boundaries), tuple(values))


def risk_static(curve: SurvivalCurve) -> float:
    """Average failure probability over the boundaries (higher = riskier)."""
    return float(np.mean(1.0 - np.asarray(curve.values)))


def dynamic_query_matrix(record, grid: Grid, k: int, options: FeatureOptions) -> np.ndarray:
    if k >= grid.k - 1:
        raise ValueError("no horizons remain")
    t_k = grid.time_at(k)
    state = _locf_state(record, t_k)
    rows = [
        _assemble_features(*state, t_k, grid.time_at(h), h, options)
        for h in range(k + 1, grid.k)
    ]
    return np.stack(rows)


def survival_dynamic(classifier, record, grid: Grid, k: int,
                     options: FeatureOptions) -> SurvivalCurve:
    """Conditional survival curve over horizons t_{k+1}..t_{K-1} for a subject
    at risk at t_k, clipped to a running minimum over the horizon."""
    queries = dynamic_query_matrix(record, grid, k, options)
    p = _checked_probabilities(classifier.predict_probability(queries))
    values = clip_monotone(1.0 - p)
    return SurvivalCurve(tuple(grid.boundaries[k:]), tuple(values))


def risk_dynamic(curve: SurvivalCurve) -> float:
    """Average predicted future cumulative risk over the remaining horizons."""
    return float(np.mean(1.0 - np.asarray(curve.values)))


def survival_from_hazard(hazards: HazardCurve) -> SurvivalCurve:
    """Product-form survival from per-interval hazards: S(t_k) is the product
    of (1 - hazard) over intervals up to k."""
    lam = np.asarray(hazards.values, dtype=float)
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise ValueError("hazards outside [0, 1]")
    return SurvivalCurve(tuple(hazards.grid_times), tuple(np.cumprod(1.0 - lam)))


def expand_hazard(records, grid: Grid):
    """Static-schema examples for hazard-mode training.

    A subject contributes at interval k only while at risk at its start
    (t_{k-1} < Z): label 1 in the interval where an observed event falls,
    label 0 in intervals survived outright, nothing once censored.
    """
    out = []
    boundaries = grid.boundaries
    for i, rec in enumerate(records):
        z = rec.observed_time
        for k_idx, t_k in enumerate(boundaries, start=1):
            t_prev = grid.time_at(k_idx - 1)
            if not t_prev < z:
                break
            if t_k < z:
                out.append(StaticExample(rec.covariates, t_k, k_idx, 0, i))
            elif rec.event:
                out.append(StaticExample(rec.covariates, t_k, k_idx, 1, i))
                break
            else:
                break
    return out


def hazard_survival_matrix(classifier, covariates: np.ndarray, grid: Grid) -> np.ndarray:
    """Survival values via the hazard route for many subjects at once."""
    covariates = np.asarray(covariates, dtype=float)
    n, d = covariates.shape
    m = len(grid.boundaries)
    queries = np.empty((n * m, d + 1))
    queries[:, :d] = np.repeat(covariates, m, axis=0)
    queries[:, d] = np.tile(np.asarray(grid.boundaries, dtype=float), n)
    lam = _checked_probabilities(classifier.predict_probability(queries)).reshape(n, m)
    return np.cumprod(1.0 - lam, axis=1)


def survival_static_hazard(classifier, x, grid: Grid) -> SurvivalCurve:
    """One subject's curve from a hazard-mode classifier."""
    lam = hazard_survival_matrix(classifier, np.atleast_2d(np.asarray(x, dtype=float)), grid)[0]
    return SurvivalCurve(tuple(grid.boundaries), tuple(lam))
