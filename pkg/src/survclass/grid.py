"""Temporal discretization and expansion of censored records into
binary-classification examples.

The time axis is partitioned at boundaries t_1 < ... < t_{K-1} (with t_0 = 0
and t_K = +inf implied).  A record observed until Z = min(T, C) with event
flag delta contributes, at each boundary, a binary label "event by t_k"
whenever that label is determined by the observed data:

    label 1  if delta = 1 and Z <= t_k      (event already happened)
    label 0  if t_k < Z                     (still event-free at t_k)
    nothing  otherwise                      (censored, label unknown)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StaticRecord:
    """One right-censored observation with baseline covariates."""

    covariates: np.ndarray
    observed_time: float
    event: bool

    def __post_init__(self):
        if self.observed_time <= 0:
            raise ValueError(f"observed_time must be positive, got {self.observed_time}")


@dataclass(frozen=True)
class DynamicRecord:
    """One right-censored observation with a timestamped covariate history.

    Observations are (time, covariate vector) pairs with strictly increasing
    times, the first at time 0 (baseline), all at or before observed_time.
    """

    subject_id: object
    observations: tuple
    observed_time: float
    event: bool

    def __post_init__(self):
        if self.observed_time <= 0:
            raise ValueError(f"observed_time must be positive, got {self.observed_time}")
        times = [s for s, _ in self.observations]
        if not times:
            raise ValueError("record needs at least one observation")
        if times[0] != 0.0:
            raise ValueError("first observation must be at time 0 (baseline)")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("observation times must be strictly increasing")
        if times[-1] > self.observed_time:
            raise ValueError("observation times must not exceed observed_time")


@dataclass(frozen=True)
class Grid:
    """Interval boundaries t_1 < ... < t_{K-1}; t_0 = 0 and t_K = inf implied."""

    boundaries: tuple

    def __post_init__(self):
        if len(self.boundaries) < 1:
            raise ValueError("grid needs at least one boundary")
        if any(b <= 0 for b in self.boundaries):
            raise ValueError("boundaries must be positive")
        if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def k(self) -> int:
        """Number of intervals K (boundary count + 1)."""
        return len(self.boundaries) + 1

    def time_at(self, index: int) -> float:
        """Boundary time t_index, with t_0 = 0."""
        if index == 0:
            return 0.0
        return self.boundaries[index - 1]


@dataclass(frozen=True, slots=True)
class StaticExample:
    covariates: np.ndarray
    boundary_time: float
    boundary_index: int
    label: int
    subject_index: int


@dataclass(frozen=True, slots=True)
class DynamicExample:
    features: np.ndarray
    origin_index: int
    horizon_index: int
    label: int
    subject_index: int


@dataclass(frozen=True)
class FeatureOptions:
    """Optional components of the dynamic feature vector."""

    include_time_since_last: bool = False
    include_horizon_index: bool = False

    @staticmethod
    def all_combinations():
        return tuple(
            FeatureOptions(a, b) for a in (False, True) for b in (False, True)
        )


def compute_grid(event_times, k: int) -> Grid:
    """Boundaries at type-1 empirical quantiles (levels j/k, j = 1..k-1) of
    the observed event times.

    The type-1 rule picks the smallest order statistic whose empirical CDF
    reaches the level, so every boundary is an observed event time.
    Duplicate boundaries are dropped and K shrinks accordingly.
    """
    times = np.asarray(sorted(event_times), dtype=float)
    if times.size == 0:
        raise ValueError("no event times")
    if k < 2:
        raise ValueError(f"K must be >= 2, got {k}")
    n = times.size
    boundaries = []
    for j in range(1, k):
        # smallest index i with i/n >= j/k
        i = int(np.ceil(n * j / k))
        boundaries.append(float(times[max(i, 1) - 1]))
    deduped = tuple(dict.fromkeys(boundaries))
    return Grid(boundaries=deduped)


def expand_static(records, grid: Grid):
    """Expand records into labeled static examples, ordered by subject then
    boundary index.  Unobservable labels (censored before the boundary) are
    skipped rather than imputed."""
    out = []
    boundaries = grid.boundaries
    for i, rec in enumerate(records):
        z = rec.observed_time
        for k_idx, t_k in enumerate(boundaries, start=1):
            if t_k < z:
                out.append(StaticExample(rec.covariates, t_k, k_idx, 0, i))
            elif rec.event:
                out.append(StaticExample(rec.covariates, t_k, k_idx, 1, i))
            # else: censored at or before t_k, label unknown
    return out


def _locf_state(record: DynamicRecord, t: float):
    """LOCF value and running mean of observations at times <= t, plus the
    time of the most recent observation."""
    values = []
    last_time = None
    last_value = None
    for s, x in record.observations:
        if s > t:
            break
        values.append(np.asarray(x, dtype=float))
        last_time = s
        last_value = values[-1]
    if last_value is None:
        raise ValueError(f"no observation at or before t={t}")
    mean = np.mean(np.stack(values), axis=0)
    return last_value, mean, last_time


def _assemble_features(locf, mean, last_obs_time, t_k, t_h, horizon,
                       options: FeatureOptions) -> np.ndarray:
    parts = [locf, mean, [t_k, t_h]]
    if options.include_time_since_last:
        parts.append([t_k - last_obs_time])
    if options.include_horizon_index:
        parts.append([float(horizon)])
    return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])


def featurize_dynamic(record: DynamicRecord, grid: Grid, k: int, horizon: int,
                      options: FeatureOptions) -> np.ndarray:
    """Fixed-length feature vector for predicting the label at t_horizon from
    the history available at t_k.

    Layout: [covariates LOCF at t_k, running mean over s <= t_k, t_k,
    t_horizon], then optionally the time since the latest observation and the
    integer horizon index.
    """
    if not (0 <= k < horizon <= grid.k - 1):
        raise ValueError(f"horizon {horizon} out of range for origin {k} with K={grid.k}")
    t_k = grid.time_at(k)
    t_h = grid.time_at(horizon)
    locf, mean, last_obs_time = _locf_state(record, t_k)
    return _assemble_features(locf, mean, last_obs_time, t_k, t_h, horizon, options)


def expand_dynamic(records, grid: Grid, options: FeatureOptions):
    """Expand dynamic records into (origin, horizon) labeled examples.

    Origins k = 0..K-2 are kept while the subject is still observed at risk
    (t_k < Z); horizon labels follow the static inclusion rule at t_{k+delta}.
    """
    out = []
    boundaries = grid.boundaries
    n_bounds = len(boundaries)
    for i, rec in enumerate(records):
        z = rec.observed_time
        for k in range(0, n_bounds):
            t_k = grid.time_at(k)
            if not t_k < z:
                break
            state = None
            for horizon in range(k + 1, n_bounds + 1):
                t_h = boundaries[horizon - 1]
                if t_h < z:
                    label = 0
                elif rec.event:
                    label = 1
                else:
                    continue
                if state is None:
                    state = _locf_state(rec, t_k)
                feats = _assemble_features(*state, t_k, t_h, horizon, options)
                out.append(DynamicExample(feats, k, horizon, label, i))
    return out


def feature_matrix(examples) -> np.ndarray:
    """Stack examples into the classifier input matrix.

    Static examples map to [covariates, boundary_time]; dynamic examples carry
    their feature vector already.
    """
    if not examples:
        raise ValueError("no examples")
    first = examples[0]
    if isinstance(first, StaticExample):
        d = len(first.covariates)
        mat = np.empty((len(examples), d + 1), dtype=float)
        for i, ex in enumerate(examples):
            mat[i, :d] = ex.covariates
            mat[i, d] = ex.boundary_time
        return mat
    mat = np.empty((len(examples), len(first.features)), dtype=float)
    for i, ex in enumerate(examples):
        mat[i] = ex.features
    return mat


def labels(examples) -> np.ndarray:
    if not examples:
        raise ValueError("no examples")
    return np.array([ex.label for ex in examples], dtype=float)


def normalize_dynamic_history(subject_id, observations, observed_time, event) -> DynamicRecord:
    """Build a DynamicRecord, shifting the earliest observation to time 0 when
    a dataset starts its clock later (with a warning)."""
    obs = sorted(((float(s), np.asarray(x, dtype=float)) for s, x in observations),
                 key=lambda p: p[0])
    if obs and obs[0][0] != 0.0:
        warnings.warn(
            f"subject {subject_id!r}: first observation at {obs[0][0]}, shifting to 0",
            stacklevel=2,
        )
        obs[0] = (0.0, obs[0][1])
    return DynamicRecord(subject_id, tuple(obs), float(observed_time), bool(event))
