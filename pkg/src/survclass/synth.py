"""Synthetic right-censored generators with closed-form ground truth.

Sampling conventions shared by the discrete generators:
  * event times land exactly on grid boundaries, so discretization adds no
    approximation error to the tabulated truth;
  * censoring times land strictly inside intervals (at midpoints);
  * events or censorings falling beyond the last boundary are materialized
    at ``horizon_time`` (last boundary + 1) so records keep finite times;
    labels at grid boundaries are unaffected.

Randomness: every subject draws from its own Philox stream seeded with
``SeedSequence((seed, subject_index))``, so generation is reproducible and
can be parallelized over subjects without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DynamicRecord, StaticRecord


def subject_rng(seed: int, index: int) -> np.random.Generator:
    """The per-subject random stream (Philox keyed by (seed, index))."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))


def _validate_censor_dist(censor_dist, n_intervals: int):
    c = np.asarray(censor_dist, dtype=float)
    if c.shape != (n_intervals,):
        raise ValueError("censor_dist needs one probability per interval")
    if np.any(c < 0) or c.sum() > 1.0 + 1e-12:
        raise ValueError("censoring probabilities must be nonnegative and sum to <= 1")
    return c


@dataclass(frozen=True)
class DiscreteTruth:
    """Finite-support truth table: covariate rows, per-row event CDF at the
    boundaries (F < 1 means mass beyond the horizon), and per-interval
    censoring probabilities (independent of the event given the row)."""

    support: tuple
    boundaries: tuple
    cdf_table: tuple
    censor_dist: tuple

    def __post_init__(self):
        if not self.support:
            raise ValueError("empty support")
        if len(self.cdf_table) != len(self.support):
            raise ValueError("need one CDF row per support row")
        m = len(self.boundaries)
        for row in self.cdf_table:
            r = np.asarray(row, dtype=float)
            if r.shape != (m,):
                raise ValueError("CDF rows must cover every boundary")
            if np.any(r < 0) or np.any(r > 1) or np.any(np.diff(r) < 0):
                raise ValueError("CDF rows must be nondecreasing within [0, 1]")
        _validate_censor_dist(self.censor_dist, m)

    @property
    def horizon_time(self) -> float:
        return self.boundaries[-1] + 1.0

    def censor_times(self) -> np.ndarray:
        """Interval midpoints where censoring mass is placed."""
        b = np.concatenate(([0.0], np.asarray(self.boundaries, dtype=float)))
        return (b[:-1] + b[1:]) / 2.0


def _draw_event_time(u: float, cdf_row, boundaries, horizon_time: float) -> float:
    for f, t in zip(cdf_row, boundaries):
        if u <= f:
            return t
    return horizon_time


def _draw_censor_time(u: float, censor_dist, censor_times) -> float:
    cum = 0.0
    for c, t in zip(censor_dist, censor_times):
        cum += c
        if u <= cum:
            return t
    return np.inf


def gen_discrete(truth: DiscreteTruth, n: int, seed: int):
    """n i.i.d. records: covariates uniform over the support, event time from
    the row's CDF, censoring drawn independently."""
    support = [np.asarray(row, dtype=float) for row in truth.support]
    censor_times = truth.censor_times()
    horizon = truth.horizon_time
    records = []
    for i in range(n):
        rng = subject_rng(seed, i)
        cell = int(rng.random() * len(support))
        t_event = _draw_event_time(rng.random(), truth.cdf_table[cell],
                                   truth.boundaries, horizon)
        t_censor = _draw_censor_time(rng.random(), truth.censor_dist, censor_times)
        observed = min(t_event, t_censor)
        records.append(StaticRecord(support[cell], float(observed), t_event <= t_censor))
    return records


def true_survival(truth: DiscreteTruth, x, k: int) -> float:
    """Tabulated S(t_k | x) = 1 - F(t_k | x)."""
    x = np.asarray(x, dtype=float)
    for row, cdf in zip(truth.support, truth.cdf_table):
        if np.array_equal(np.asarray(row, dtype=float), x):
            return 1.0 - float(cdf[k - 1])
    raise ValueError("covariate row not in the truth support")


@dataclass(frozen=True)
class WeibullTruth:
    """Smooth generator: T Weibull with scale exp(-x.beta/shape), censoring
    exponential with the given rate, independent of T."""

    coefficients: tuple
    shape: float
    censor_rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.censor_rate <= 0:
            raise ValueError("shape and censor_rate must be positive")


def gen_weibull(truth: WeibullTruth, n: int, d: int, seed: int):
    beta = np.asarray(truth.coefficients, dtype=float)
    if beta.shape != (d,):
        raise ValueError(f"coefficients must have length d={d}")
    records = []
    for i in range(n):
        rng = subject_rng(seed, i)
        x = rng.standard_normal(d)
        scale = np.exp(-float(x @ beta) / truth.shape)
        t_event = scale * (-np.log1p(-rng.random())) ** (1.0 / truth.shape)
        t_censor = -np.log1p(-rng.random()) / truth.censor_rate
        observed = min(t_event, t_censor)
        records.append(StaticRecord(x, float(observed), bool(t_event <= t_censor)))
    return records


@dataclass(frozen=True)
class DynamicTruth:
    """Two-level dynamic truth: a latent state drives a deterministic
    covariate trajectory observed at fixed times and per-interval conditional
    event probabilities, with censoring independent given the state.

    ``hazard_table[s][k-1]`` is P(T = t_k | T > t_{k-1}, state s); the exact
    conditional survival is the product of the complements.
    """

    boundaries: tuple
    state_probs: tuple
    obs_times: tuple
    obs_values: tuple  # per state: tuple of covariate vectors, one per obs time
    hazard_table: tuple
    censor_dist: tuple

    def __post_init__(self):
        if abs(sum(self.state_probs) - 1.0) > 1e-12:
            raise ValueError("state probabilities must sum to 1")
        if self.obs_times[0] != 0.0:
            raise ValueError("first observation time must be 0")
        if any(b <= a for a, b in zip(self.obs_times, self.obs_times[1:])):
            raise ValueError("observation times must be strictly increasing")
        m = len(self.boundaries)
        if len(self.obs_values) != len(self.state_probs) or \
                len(self.hazard_table) != len(self.state_probs):
            raise ValueError("need observation values and hazards for every state")
        for values in self.obs_values:
            if len(values) != len(self.obs_times):
                raise ValueError("need one covariate vector per observation time")
        for row in self.hazard_table:
            r = np.asarray(row, dtype=float)
            if r.shape != (m,) or np.any(r < 0) or np.any(r > 1):
                raise ValueError("hazard rows must be probabilities per interval")
        _validate_censor_dist(self.censor_dist, m)

    @property
    def horizon_time(self) -> float:
        return self.boundaries[-1] + 1.0

    def censor_times(self) -> np.ndarray:
        b = np.concatenate(([0.0], np.asarray(self.boundaries, dtype=float)))
        return (b[:-1] + b[1:]) / 2.0

    def cdf_row(self, state: int) -> np.ndarray:
        lam = np.asarray(self.hazard_table[state], dtype=float)
        return 1.0 - np.cumprod(1.0 - lam)

    def conditional_survival(self, state: int, k: int, delta: int) -> float:
        """Exact P(T > t_{k+delta} | T > t_k, state)."""
        lam = np.asarray(self.hazard_table[state], dtype=float)
        if not (0 <= k < k + delta <= len(lam)):
            raise ValueError("horizon out of range")
        return float(np.prod(1.0 - lam[k:k + delta]))

    def state_of(self, record: DynamicRecord) -> int:
        baseline = record.observations[0][1]
        for s, values in enumerate(self.obs_values):
            if np.array_equal(np.asarray(values[0], dtype=float), baseline):
                return s
        raise ValueError("record baseline does not match any state")


def static_csv(records) -> str:
    """Records as the static harness schema (features, `time`, `event`)."""
    if not records:
        raise ValueError("no records")
    d = len(records[0].covariates)
    lines = [",".join([f"x{j}" for j in range(d)] + ["time", "event"])]
    for r in records:
        cells = [repr(float(v)) for v in r.covariates]
        cells += [repr(float(r.observed_time)), "1" if r.event else "0"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dynamic_csv(records) -> str:
    """Records as the long-format dynamic schema (`id`, `obs_time`, features,
    `time`, `event`), one row per observation."""
    if not records:
        raise ValueError("no records")
    d = len(records[0].observations[0][1])
    lines = [",".join(["id", "obs_time"] + [f"x{j}" for j in range(d)] + ["time", "event"])]
    for r in records:
        for s, x in r.observations:
            cells = [str(r.subject_id), repr(float(s))]
            cells += [repr(float(v)) for v in x]
            cells += [repr(float(r.observed_time)), "1" if r.event else "0"]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def gen_dynamic(truth: DynamicTruth, n: int, seed: int):
    """n records with state-driven histories plus the exact conditional
    survival oracle on ``truth``.  Draw order per subject matches
    gen_discrete (state, event, censoring), so a single-state dynamic truth
    reproduces the corresponding static generator's (Z, delta) stream."""
    state_cum = np.cumsum(np.asarray(truth.state_probs, dtype=float))
    cdf_rows = [truth.cdf_row(s) for s in range(len(truth.state_probs))]
    value_arrays = [[np.asarray(v, dtype=float) for v in values]
                    for values in truth.obs_values]
    censor_times = truth.censor_times()
    horizon = truth.horizon_time
    records = []
    for i in range(n):
        rng = subject_rng(seed, i)
        state = int(np.searchsorted(state_cum, rng.random(), side="right"))
        t_event = _draw_event_time(rng.random(), cdf_rows[state],
                                   truth.boundaries, horizon)
        t_censor = _draw_censor_time(rng.random(), truth.censor_dist, censor_times)
        observed = float(min(t_event, t_censor))
        obs = tuple((s, value_arrays[state][j])
                    for j, s in enumerate(truth.obs_times) if s <= observed)
        records.append(DynamicRecord(i, obs, observed, t_event <= t_censor))
    return records
