"""Experiment harness: CSV ingestion, stratified splits, preprocessing,
model runs across grid granularities, IPCW metric reports, Elo/rank
aggregation, and the classification-vs-survival correlation report.

Leakage rules: the grid, the preprocessing transformer, the censoring curve,
the marginal survival curve and the truncation horizon are all computed from
the training split only.
"""

from __future__ import annotations

import csv
import io
import json
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import classify, infer, metrics
from .grid import (DynamicRecord, FeatureOptions, StaticRecord, compute_grid,
                   expand_dynamic, expand_static, feature_matrix, labels)

MISSING_TOKENS = {"", "NA", "NaN", "nan"}


class DataError(ValueError):
    """Unusable input data or configuration contents."""


class ModelError(RuntimeError):
    """A model failed on one experiment cell."""


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class TableSchema:
    names: tuple
    kinds: tuple  # "numeric" | "categorical"


@dataclass(frozen=True)
class RawStaticRow:
    values: tuple  # raw cells: float | str | None
    observed_time: float
    event: bool


@dataclass(frozen=True)
class RawDynamicSubject:
    subject_id: str
    observations: tuple  # (time, raw cell tuple)
    observed_time: float
    event: bool


def _parse_cell(cell: str):
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return None
    try:
        return float(cell)
    except ValueError:
        return cell


def _parse_time(cell: str, row_number: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row_number}: time {cell!r} is not a number") from None
    if not value > 0:
        raise DataError(f"row {row_number}: time must be positive, got {value}")
    return value


def _parse_event(cell: str, row_number: int) -> bool:
    if cell.strip() in {"0", "1"}:
        return cell.strip() == "1"
    raise DataError(f"row {row_number}: event must be 0 or 1, got {cell!r}")


def _detect_schema(names, columns) -> TableSchema:
    kinds = []
    for col in columns:
        non_missing = [v for v in col if v is not None]
        kinds.append("categorical" if any(isinstance(v, str) for v in non_missing)
                     else "numeric")
    return TableSchema(tuple(names), tuple(kinds))


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows[0], rows[1:]


def ingest_static(path):
    """Read a static CSV (feature columns plus `time` and `event`) into raw
    rows and a detected schema."""
    header, body = _read_csv(path)
    if "time" not in header or "event" not in header:
        raise DataError(f"{path}: missing required column 'time' or 'event'")
    t_col = header.index("time")
    e_col = header.index("event")
    feat_idx = [i for i in range(len(header)) if i not in (t_col, e_col)]
    records = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        records.append(RawStaticRow(
            values=tuple(_parse_cell(row[i]) for i in feat_idx),
            observed_time=_parse_time(row[t_col], r),
            event=_parse_event(row[e_col], r),
        ))
    if not records:
        raise DataError(f"{path}: no data rows")
    names = [header[i] for i in feat_idx]
    columns = [[rec.values[j] for rec in records] for j in range(len(names))]
    return records, _detect_schema(names, columns)


def ingest_dynamic(path):
    """Read a long-format dynamic CSV (`id`, `obs_time`, features, `time`,
    `event`), grouping rows by subject and sorting observations in time."""
    header, body = _read_csv(path)
    for required in ("id", "obs_time", "time", "event"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    id_col = header.index("id")
    s_col = header.index("obs_time")
    t_col = header.index("time")
    e_col = header.index("event")
    feat_idx = [i for i in range(len(header)) if i not in (id_col, s_col, t_col, e_col)]
    groups: dict = {}
    order = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        sid = row[id_col]
        try:
            obs_time = float(row[s_col])
        except ValueError:
            raise DataError(f"row {r}: obs_time {row[s_col]!r} is not a number") from None
        time = _parse_time(row[t_col], r)
        event = _parse_event(row[e_col], r)
        if obs_time > time:
            raise DataError(f"row {r}: observation at {obs_time} is after the observed time {time}")
        cells = tuple(_parse_cell(row[i]) for i in feat_idx)
        if sid not in groups:
            groups[sid] = {"obs": [], "time": time, "event": event}
            order.append(sid)
        else:
            if groups[sid]["time"] != time or groups[sid]["event"] != event:
                raise DataError(f"row {r}: subject {sid!r} has inconsistent time/event")
        groups[sid]["obs"].append((obs_time, cells))
    if not order:
        raise DataError(f"{path}: no data rows")
    subjects = []
    for sid in order:
        g = groups[sid]
        obs = sorted(g["obs"], key=lambda p: p[0])
        if obs[0][0] != 0.0:
            obs[0] = (0.0, obs[0][1])
        times = [s for s, _ in obs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError(f"subject {sid!r}: duplicate observation times")
        subjects.append(RawDynamicSubject(sid, tuple(obs), g["time"], g["event"]))
    names = [header[i] for i in feat_idx]
    columns = [[cells[j] for sub in subjects for _, cells in sub.observations]
               for j in range(len(names))]
    return subjects, _detect_schema(names, columns)


# ---------------------------------------------------------------------------
# splits and preprocessing


def split_stratified(records, ratios, seed: int):
    """Shuffle events and censored subjects separately and allocate them to
    the three splits by largest-remainder rounding.  Returns sorted index
    arrays (train, validation, test)."""
    if not records:
        raise DataError("no records to split")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError("split ratios must be three nonnegative numbers summing to 1")
    events = np.array([r.event for r in records], dtype=bool)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 0))))
    splits = [[], [], []]
    for mask in (events, ~events):
        idx = rng.permutation(np.where(mask)[0])
        counts = _largest_remainder(idx.size, ratios)
        start = 0
        for s, c in enumerate(counts):
            splits[s].extend(idx[start:start + c])
            start += c
    return tuple(np.array(sorted(s), dtype=int) for s in splits)


def _largest_remainder(n: int, ratios) -> list:
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for i in np.argsort([-r for r in remainders], kind="stable")[: n - sum(counts)]:
        counts[i] += 1
    return counts


class Preprocessor:
    """One-hot encoding and imputation fit on the training split only.

    Unseen categories at apply time map to all-zero dummy columns; missing
    numerics take the training mean, missing categoricals the training mode.
    """

    def __init__(self, schema: TableSchema):
        self.schema = schema
        self.means_ = {}
        self.vocab_ = {}
        self.modes_ = {}

    def fit(self, raw_rows):
        for j, (name, kind) in enumerate(zip(self.schema.names, self.schema.kinds)):
            column = [row[j] for row in raw_rows]
            present = [v for v in column if v is not None]
            if kind == "numeric":
                if not present:
                    raise DataError(f"column {name!r}: all values missing in the training split")
                self.means_[j] = float(np.mean(np.asarray(present, dtype=float)))
            else:
                values, counts = np.unique(np.asarray([str(v) for v in present]),
                                           return_counts=True)
                self.vocab_[j] = tuple(values)
                self.modes_[j] = str(values[np.argmax(counts)]) if present else None
        return self

    def apply(self, raw_rows) -> np.ndarray:
        width = sum(1 if kind == "numeric" else len(self.vocab_[j])
                    for j, kind in enumerate(self.schema.kinds))
        out = np.zeros((len(raw_rows), width))
        for i, row in enumerate(raw_rows):
            c = 0
            for j, kind in enumerate(self.schema.kinds):
                v = row[j]
                if kind == "numeric":
                    out[i, c] = self.means_[j] if v is None else float(v)
                    c += 1
                else:
                    vocab = self.vocab_[j]
                    if v is None:
                        v = self.modes_[j]
                    if v is not None:
                        v = str(v)
                        if v in vocab:
                            out[i, c + vocab.index(v)] = 1.0
                    c += len(vocab)
        return out


def preprocess_fit(raw_rows, schema: TableSchema) -> Preprocessor:
    cells = [r.values for r in raw_rows]
    return Preprocessor(schema).fit(cells)


def preprocess_apply(transformer: Preprocessor, raw_rows) -> np.ndarray:
    return transformer.apply([r.values for r in raw_rows])


def _static_records(transformer, raw_rows):
    matrix = preprocess_apply(transformer, raw_rows)
    return [StaticRecord(matrix[i], r.observed_time, r.event)
            for i, r in enumerate(raw_rows)]


def _dynamic_records(transformer, subjects):
    records = []
    for sub in subjects:
        cells = transformer.apply([obs for _, obs in sub.observations])
        obs = tuple((s, cells[i]) for i, (s, _) in enumerate(sub.observations))
        records.append(DynamicRecord(sub.subject_id, obs, sub.observed_time, sub.event))
    return records


def validate_dataset(test_records, grid, censor_g: metrics.StepFunction):
    """Usability filters for an evaluation split: enough distinct test
    events, and positive censoring support at every evaluated boundary."""
    reasons = []
    event_times = {r.observed_time for r in test_records if r.event}
    if len(event_times) < 2:
        reasons.append("fewer than two unique event times in the test split")
    for t in grid.boundaries:
        if censor_g.value(t) <= 0.0:
            reasons.append(f"no censoring support at boundary t={t:g}")
            break
    return (not reasons), tuple(reasons)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple
    setting: str = "static"
    k_values: tuple = (4, 5, 10, 15, 20)
    models: tuple = ("logistic", "stumps", "frequency")
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    subsample_caps: dict = field(default_factory=dict)
    feature_options: FeatureOptions | None = None
    eval_origins: tuple | None = None
    out_dir: str = "results"
    external_timeout: float = 300.0

    EXTERNAL_DEFAULT_CAP = 10_000

    def __post_init__(self):
        if self.setting not in ("static", "dynamic"):
            raise DataError(f"unknown setting {self.setting!r}")
        if not self.datasets:
            raise DataError("no datasets configured")
        if any(k < 2 for k in self.k_values):
            raise DataError("K values must be >= 2")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise DataError("split ratios must sum to 1")
        for m in self.models:
            parse_model(m)
            if self.setting == "dynamic" and parse_model(m).hazard:
                raise DataError("hazard-mode models are static-only")

    def cap_for(self, model_name: str):
        if model_name in self.subsample_caps:
            return self.subsample_caps[model_name]
        if parse_model(model_name).family == "external":
            return self.EXTERNAL_DEFAULT_CAP
        return None

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        known = {"datasets", "setting", "k_values", "models", "split", "seed",
                 "subsample_caps", "feature_options", "eval_origins", "out_dir",
                 "external_timeout"}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("datasets", "k_values", "models", "split", "eval_origins"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("feature_options") is not None:
            kwargs["feature_options"] = FeatureOptions(**kwargs["feature_options"])
        return ExperimentConfig(**kwargs)

    def canonical_json(self) -> str:
        data = {
            "datasets": list(self.datasets),
            "setting": self.setting,
            "k_values": list(self.k_values),
            "models": list(self.models),
            "split": list(self.split),
            "seed": self.seed,
            "subsample_caps": dict(sorted(self.subsample_caps.items())),
            "feature_options": None if self.feature_options is None else {
                "include_time_since_last": self.feature_options.include_time_since_last,
                "include_horizon_index": self.feature_options.include_horizon_index,
            },
            "eval_origins": None if self.eval_origins is None else list(self.eval_origins),
            "out_dir": self.out_dir,
            "external_timeout": self.external_timeout,
        }
        return json.dumps(data, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass(frozen=True)
class ModelSpec:
    name: str
    family: str  # logistic | stumps | frequency | external
    hazard: bool
    command: str | None = None


def parse_model(name: str) -> ModelSpec:
    hazard = False
    base = name
    if base.startswith("external-hazard:"):
        return ModelSpec(name, "external", True, base.split(":", 1)[1])
    if base.startswith("external:"):
        return ModelSpec(name, "external", False, base.split(":", 1)[1])
    if base.endswith("-hazard"):
        hazard = True
        base = base[: -len("-hazard")]
    if base not in ("logistic", "stumps", "frequency"):
        raise DataError(f"unknown model {name!r}")
    return ModelSpec(name, base, hazard)


def make_classifier(spec: ModelSpec, config: ExperimentConfig):
    if spec.family == "logistic":
        return classify.LogisticClassifier()
    if spec.family == "stumps":
        return classify.BoostedStumpsClassifier()
    if spec.family == "frequency":
        return classify.FrequencyClassifier()
    return classify.ExternalClassifier(spec.command, timeout=config.external_timeout)


def classification_auc(y, p) -> float:
    """Plain ROC AUC over expanded examples (ties earn half credit)."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    pos = p[y == 1]
    neg = np.sort(p[y == 0])
    if pos.size == 0 or neg.size == 0:
        raise metrics.MetricUndefined("both classes needed for classification AUC")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return float(below.sum() + 0.5 * (upto - below).sum()) / (pos.size * neg.size)


# ---------------------------------------------------------------------------
# results table


class ResultsTable:
    """Per (dataset, model, K, metric) values; undefined cells keep a reason."""

    def __init__(self):
        self.cells = {}

    def set(self, dataset, model, k, metric, value, reason=""):
        self.cells[(dataset, model, int(k), metric)] = (value, reason)

    def get(self, dataset, model, k, metric):
        return self.cells.get((dataset, model, int(k), metric), (None, "missing"))

    def merge(self, other: "ResultsTable"):
        self.cells.update(other.cells)
        return self

    def datasets(self):
        return sorted({key[0] for key in self.cells})

    def models(self):
        return sorted({key[1] for key in self.cells})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dataset", "model", "k", "metric", "value", "reason"])
        for key in sorted(self.cells):
            value, reason = self.cells[key]
            writer.writerow([key[0], key[1], key[2], key[3],
                             "" if value is None else repr(float(value)), reason])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "ResultsTable":
        table = ResultsTable()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["dataset", "model", "k", "metric", "value", "reason"]:
            raise DataError("not a results table CSV")
        for row in reader:
            dataset, model, k, metric, value, reason = row
            table.set(dataset, model, int(k), metric,
                      None if value == "" else float(value), reason)
        return table


# ---------------------------------------------------------------------------
# experiment execution


@dataclass
class _Prepared:
    name: str
    index: int
    train: list
    val: list
    test: list
    censor_g: metrics.StepFunction
    marginal_km: metrics.StepFunction
    t_max: float


def _dataset_name(path: str, index: int, seen: set) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    name = stem if stem not in seen else f"{stem}#{index}"
    seen.add(name)
    return name


def _prepare_dataset(config: ExperimentConfig, index: int, path: str, name: str) -> _Prepared:
    if config.setting == "static":
        rows, schema = ingest_static(path)
    else:
        rows, schema = ingest_dynamic(path)
    tr, va, te = split_stratified(rows, config.split, _derive_seed(config.seed, index, 0, 0))
    train_rows = [rows[i] for i in tr]
    transformer = Preprocessor(schema).fit(
        [r.values for r in train_rows] if config.setting == "static"
        else [obs for r in train_rows for _, obs in r.observations])
    if config.setting == "static":
        build = lambda subset: _static_records(transformer, subset)
    else:
        build = lambda subset: _dynamic_records(transformer, subset)
    train = build(train_rows)
    val = build([rows[i] for i in va])
    test = build([rows[i] for i in te])
    times = np.array([r.observed_time for r in train])
    events = np.array([r.event for r in train])
    return _Prepared(
        name=name, index=index, train=train, val=val, test=test,
        censor_g=metrics.censoring_km(times, events),
        marginal_km=metrics.kaplan_meier(times, events),
        t_max=float(times.max()),
    )


def _derive_seed(seed: int, dataset_index: int, k: int, model_index: int) -> int:
    return int(np.random.SeedSequence((seed, dataset_index, k, model_index))
               .generate_state(1)[0])


def _subsample(examples, cap, seed: int):
    if cap is None or len(examples) <= cap:
        return examples
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    keep = np.sort(rng.choice(len(examples), size=cap, replace=False))
    return [examples[i] for i in keep]


_STATIC_METRICS = ("cindex", "integrated_auc", "ibs", "test_bce", "classification_auc")


def _null_cells(table, name, model, k, metric_names, reason):
    for metric in metric_names:
        table.set(name, model, k, metric, None, reason)


def _classification_cells(table, prep, k, model, clf, test_examples):
    if not test_examples:
        table.set(prep.name, model, k, "test_bce", None, "no observable test labels")
        table.set(prep.name, model, k, "classification_auc", None, "no observable test labels")
        return
    probs = clf.predict_probability(feature_matrix(test_examples))
    y = labels(test_examples)
    table.set(prep.name, model, k, "test_bce",
              float(np.mean(classify.bce_vector(probs, y))))
    try:
        table.set(prep.name, model, k, "classification_auc", classification_auc(y, probs))
    except metrics.MetricUndefined as exc:
        table.set(prep.name, model, k, "classification_auc", None, str(exc))


def _run_static_k(table: ResultsTable, config: ExperimentConfig, prep: _Prepared, k: int):
    event_times = [r.observed_time for r in prep.train if r.event]
    metric_names = _STATIC_METRICS
    if not event_times:
        for m in config.models:
            _null_cells(table, prep.name, m, k, metric_names, "no events in training split")
        return
    grid = compute_grid(event_times, k)
    ok, reasons = validate_dataset(prep.test, grid, prep.censor_g)
    if not ok:
        for m in config.models:
            _null_cells(table, prep.name, m, k, metric_names, "; ".join(reasons))
        return
    expansions = {False: expand_static(prep.train, grid)}
    test_expansions = {False: expand_static(prep.test, grid)}
    test_cov = np.stack([r.covariates for r in prep.test])
    needs_hazard = any(parse_model(m).hazard for m in config.models)
    if needs_hazard:
        expansions[True] = infer.expand_hazard(prep.train, grid)
        test_expansions[True] = infer.expand_hazard(prep.test, grid)
    for mi, model in enumerate(config.models):
        spec = parse_model(model)
        try:
            train_examples = _subsample(expansions[spec.hazard],
                                        config.cap_for(model),
                                        _derive_seed(config.seed, prep.index, k, mi))
            if not train_examples:
                raise ModelError("no observable training labels")
            clf = make_classifier(spec, config)
            clf.fit(feature_matrix(train_examples), labels(train_examples))
            if spec.hazard:
                surv = infer.hazard_survival_matrix(clf, test_cov, grid)
            else:
                surv = infer.survival_matrix(clf, test_cov, grid)
        except (ModelError, classify.ProtocolError, classify.NotFittedError,
                ValueError) as exc:
            _null_cells(table, prep.name, model, k, metric_names, f"model failure: {exc}")
            continue
        risks = np.mean(1.0 - surv, axis=1)
        times = np.array([r.observed_time for r in prep.test])
        events = np.array([r.event for r in prep.test])
        cfg = metrics.MetricConfig(t_max=prep.t_max)
        try:
            table.set(prep.name, model, k, "cindex",
                      metrics.cindex_ipcw(risks, times, events, prep.censor_g, cfg))
        except metrics.MetricUndefined as exc:
            table.set(prep.name, model, k, "cindex", None, str(exc))
        try:
            table.set(prep.name, model, k, "integrated_auc",
                      metrics.integrated_auc(risks, times, events, prep.censor_g,
                                             prep.marginal_km, grid))
        except metrics.MetricUndefined as exc:
            table.set(prep.name, model, k, "integrated_auc", None, str(exc))
        curves = [infer.SurvivalCurve(tuple(grid.boundaries), tuple(row)) for row in surv]
        try:
            briers = [metrics.brier_at_time(curves, times, events, prep.censor_g, t)
                      for t in grid.boundaries]
            table.set(prep.name, model, k, "ibs", metrics.integrated_brier(briers, grid))
        except metrics.MetricUndefined as exc:
            table.set(prep.name, model, k, "ibs", None, str(exc))
        _classification_cells(table, prep, k, model, clf, test_expansions[spec.hazard])


def _dynamic_eval_origins(config: ExperimentConfig, grid) -> tuple:
    if config.eval_origins is not None:
        return tuple(k for k in config.eval_origins if 1 <= k <= grid.k - 2)
    return tuple(range(1, min(3, grid.k - 2) + 1))


def _dynamic_cohort(records, grid, k):
    t_k = grid.time_at(k)
    return [r for r in records if r.observed_time > t_k]


def _dynamic_predictions(clf, records, grid, k, options):
    queries = np.vstack([infer.dynamic_query_matrix(r, grid, k, options) for r in records])
    p = np.asarray(clf.predict_probability(queries), dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ModelError("classifier output outside [0, 1]")
    horizons = grid.k - 1 - k
    surv = np.minimum.accumulate(1.0 - p.reshape(len(records), horizons), axis=1)
    curves = [infer.SurvivalCurve(tuple(grid.boundaries[k:]), tuple(row)) for row in surv]
    risks = np.mean(1.0 - surv, axis=1)
    return risks, curves


def _dynamic_metric_names(origins) -> tuple:
    names = []
    for k in origins:
        names.extend([f"cindex_t{k}", f"integrated_auc_t{k}", f"ibs_t{k}"])
    names.extend(["test_bce", "classification_auc"])
    return tuple(names)


def _run_dynamic_k(table: ResultsTable, config: ExperimentConfig, prep: _Prepared, k: int):
    event_times = [r.observed_time for r in prep.train if r.event]
    if not event_times:
        for m in config.models:
            _null_cells(table, prep.name, m, k, _dynamic_metric_names(()),
                        "no events in training split")
        return
    grid = compute_grid(event_times, k)
    origins = _dynamic_eval_origins(config, grid)
    metric_names = _dynamic_metric_names(origins)
    ok, reasons = validate_dataset(prep.test, grid, prep.censor_g)
    if not ok or not origins:
        reason = "; ".join(reasons) if reasons else "no evaluation origins for this K"
        for m in config.models:
            _null_cells(table, prep.name, m, k, metric_names, reason)
        return
    combos = (config.feature_options,) if config.feature_options is not None \
        else FeatureOptions.all_combinations()
    for mi, model in enumerate(config.models):
        spec = parse_model(model)
        cell_seed = _derive_seed(config.seed, prep.index, k, mi)
        try:
            chosen = _select_feature_options(config, prep, grid, origins, spec,
                                             combos, cell_seed)
            train_examples = _subsample(expand_dynamic(prep.train, grid, chosen),
                                        config.cap_for(model), cell_seed)
            if not train_examples:
                raise ModelError("no observable training labels")
            clf = make_classifier(spec, config)
            clf.fit(feature_matrix(train_examples), labels(train_examples))
            for origin in origins:
                cohort = _dynamic_cohort(prep.test, grid, origin)
                if not cohort:
                    for base in ("cindex", "integrated_auc", "ibs"):
                        table.set(prep.name, model, k, f"{base}_t{origin}", None,
                                  "empty risk set")
                    continue
                risks, curves = _dynamic_predictions(clf, cohort, grid, origin, chosen)
                times = np.array([r.observed_time for r in cohort])
                events = np.array([r.event for r in cohort])
                values = metrics.dynamic_metrics(risks, curves, times, events,
                                                 prep.censor_g, grid, origin)
                for base in ("cindex", "integrated_auc", "ibs"):
                    value = values[base]
                    table.set(prep.name, model, k, f"{base}_t{origin}", value,
                              "" if value is not None else "undefined on this cohort")
            test_examples = expand_dynamic(prep.test, grid, chosen)
            _classification_cells(table, prep, k, model, clf, test_examples)
        except (ModelError, classify.ProtocolError, classify.NotFittedError,
                ValueError) as exc:
            _null_cells(table, prep.name, model, k, metric_names, f"model failure: {exc}")


def _select_feature_options(config, prep, grid, origins, spec, combos, cell_seed):
    """Pick the feature representation by validation concordance (averaged
    over the evaluation origins); the first combo wins ties."""
    if len(combos) == 1:
        return combos[0]
    best = None
    for combo in combos:
        train_examples = _subsample(expand_dynamic(prep.train, grid, combo),
                                    config.cap_for(spec.name), cell_seed)
        if not train_examples:
            continue
        clf = make_classifier(spec, config)
        clf.fit(feature_matrix(train_examples), labels(train_examples))
        scores = []
        for origin in origins:
            cohort = _dynamic_cohort(prep.val, grid, origin)
            if not cohort:
                continue
            risks, curves = _dynamic_predictions(clf, cohort, grid, origin, combo)
            times = np.array([r.observed_time for r in cohort])
            events = np.array([r.event for r in cohort])
            value = metrics.dynamic_metrics(risks, curves, times, events,
                                            prep.censor_g, grid, origin)["cindex"]
            if value is not None:
                scores.append(value)
        score = float(np.mean(scores)) if scores else -np.inf
        if best is None or score > best[0]:
            best = (score, combo)
    if best is None:
        raise ModelError("no observable training labels")
    return best[1]


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ResultsTable:
    """Run every dataset x K x model cell and collect the results table.

    Model failures null out their own cells; data problems (unreadable or
    malformed datasets) abort the run.
    """
    seen: set = set()
    names = [_dataset_name(path, i, seen) for i, path in enumerate(config.datasets)]
    prepared = [_prepare_dataset(config, i, path, names[i])
                for i, path in enumerate(config.datasets)]
    run_k = _run_static_k if config.setting == "static" else _run_dynamic_k
    tasks = [(prep, k) for prep in prepared for k in config.k_values]

    def run_task(args):
        prep, k = args
        part = ResultsTable()
        run_k(part, config, prep, k)
        return part

    table = ResultsTable()
    if jobs <= 1:
        parts = [run_task(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run_task, tasks))
    for part in parts:
        table.merge(part)
    return table


# ---------------------------------------------------------------------------
# reporting


_HIGHER_BETTER = {"cindex": True, "integrated_auc": True, "classification_auc": True,
                  "ibs": False, "test_bce": False}


def _base_metric(metric: str) -> str:
    return metric.split("_t")[0] if "_t" in metric else metric


def aggregate_metric(table: ResultsTable, dataset: str, model: str, base: str):
    """Average a metric over K values (and dynamic origins); None when no
    cell is defined."""
    values = [v for (d, m, _, metric), (v, _) in table.cells.items()
              if d == dataset and m == model and _base_metric(metric) == base
              and v is not None]
    return float(np.mean(values)) if values else None


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.std(x) == 0 or np.std(y) == 0:
        raise metrics.MetricUndefined("correlation needs two varying samples")
    return float(np.corrcoef(x, y)[0, 1])


def report(tables, out_dir: str) -> dict:
    """Aggregate one or more results tables into per-dataset, aggregate and
    correlation CSVs; returns the written paths."""
    merged = ResultsTable()
    for t in tables:
        merged.merge(t)
    if not merged.cells:
        raise DataError("empty results table")
    os.makedirs(out_dir, exist_ok=True)
    datasets = merged.datasets()
    models = merged.models()
    bases = sorted({_base_metric(metric) for (_, _, _, metric) in merged.cells})

    per_dataset = {(d, m, b): aggregate_metric(merged, d, m, b)
                   for d in datasets for m in models for b in bases}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "model", "metric", "value"])
    for d in datasets:
        for m in models:
            for b in bases:
                v = per_dataset[(d, m, b)]
                writer.writerow([d, m, b, "" if v is None else repr(v)])
    paths = {"per_dataset": os.path.join(out_dir, "per_dataset.csv")}
    _write_text(paths["per_dataset"], buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "metric", "mean", "stderr", "n_datasets",
                     "avg_rank", "elo", "note"])
    for b in bases:
        if b not in _HIGHER_BETTER:
            continue
        complete = [d for d in datasets
                    if all(per_dataset[(d, m, b)] is not None for m in models)]
        ranks = elos = None
        if complete and len(models) >= 2:
            score_table = {d: {m: per_dataset[(d, m, b)] for m in models}
                           for d in complete}
            ranks = metrics.average_rank(score_table, _HIGHER_BETTER[b])
            elos = metrics.elo_ratings(score_table, _HIGHER_BETTER[b])
        for m in models:
            values = [per_dataset[(d, m, b)] for d in datasets
                      if per_dataset[(d, m, b)] is not None]
            if not values:
                continue
            mean = float(np.mean(values))
            stderr = float(np.std(values, ddof=1) / np.sqrt(len(values))) \
                if len(values) > 1 else 0.0
            note = "single-dataset" if len(values) == 1 else ""
            writer.writerow([m, b, repr(mean), repr(stderr), len(values),
                             "" if ranks is None else repr(float(ranks[m])),
                             "" if elos is None else repr(float(elos[m])), note])
    paths["aggregate"] = os.path.join(out_dir, "aggregate.csv")
    _write_text(paths["aggregate"], buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x_metric", "y_metric", "pearson_r", "n_points"])
    for x_metric, y_metric in (("test_bce", "ibs"), ("classification_auc", "cindex")):
        points = [(per_dataset[(d, m, x_metric)], per_dataset[(d, m, y_metric)])
                  for d in datasets for m in models
                  if per_dataset.get((d, m, x_metric)) is not None
                  and per_dataset.get((d, m, y_metric)) is not None]
        try:
            r = pearson_r([p[0] for p in points], [p[1] for p in points])
            writer.writerow([x_metric, y_metric, repr(r), len(points)])
        except metrics.MetricUndefined:
            writer.writerow([x_metric, y_metric, "", len(points)])
    paths["correlation"] = os.path.join(out_dir, "correlation.csv")
    _write_text(paths["correlation"], buf.getvalue())
    return paths


def _write_text(path: str, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)
