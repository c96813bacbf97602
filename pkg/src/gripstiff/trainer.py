"""K-fold training, MAE/MAPE evaluation and the three experiment protocols."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import (
    ChannelStats, Dataset, add_noise, by_shape, compute_stats, kfold_split, mix_datasets, standardize,
)
from .errors import ConfigError, MetricError, StateError
from .models import Model, ModelKind, ModelSpec, build
from .nn import adam_step, mse_loss

log = logging.getLogger(__name__)

VALIDATION = "validation"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 100
    k_folds: int = 5
    seed: int = 0
    target_scale: float = 1000.0
    workers: int = 1

    def __post_init__(self):
        for name in ("batch_size", "epochs", "k_folds", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if not (self.learning_rate > 0 and self.target_scale > 0):
            raise ConfigError("learning_rate and target_scale must be > 0")


def metrics(pred: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(MAE in label units, MAPE in percent)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.shape != labels.shape or labels.size == 0:
        raise ConfigError("predictions and labels must be non-empty and of equal length")
    if np.any(labels == 0):
        raise MetricError("MAPE is undefined for a zero label")
    err = np.abs(pred - labels)
    return float(err.mean()), float(100.0 * np.mean(err / np.abs(labels)))


def evaluate(model: Model, ds: Dataset, target_scale: float = 1000.0) -> tuple[float, float]:
    """MAE (N/m) and MAPE (%) of ``model`` on a standardized dataset."""
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    if not ds.standardized:
        raise StateError("evaluate expects a dataset standardized with training statistics")
    pred = model.predict(ds.signals()) * target_scale
    return metrics(pred, ds.labels())


@dataclass
class FoldMetrics:
    fold: int
    best_epoch: int
    mae: float
    mape: float


@dataclass
class MetricsReport:
    """Best-epoch metrics per fold with mean and sample standard deviation."""

    per_fold: list = field(default_factory=list)
    tests: dict = field(default_factory=dict)

    def _values(self, attr):
        return np.array([getattr(f, attr) for f in self.per_fold], dtype=np.float64)

    def _std(self, attr):
        v = self._values(attr)
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    @property
    def mean_mae(self) -> float:
        return float(self._values("mae").mean())

    @property
    def std_mae(self) -> float:
        return self._std("mae")

    @property
    def mean_mape(self) -> float:
        return float(self._values("mape").mean())

    @property
    def std_mape(self) -> float:
        return self._std("mape")

    def to_dict(self) -> dict:
        d = {
            "per_fold": [asdict(f) for f in self.per_fold],
            "mean_mae": self.mean_mae, "std_mae": self.std_mae,
            "mean_mape": self.mean_mape, "std_mape": self.std_mape,
        }
        if self.tests:
            d["tests"] = {k: v.to_dict() for k, v in self.tests.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls([FoldMetrics(**f) for f in d["per_fold"]],
                   {k: cls.from_dict(v) for k, v in d.get("tests", {}).items()})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_mape: float
    tests: dict = field(default_factory=dict)


@dataclass
class FoldOutcome:
    fold: int
    best_epoch: int
    val_mae: float
    val_mape: float
    tests: dict  # name -> (mae, mape) at best epoch
    history: list
    best_state: dict = field(repr=False)
    stats: ChannelStats = field(repr=False)
    spec: ModelSpec = field(repr=False)
    optimizer_steps: int = 0
    initial_train_loss: float = float("nan")

    @property
    def train_losses(self) -> list[float]:
        return [h.train_loss for h in self.history]

    def model(self) -> Model:
        m = build(self.spec)
        m.load_state_dict(self.best_state)
        return m


def _as_tests(test) -> dict:
    if test is None:
        return {}
    if isinstance(test, Dataset):
        return {"test": test}
    return dict(test)


def _check_disjoint(parts: Mapping[str, Dataset]):
    seen = {}
    for name, ds in parts.items():
        for key in ds.keys():
            if key in seen and seen[key] != name:
                raise ConfigError(f"partitions {seen[key]!r} and {name!r} share an episode")
            seen[key] = name


def _train_loss(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    pred = model.predict(x, batch_size)
    return float(np.mean((pred - y) ** 2))


def train_fold(train: Dataset, val: Dataset, test=None, spec: ModelSpec = ModelSpec(),
               cfg: TrainConfig = TrainConfig(), fold: int = 0) -> FoldOutcome:
    """Train one model from scratch and keep the epoch with the lowest validation MAPE.

    Partitions are given raw; statistics are computed on ``train`` alone and
    applied to every partition. ``test`` may be a Dataset or a mapping of
    named test sets, each evaluated after every epoch.
    """
    tests = _as_tests(test)
    if len(train) == 0 or len(val) == 0 or any(len(t) == 0 for t in tests.values()):
        raise ConfigError("train, validation and test partitions must be non-empty")
    if train.standardized or val.standardized or any(t.standardized for t in tests.values()):
        raise StateError("train_fold standardizes partitions itself; pass raw datasets")
    _check_disjoint({"train": train, "validation": val, **{f"test:{k}": v for k, v in tests.items()}})

    stats = compute_stats(train)
    tr = standardize(train, stats)
    va = standardize(val, stats)
    te = {k: standardize(v, stats) for k, v in tests.items()}

    model_spec = replace(spec, seed=int(np.random.SeedSequence([spec.seed, fold]).generate_state(1)[0]))
    model = build(model_spec)
    params = list(model.params.values())
    x = tr.signals()
    y = tr.labels() / cfg.target_scale
    n = len(tr)
    rng = np.random.default_rng([cfg.seed, fold])
    initial = _train_loss(model, x, y, max(cfg.batch_size, 256))

    history = []
    best = None
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred = model.forward(x[idx])
            loss, grad = mse_loss(pred, y[idx, None])
            model.backward(grad)
            adam_step(params, cfg.learning_rate)
            steps += 1
            total += loss * idx.size
        val_mae, val_mape = evaluate(model, va, cfg.target_scale)
        rec = EpochRecord(epoch, total / n, val_mae, val_mape,
                          {k: evaluate(model, v, cfg.target_scale) for k, v in te.items()})
        history.append(rec)
        if best is None or val_mape < best[0].val_mape:
            best = (rec, model.state_dict())
        log.debug("fold %d epoch %d loss %.5f val MAPE %.3f", fold, epoch, rec.train_loss, val_mape)
    rec, state = best
    return FoldOutcome(fold, rec.epoch, rec.val_mae, rec.val_mape, dict(rec.tests), history, state,
                       stats, model_spec, steps, initial)


def _fold_job(args):
    ds, plan, fold, tests, spec, cfg = args
    train = ds.subset(plan.train_indices(fold))
    val = ds.subset(plan.validation_indices(fold))
    return train_fold(train, val, tests, spec, cfg, fold)


def run_cross_validation(ds: Dataset, test=None, spec: ModelSpec = ModelSpec(),
                         cfg: TrainConfig = TrainConfig()) -> list[FoldOutcome]:
    """One fresh ``train_fold`` per fold of a seeded k-fold plan, in fold order."""
    if ds.standardized:
        raise StateError("cross_validate expects a raw dataset")
    plan = kfold_split(len(ds), cfg.k_folds, cfg.seed)
    tests = _as_tests(test)
    jobs = [(ds, plan, f, tests, spec, cfg) for f in range(cfg.k_folds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            return list(pool.map(_fold_job, jobs))
    return [_fold_job(j) for j in jobs]


def report_from_outcomes(outcomes: Sequence[FoldOutcome]) -> MetricsReport:
    report = MetricsReport([FoldMetrics(o.fold, o.best_epoch, o.val_mae, o.val_mape) for o in outcomes])
    names = list(outcomes[0].tests) if outcomes else []
    for name in names:
        report.tests[name] = MetricsReport(
            [FoldMetrics(o.fold, o.best_epoch, *o.tests[name]) for o in outcomes])
    return report


def cross_validate(ds: Dataset, test=None, spec: ModelSpec = ModelSpec(),
                   cfg: TrainConfig = TrainConfig()) -> MetricsReport:
    """Validation metrics per fold; test-set metrics, if any, under ``report.tests``."""
    return report_from_outcomes(run_cross_validation(ds, test, spec, cfg))


def experiment_arch_compare(sim_ds: Dataset, cfg: TrainConfig, seed: int = 0,
                            kinds: Sequence[ModelKind] = tuple(ModelKind), arch=None) -> dict[str, MetricsReport]:
    """Cross-validate every architecture on the same folds."""
    out = {}
    for kind in kinds:
        spec = ModelSpec(kind, seed) if arch is None else ModelSpec(kind, seed, arch)
        log.info("arch-compare: %s", spec.kind.value)
        out[spec.kind.value] = cross_validate(sim_ds, None, spec, cfg)
    return out


POOLED = "pooled"


def experiment_shape_generalization(all_shapes: Dataset, per_shape_tests: Mapping, cfg: TrainConfig,
                                    spec: ModelSpec = ModelSpec()) -> dict[str, MetricsReport]:
    """Train on mixed shapes, test on one single-shape set per shape.

    Returns one test report per shape name plus ``"pooled"``: the
    cross-validated metrics on the mixed-shape data itself.
    """
    tests = {}
    for shape, ds in per_shape_tests.items():
        shapes = {e.shape for e in ds.episodes}
        if len(shapes) != 1:
            raise ConfigError(f"test set {shape!r} must contain exactly one shape")
        tests[getattr(shape, "name", str(shape)).lower()] = ds
    report = cross_validate(all_shapes, tests, spec, cfg)
    out = {name: report.tests[name] for name in tests}
    out[POOLED] = MetricsReport(report.per_fold)
    return out


def split_by_shape(ds: Dataset) -> dict:
    return by_shape(ds)


NOISE_ACCEL_STD = 0.7
NOISE_GYRO_STD = 0.06


def experiment_domain_gap(sim_ds: Dataset, shifted_ds: Dataset, test_shifted: Dataset,
                          schedule: Sequence[int], cfg: TrainConfig, spec: ModelSpec = ModelSpec(),
                          noise=(NOISE_ACCEL_STD, NOISE_GYRO_STD)) -> dict[int, MetricsReport]:
    """Sim-to-shifted transfer: point 0 trains on noisy sim, point n on sim plus n shifted episodes.

    Every point is cross-validated and tested on ``test_shifted``; returned
    reports hold the test metrics at each fold's best validation epoch.
    """
    schedule = [int(n) for n in schedule]
    if schedule != sorted(schedule):
        raise ConfigError("schedule must be ascending")
    if shifted_ds.keys() & test_shifted.keys():
        raise ConfigError("shifted test set overlaps the shifted training pool")
    out = {}
    for n in schedule:
        if n == 0:
            train = add_noise(sim_ds, noise[0], noise[1], seed=cfg.seed)
        else:
            train = mix_datasets(sim_ds, shifted_ds, n, seed=cfg.seed)
        log.info("domain-gap: n=%d (%d episodes)", n, len(train))
        report = cross_validate(train, {"test": test_shifted}, spec, cfg)
        out[n] = report.tests["test"]
    return out


# -- report emission ----------------------------------------------------------

CSV_COLUMNS = ("experiment", "point", "split", "fold", "MAE", "MAPE", "best_epoch")


def _fmt(x: float) -> str:
    return repr(float(x))


def table_rows(experiment: str, point: str, report: MetricsReport, split: str = VALIDATION):
    for f in report.per_fold:
        yield (experiment, point, split, f.fold + 1, _fmt(f.mae), _fmt(f.mape), f.best_epoch)


def reports_to_csv(experiment: str, reports: Mapping, split: str | Mapping = VALIDATION) -> str:
    """Flat CSV, one row per fold per experiment point.

    ``split`` labels every point alike, or maps point -> label.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for point, report in reports.items():
        label = split[point] if isinstance(split, Mapping) else split
        w.writerows(table_rows(experiment, str(point), report, label))
        for name, sub in report.tests.items():
            w.writerows(table_rows(experiment, str(point), sub, name))
    return buf.getvalue()


def reports_to_long_csv(experiment: str, reports: Mapping) -> str:
    """Plot-ready long format: experiment, point, fold, metric, value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("experiment", "point", "fold", "metric", "value"))
    for point, report in reports.items():
        for f in report.per_fold:
            w.writerow((experiment, str(point), f.fold + 1, "MAE", _fmt(f.mae)))
            w.writerow((experiment, str(point), f.fold + 1, "MAPE", _fmt(f.mape)))
    return buf.getvalue()


def summary_table(reports: Mapping) -> str:
    """Wide table: one column pair per point, one row per fold, then MEAN/STD DEV."""
    points = list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold"] + [f"{p} {m}" for p in points for m in ("MAE", "MAPE")])
    k = max(len(r.per_fold) for r in reports.values())
    for i in range(k):
        row = [i + 1]
        for p in points:
            f = reports[p].per_fold[i] if i < len(reports[p].per_fold) else None
            row += [f"{f.mae:.1f}", f"{f.mape:.1f}"] if f else ["", ""]
        w.writerow(row)
    w.writerow(["MEAN"] + [v for p in points for v in (f"{reports[p].mean_mae:.1f}", f"{reports[p].mean_mape:.1f}")])
    w.writerow(["STD DEV"] + [v for p in points for v in (f"{reports[p].std_mae:.1f}", f"{reports[p].std_mape:.1f}")])
    return buf.getvalue()


def reports_to_json(reports: Mapping) -> str:
    return json.dumps({str(k): v.to_dict() for k, v in reports.items()}, indent=2, sort_keys=True)


def is_trend_non_increasing(values: Sequence[float], allowed_inversions: int = 1) -> bool:
    inversions = sum(1 for a, b in zip(values, values[1:]) if b > a)
    return inversions <= allowed_inversions and not any(math.isnan(v) for v in values)
