"""Command-line front end: generate, train, eval, experiment, import.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
64 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import sim
from .dataset import (
    ChannelStats, Dataset, by_shape, from_episodes, import_csv_directory, load_dataset, save_dataset,
    standardize,
)
from .episode import Shape
from .errors import ConfigError, GripstiffError, IntegratorBlowup, ParseError
from .models import ModelKind, ModelSpec, load_model
from .trainer import (
    TrainConfig, evaluate, experiment_arch_compare, experiment_domain_gap,
    experiment_shape_generalization, report_from_outcomes, reports_to_csv, reports_to_json,
    reports_to_long_csv, run_cross_validation, summary_table,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64
OUT_ENV = "GRIPSTIFF_OUT"
EXPERIMENTS = ("arch-compare", "shape-gen", "domain-gap")

log = logging.getLogger("gripstiff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- configuration ------------------------------------------------------------

def default_config() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(resources.files("gripstiff").joinpath("defaults.ini").read_text())
    return cp


def load_config(path=None) -> configparser.ConfigParser:
    """Defaults overlaid with ``path``; unknown sections or keys are rejected."""
    cp = default_config()
    if path is None:
        return cp
    user = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            user.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in user.sections():
        if section == "paths":
            cp.has_section("paths") or cp.add_section("paths")
        elif not cp.has_section(section):
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in user.items(section, raw=True):
            if section != "paths" and not cp.has_option(section, key):
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            cp.set(section, key, value)
    return cp


def _get(cp, section, key, conv):
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{key}: invalid value {raw!r} ({exc})") from None


def _floats(raw: str) -> tuple:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _ints(raw: str) -> tuple:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _field(section, key, make):
    try:
        return make()
    except ConfigError as exc:
        raise ConfigError(f"{section}.{key}: {exc}" if key else f"[{section}] {exc}") from None


def gripper_from(cp) -> sim.GripperConfig:
    values = {k: _get(cp, "gripper", k, int if k == "links_per_finger" else float)
              for k in cp.options("gripper")}
    g = _field("gripper", "", lambda: sim.GripperConfig(**values))
    _field("gripper", "", g.validate)
    return g


def shift_from(cp) -> sim.DomainShift | None:
    if not _get(cp, "shift", "enabled", lambda s: cp.getboolean("shift", "enabled")):
        return None
    return _field("shift", "", lambda: sim.DomainShift(
        _get(cp, "shift", "joint_damping_scale", float),
        _get(cp, "shift", "contact_damping_scale", float),
        _get(cp, "shift", "accel_bias", _floats),
        _get(cp, "shift", "gyro_bias", _floats),
        _get(cp, "shift", "torque_profile_jitter", float),
    ))


def episode_cfg_from(cp) -> sim.EpisodeConfig:
    return _field("episode", "", lambda: sim.EpisodeConfig(
        duration=_get(cp, "episode", "duration", float),
        integration_dt=_get(cp, "episode", "integration_dt", float),
        gravity=_get(cp, "episode", "gravity", float),
        domain_shift=shift_from(cp),
    ))


def train_cfg_from(cp, workers: int = 1) -> TrainConfig:
    return _field("train", "", lambda: TrainConfig(
        learning_rate=_get(cp, "train", "learning_rate", float),
        batch_size=_get(cp, "train", "batch_size", int),
        epochs=_get(cp, "train", "epochs", int),
        k_folds=_get(cp, "train", "k_folds", int),
        seed=_get(cp, "train", "seed", int),
        target_scale=_get(cp, "train", "target_scale", float),
        workers=workers,
    ))


def model_spec_from(cp) -> ModelSpec:
    kind = _field("model", "kind", lambda: ModelKind.parse(cp.get("model", "kind")))
    return ModelSpec(kind, _get(cp, "model", "seed", int))


# flag dest -> (section, key)
FLAG_KEYS = {
    "count": ("dataset", "count"), "shapes": ("dataset", "shapes"),
    "k_min": ("dataset", "k_min"), "k_max": ("dataset", "k_max"),
    "data_seed": ("dataset", "seed"), "shift": ("shift", "enabled"),
    "model": ("model", "kind"), "model_seed": ("model", "seed"),
    "lr": ("train", "learning_rate"), "batch_size": ("train", "batch_size"),
    "epochs": ("train", "epochs"), "folds": ("train", "k_folds"), "seed": ("train", "seed"),
    "schedule": ("experiment", "schedule"),
    "data": ("paths", "data"), "test": ("paths", "test"), "sim": ("paths", "sim"),
    "shifted": ("paths", "shifted"), "checkpoint": ("paths", "checkpoint"),
    "csv_dir": ("paths", "csv_dir"), "labels": ("paths", "labels"),
}


def resolve(args) -> configparser.ConfigParser:
    cp = load_config(args.config)
    if not cp.has_section("paths"):
        cp.add_section("paths")
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        cp.set(section, key, str(value))
    return cp


def write_resolved(cp, out: Path) -> None:
    with open(out / "resolved_config.ini", "w") as fh:
        cp.write(fh)


def output_dir(args) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or "runs"
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _path(cp, key, required=True) -> Path | None:
    raw = cp.get("paths", key, fallback="").strip()
    if not raw:
        if required:
            raise ConfigError(f"missing dataset path: paths.{key} (--{key.replace('_', '-')})")
        return None
    p = Path(raw)
    if not p.exists():
        raise ConfigError(f"paths.{key}: file not found: {p}")
    return p


# -- commands -----------------------------------------------------------------

def cmd_generate(args, cp, out: Path) -> int:
    gripper = gripper_from(cp)
    ecfg = episode_cfg_from(cp)
    count = _get(cp, "dataset", "count", int)
    if count < 1:
        raise ConfigError("dataset.count: must be >= 1")
    shapes = _field("dataset", "shapes", lambda: tuple(
        Shape.parse(s.strip()) for s in cp.get("dataset", "shapes").split(",") if s.strip()))
    if not shapes:
        raise ConfigError("dataset.shapes: empty shape set")
    k_range = (_get(cp, "dataset", "k_min", float), _get(cp, "dataset", "k_max", float))
    seed = _get(cp, "dataset", "seed", int)
    jitter = _get(cp, "dataset", "position_jitter", float)
    episodes = _field("dataset", "", lambda: sim.generate_dataset(
        gripper, count, k_range, shapes, ecfg, seed, position_jitter=jitter, workers=args.workers))
    ds = from_episodes(episodes)
    target = out / args.output
    save_dataset(ds, target)
    manifest = {
        "file": target.name, "count": len(ds), "stiffness_range": list(k_range),
        "shapes": [s.name.lower() for s in shapes], "seed": seed,
        "per_shape": {s.name.lower(): len(d) for s, d in by_shape(ds).items()},
        "domain_shift": None if ecfg.domain_shift is None else asdict(ecfg.domain_shift),
        "fingerprint": ds.fingerprint(),
    }
    (out / (Path(args.output).stem + ".manifest.json")).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    write_resolved(cp, out)
    print(f"wrote {len(ds)} episodes to {target}")
    return EXIT_OK


def _load(path: Path) -> Dataset:
    return load_dataset(path)


def cmd_train(args, cp, out: Path) -> int:
    data = _load(_path(cp, "data"))
    test_path = _path(cp, "test", required=False)
    test = {"test": _load(test_path)} if test_path else None
    spec = model_spec_from(cp)
    cfg = train_cfg_from(cp, args.workers)
    outcomes = run_cross_validation(data, test, spec, cfg)
    for o in outcomes:
        o.model().save(out / f"fold{o.fold + 1}.sgnn", {
            "fold": o.fold, "best_epoch": o.best_epoch, "stats": o.stats.to_dict(),
            "validation": {"mae": o.val_mae, "mape": o.val_mape},
            "tests": {k: {"mae": v[0], "mape": v[1]} for k, v in o.tests.items()},
            "train_config": asdict(cfg), "data_fingerprint": data.fingerprint(),
        })
    report = report_from_outcomes(outcomes)
    (out / "report.json").write_text(reports_to_json({"train": report}))
    (out / "report.csv").write_text(reports_to_csv("train", {spec.kind.value: report}))
    write_resolved(cp, out)
    print(f"{spec.kind.value}: MAE {report.mean_mae:.1f} +/- {report.std_mae:.1f} N/m, "
          f"MAPE {report.mean_mape:.2f} +/- {report.std_mape:.2f} %")
    return EXIT_OK


def cmd_eval(args, cp, out: Path) -> int:
    ckpt = _path(cp, "checkpoint")
    data = _load(_path(cp, "data"))
    model, header = load_model(ckpt)
    if args.model is not None and ModelKind.parse(args.model) is not model.spec.kind:
        raise ConfigError(f"checkpoint holds {model.spec.kind.value}, not {ModelKind.parse(args.model).value}")
    if "stats" not in header:
        raise ConfigError(f"{ckpt}: checkpoint has no standardization statistics")
    if len(data) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    stats = ChannelStats.from_dict(header["stats"])
    scale = header.get("train_config", {}).get("target_scale", 1000.0)
    mae, mape = evaluate(model, standardize(data, stats), scale)
    result = {"checkpoint": str(ckpt), "episodes": len(data), "mae": mae, "mape": mape}
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    print(f"MAE {mae:.3f} N/m  MAPE {mape:.3f} %")
    return EXIT_OK


def cmd_experiment(args, cp, out: Path) -> int:
    kind = args.kind
    spec = model_spec_from(cp)
    cfg = train_cfg_from(cp, args.workers)
    if kind == "arch-compare":
        reports = experiment_arch_compare(_load(_path(cp, "data")), cfg, spec.seed)
    elif kind == "shape-gen":
        data = _load(_path(cp, "data"))
        tests = by_shape(_load(_path(cp, "test")))
        if len(tests) < 2:
            raise ConfigError("paths.test: shape-gen needs test episodes of several shapes")
        reports = experiment_shape_generalization(data, tests, cfg, spec)
    else:
        schedule = _get(cp, "experiment", "schedule", _ints)
        noise = (_get(cp, "experiment", "noise_accel_std", float),
                 _get(cp, "experiment", "noise_gyro_std", float))
        reports = experiment_domain_gap(_load(_path(cp, "sim")), _load(_path(cp, "shifted")),
                                        _load(_path(cp, "test")), schedule, cfg, spec, noise)
    name = kind.replace("-", "_")
    split = {p: "validation" if kind == "arch-compare" or p == "pooled" else "test" for p in reports}
    (out / f"{name}.json").write_text(reports_to_json(reports))
    (out / f"{name}.csv").write_text(summary_table(reports))
    (out / f"{name}_folds.csv").write_text(reports_to_csv(kind, reports, split))
    (out / f"{name}_long.csv").write_text(reports_to_long_csv(kind, reports))
    write_resolved(cp, out)
    for point, r in reports.items():
        print(f"{point}: MAE {r.mean_mae:.1f} +/- {r.std_mae:.1f}  MAPE {r.mean_mape:.2f} +/- {r.std_mape:.2f}")
    return EXIT_OK


def cmd_import(args, cp, out: Path) -> int:
    ds = import_csv_directory(_path(cp, "csv_dir"), _path(cp, "labels"), Shape.parse(args.shape))
    target = out / args.output
    save_dataset(ds, target)
    write_resolved(cp, out)
    print(f"imported {len(ds)} episodes to {target}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding the shipped defaults")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gripstiff", description="Stiffness estimation from simulated gripper IMU signals.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="simulate a dataset")
    g.add_argument("--count", type=int)
    g.add_argument("--shapes", help="comma-separated subset of ball,box,cylinder")
    g.add_argument("--k-min", type=float)
    g.add_argument("--k-max", type=float)
    g.add_argument("--seed", dest="data_seed", type=int)
    g.add_argument("--shift", action=argparse.BooleanOptionalAction, default=None,
                   help="apply the [shift] domain perturbation")
    g.add_argument("--output", default="dataset.sgds")

    def training_flags(sp):
        sp.add_argument("--model", help="conv, conv-lstm or conv-bilstm")
        sp.add_argument("--model-seed", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--folds", type=int)
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", parents=[common], help="k-fold training on a dataset")
    t.add_argument("--data")
    t.add_argument("--test")
    training_flags(t)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--model", help="expected model kind; mismatch is an error")

    x = sub.add_parser("experiment", parents=[common], help="run an experiment protocol")
    x.add_argument("kind", choices=EXPERIMENTS)
    x.add_argument("--data", help="training set (arch-compare, shape-gen)")
    x.add_argument("--test", help="test set (shape-gen: mixed shapes; domain-gap: shifted)")
    x.add_argument("--sim", help="simulated set (domain-gap)")
    x.add_argument("--shifted", help="shifted training pool (domain-gap)")
    x.add_argument("--schedule", help="comma-separated shifted-episode counts")
    training_flags(x)

    i = sub.add_parser("import", parents=[common], help="import external CSV recordings")
    i.add_argument("--csv-dir")
    i.add_argument("--labels")
    i.add_argument("--shape", default="box")
    i.add_argument("--output", default="external.sgds")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "experiment": cmd_experiment, "import": cmd_import}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cp = resolve(args)
        out = output_dir(args)
        return COMMANDS[args.command](args, cp, out)
    except (IntegratorBlowup, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GripstiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
