"""Episode collections: persistence, standardization, folds, noise and mixing."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .episode import (
    ACCEL_CHANNELS, CHANNELS, GYRO_CHANNELS, SAMPLES, Episode, Provenance, Shape,
)
from .errors import ConfigError, DegenerateInputError, ParseError, StateError, VersionError

STD_FLOOR = 1e-8
SGDS_MAGIC = b"SGDS"
SGDS_VERSION = 1
_EPISODE_HEAD = struct.Struct("<BBdQ")
_EPISODE_BYTES = _EPISODE_HEAD.size + 8 * SAMPLES * CHANNELS


def stiffness_from_force_displacement(f1: float, f2: float, d1: float, d2: float) -> float:
    """Stiffness from two force readings and the matching deformations, N/m."""
    dd = abs(d1 - d2)
    if dd == 0:
        raise DegenerateInputError("d1 == d2: displacement difference is zero")
    return abs(f1 - f2) / dd


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std plus the fingerprint of the data they came from."""

    mean: np.ndarray
    std: np.ndarray
    source: str = ""

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (CHANNELS,) or std.shape != (CHANNELS,):
            raise ConfigError(f"channel stats must be {CHANNELS}-vectors")
        if not np.all(std > 0):
            raise ConfigError("channel std must be > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), d.get("source", ""))


@dataclass(frozen=True, eq=False)
class Dataset:
    episodes: tuple = ()
    stats: ChannelStats | None = None
    _signals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        for ep in self.episodes:
            if not isinstance(ep, Episode):
                raise ConfigError("datasets hold Episode objects only")

    def __len__(self):
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def __getitem__(self, i):
        return self.episodes[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.episodes == other.episodes and (
            (self.stats is None) == (other.stats is None)
        )

    __hash__ = None

    @property
    def standardized(self) -> bool:
        return self.stats is not None

    def signals(self) -> np.ndarray:
        """All signals stacked as [N, 200, 12] (cached, read-only)."""
        if self._signals is None:
            arr = (np.stack([e.signal for e in self.episodes]) if self.episodes
                   else np.zeros((0, SAMPLES, CHANNELS)))
            arr.setflags(write=False)
            object.__setattr__(self, "_signals", arr)
        return self._signals

    def labels(self) -> np.ndarray:
        return np.array([e.stiffness_label for e in self.episodes], dtype=np.float64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.episodes[int(i)] for i in indices), self.stats)

    def provenances(self) -> list:
        return [e.provenance for e in self.episodes]

    def keys(self) -> set:
        """Identity keys used to check that partitions are disjoint."""
        return {(int(e.provenance), e.seed, e.stiffness_label, int(e.shape)) for e in self.episodes}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for e in self.episodes:
            h.update(_EPISODE_HEAD.pack(int(e.provenance), int(e.shape), e.stiffness_label, e.seed))
            h.update(np.ascontiguousarray(e.signal, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def __add__(self, other: "Dataset") -> "Dataset":
        if self.standardized or other.standardized:
            raise StateError("cannot concatenate standardized datasets")
        return Dataset(self.episodes + other.episodes)


def compute_stats(ds: Dataset) -> ChannelStats:
    """Per-channel mean and std pooled over every episode and time step."""
    if len(ds) == 0:
        raise ConfigError("cannot compute statistics of an empty dataset")
    if ds.standardized:
        raise StateError("dataset is already standardized")
    flat = ds.signals().reshape(-1, CHANNELS)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < STD_FLOOR, STD_FLOOR, std)
    return ChannelStats(mean, std, ds.fingerprint())


def standardize(ds: Dataset, stats: ChannelStats) -> Dataset:
    """Z-score every channel with ``stats``; labels are left untouched."""
    if ds.standardized:
        raise StateError("dataset is already standardized")
    if len(ds) == 0:
        return Dataset((), stats)
    z = (ds.signals() - stats.mean) / stats.std
    episodes = tuple(ep.replace(signal=z[i]) for i, ep in enumerate(ds.episodes))
    return Dataset(episodes, stats)


def z_score_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Raw pooled mean/std of a dataset regardless of its standardized flag."""
    flat = ds.signals().reshape(-1, CHANNELS)
    return flat.mean(axis=0), flat.std(axis=0)


@dataclass(frozen=True)
class FoldPlan:
    fold_assignments: np.ndarray
    k: int
    seed: int

    def validation_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments != fold)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.fold_assignments == f)) for f in range(self.k)]


def kfold_split(n: int, k: int, seed: int) -> FoldPlan:
    """Seeded shuffle, then deal episodes to folds round-robin."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    if n < k:
        raise ConfigError(f"cannot split {n} episodes into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k
    return FoldPlan(assignment, k, seed)


def add_gaussian_noise(ep: Episode, std_accel: float = 0.7, std_gyro: float = 0.06, seed: int = 0) -> Episode:
    """Zero-mean Gaussian noise on accelerometer and gyroscope channels."""
    if std_accel < 0 or std_gyro < 0:
        raise ConfigError("noise standard deviations must be >= 0")
    if ep.provenance is not Provenance.SIM or ep.meta.get("noised"):
        raise StateError("noise is only added to clean simulated episodes")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((SAMPLES, CHANNELS))
    scale = np.zeros(CHANNELS)
    scale[list(ACCEL_CHANNELS)] = std_accel
    scale[list(GYRO_CHANNELS)] = std_gyro
    signal = ep.signal + noise * scale
    return ep.replace(signal=signal, meta={**ep.meta, "noised": True})


def add_noise(ds: Dataset, std_accel: float = 0.7, std_gyro: float = 0.06, seed: int = 0) -> Dataset:
    if ds.standardized:
        raise StateError("add noise before standardizing")
    seeds = np.random.SeedSequence(seed).generate_state(max(len(ds), 1), dtype=np.uint64)
    return Dataset(tuple(add_gaussian_noise(ep, std_accel, std_gyro, int(s))
                         for ep, s in zip(ds.episodes, seeds)))


def mix_datasets(sim: Dataset, real: Dataset, n_real: int, seed: int) -> Dataset:
    """``sim`` plus ``n_real`` episodes drawn without replacement from ``real``."""
    if sim.standardized or real.standardized:
        raise StateError("mix datasets before standardizing")
    if n_real < 0 or n_real > len(real):
        raise ConfigError(f"n_real must lie in [0, {len(real)}], got {n_real}")
    pick = np.sort(np.random.default_rng(seed).choice(len(real), size=n_real, replace=False))
    return Dataset(sim.episodes + tuple(real.episodes[int(i)] for i in pick))


# -- SGDS binary container ----------------------------------------------------

def encode_dataset(ds: Dataset) -> bytes:
    """Serialize to the SGDS layout documented in the README."""
    if ds.standardized:
        raise StateError("SGDS stores raw signals; save the dataset before standardizing")
    parts = [SGDS_MAGIC, struct.pack("<HI", SGDS_VERSION, len(ds))]
    for ep in ds.episodes:
        parts.append(_EPISODE_HEAD.pack(int(ep.provenance), int(ep.shape), ep.stiffness_label, ep.seed))
        parts.append(np.ascontiguousarray(ep.signal, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes, path=None) -> Dataset:
    if len(data) < 4 or data[:4] != SGDS_MAGIC:
        raise ParseError("not an SGDS file (bad magic)", offset=0, path=path)
    if len(data) < 10:
        raise ParseError("truncated SGDS header", offset=len(data), path=path)
    version, count = struct.unpack_from("<HI", data, 4)
    if version != SGDS_VERSION:
        raise VersionError(f"unsupported SGDS version {version}", offset=4, path=path)
    pos = 10
    expected = pos + count * _EPISODE_BYTES
    if len(data) < expected:
        missing_at = pos + ((len(data) - pos) // _EPISODE_BYTES) * _EPISODE_BYTES
        raise ParseError(f"truncated SGDS body: header declares {count} episodes",
                         offset=missing_at, path=path)
    if len(data) > expected:
        raise ParseError("trailing bytes after last episode", offset=expected, path=path)
    episodes = []
    for i in range(count):
        prov, shape, label, seed = _EPISODE_HEAD.unpack_from(data, pos)
        try:
            prov_e = Provenance(prov)
            shape_e = Shape(shape)
        except ValueError:
            raise ParseError(f"episode {i}: invalid provenance/shape code", offset=pos, path=path) from None
        if not (label > 0 and math.isfinite(label)):
            raise ParseError(f"episode {i}: invalid stiffness label {label}", offset=pos + 2, path=path)
        sig = np.frombuffer(data, dtype="<f8", count=SAMPLES * CHANNELS,
                            offset=pos + _EPISODE_HEAD.size).reshape(SAMPLES, CHANNELS)
        episodes.append(Episode(sig.astype(np.float64), label, shape_e, prov_e, seed))
        pos += _EPISODE_BYTES
    return Dataset(tuple(episodes))


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path) -> Dataset:
    path = Path(path)
    return decode_dataset(path.read_bytes(), path)


# -- External CSV recordings -------------------------------------------------

def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_csv_signals(text: str, path=None) -> list[np.ndarray]:
    """Split a CSV of 12 numeric columns into 200-row episodes.

    A first row that is not entirely numeric is treated as a header.
    Rows/columns in errors are 1-based and count the header line.
    """
    rows = list(csv.reader(io.StringIO(text)))
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    start = 0
    if rows and not all(_is_number(c) for c in rows[0]):
        start = 1
    values = []
    for r in range(start, len(rows)):
        row = rows[r]
        if len(row) != CHANNELS:
            raise ParseError(f"expected {CHANNELS} columns, found {len(row)}", row=r + 1,
                             column=min(len(row), CHANNELS) + 1, path=path)
        out = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=r + 1, column=c + 1, path=path) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite cell {cell!r}", row=r + 1, column=c + 1, path=path)
            out.append(v)
        values.append(out)
    n = len(values)
    if n == 0 or n % SAMPLES:
        raise ParseError(f"found {n} data rows; episodes must be exactly {SAMPLES} rows",
                         row=start + n + 1, path=path)
    arr = np.array(values, dtype=np.float64)
    return [arr[i:i + SAMPLES] for i in range(0, n, SAMPLES)]


def _norm(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def read_label_file(path) -> dict[str, float]:
    """Sidecar lines ``<name>,<stiffness N/m>``; blank lines and # comments skipped."""
    labels = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.rsplit(",", 1)]
        if len(parts) != 2:
            raise ParseError("expected '<name>,<stiffness>'", row=lineno, path=path)
        try:
            k = float(parts[1])
        except ValueError:
            if lineno == 1:
                continue  # header
            raise ParseError(f"non-numeric stiffness {parts[1]!r}", row=lineno, column=2, path=path) from None
        if not k > 0:
            raise ParseError("stiffness must be > 0", row=lineno, column=2, path=path)
        labels[_norm(parts[0])] = k
    return labels


def label_for(stem: str, labels: dict[str, float]) -> float | None:
    """Longest sidecar name that prefixes the normalized file stem."""
    key = _norm(stem)
    best = None
    for name, k in labels.items():
        if key == name or key.startswith(name + "_"):
            if best is None or len(name) > len(best[0]):
                best = (name, k)
    return None if best is None else best[1]


def import_external_csv(path, label: float | None = None, labels: dict[str, float] | None = None,
                        shape: Shape = Shape.BOX) -> Dataset:
    """Recordings from one CSV file as ExternalReal episodes.

    The stiffness comes from ``label`` or, failing that, from the sidecar
    mapping ``labels`` matched against the file name.
    """
    path = Path(path)
    if label is None:
        label = label_for(path.stem, labels or {})
        if label is None:
            raise ConfigError(f"{path.name}: no stiffness label for object {path.stem!r}")
    signals = parse_csv_signals(path.read_text(), path)
    return Dataset(tuple(Episode(s, label, shape, Provenance.EXTERNAL_REAL, i)
                         for i, s in enumerate(signals)))


def import_csv_directory(directory, label_file, shape: Shape = Shape.BOX) -> Dataset:
    """Every ``*.csv`` under ``directory`` (sorted by name) with sidecar labels."""
    directory = Path(directory)
    labels = read_label_file(label_file)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ConfigError(f"no CSV files in {directory}")
    missing = sorted({f.stem for f in files if label_for(f.stem, labels) is None})
    if missing:
        raise ConfigError("no stiffness label for: " + ", ".join(missing))
    episodes = []
    for f in files:
        for ep in import_external_csv(f, labels=labels, shape=shape).episodes:
            episodes.append(ep.replace(seed=len(episodes)))
    return Dataset(tuple(episodes))


def by_shape(ds: Dataset) -> dict[Shape, Dataset]:
    out: dict[Shape, list] = {}
    for ep in ds.episodes:
        out.setdefault(ep.shape, []).append(ep)
    return {s: Dataset(tuple(v), ds.stats) for s, v in out.items()}


def from_episodes(episodes: Sequence[Episode]) -> Dataset:
    return Dataset(tuple(episodes))
