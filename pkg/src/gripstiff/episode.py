"""The Episode record shared by the simulator, dataset and trainer."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

SAMPLES = 200
CHANNELS = 12
ACCEL_CHANNELS = (0, 1, 2, 6, 7, 8)
GYRO_CHANNELS = (3, 4, 5, 9, 10, 11)
CHANNEL_NAMES = tuple(
    f"f{finger}_{kind}_{axis}"
    for finger in (1, 2)
    for kind in ("acc", "gyro")
    for axis in "xyz"
)


class Shape(enum.IntEnum):
    BALL = 0
    BOX = 1
    CYLINDER = 2

    @classmethod
    def parse(cls, name: "str | Shape") -> "Shape":
        if isinstance(name, Shape):
            return name
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown shape {name!r}; expected one of ball, box, cylinder") from None


class Provenance(enum.IntEnum):
    SIM = 0
    SHIFTED_SIM = 1
    EXTERNAL_REAL = 2


@dataclass(frozen=True, eq=False)
class Episode:
    """One squeeze-and-release recording.

    ``signal`` is time-major: row t holds the 12 IMU channels (finger-1 accel
    xyz, gyro xyz, then finger 2) at sample t.
    """

    signal: np.ndarray
    stiffness_label: float
    shape: Shape
    provenance: Provenance = Provenance.SIM
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        if sig.shape != (SAMPLES, CHANNELS):
            raise ShapeError(f"episode signal must be {SAMPLES}x{CHANNELS}, got {sig.shape}")
        if not self.stiffness_label > 0:
            raise ConfigError(f"stiffness label must be positive, got {self.stiffness_label}")
        sig.setflags(write=False)
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "stiffness_label", float(self.stiffness_label))
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        object.__setattr__(self, "seed", int(self.seed))

    def replace(self, **changes) -> "Episode":
        values = dict(signal=self.signal, stiffness_label=self.stiffness_label, shape=self.shape,
                      provenance=self.provenance, seed=self.seed, meta=dict(self.meta))
        values.update(changes)
        return Episode(**values)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.stiffness_label == other.stiffness_label
            and self.shape == other.shape
            and self.provenance == other.provenance
            and self.seed == other.seed
            and np.array_equal(self.signal, other.signal)
        )

    __hash__ = None
