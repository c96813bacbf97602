"""Planar two-finger compliant gripper squeezing a deformable object.

Each finger is a chain of rigid links joined by spring-damper hinges and
driven by a tendon torque applied equally to every hinge. The object is
anchored at its centre and pushes back on any penetrating link with a
one-sided linear spring-damper (penalty contact). Two IMUs, one per finger,
are read at 200 uniform instants over the episode.

Hinge dynamics use a decoupled approximation: hinge i is accelerated by the
torque about it divided by the inertia of its distal sub-chain taken as a
rigid body in the current configuration. Integration is semi-implicit Euler.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _simkernels as K
from .episode import CHANNELS, SAMPLES, Episode, Provenance, Shape
from .errors import ConfigError, DomainError, IntegratorBlowup

RAMP_FRACTION = 0.05


@dataclass(frozen=True)
class GripperConfig:
    links_per_finger: int = 8
    link_length: float = 0.0125  # m
    link_mass: float = 0.02  # kg
    joint_stiffness: float = 0.5  # N m / rad
    joint_damping: float = 0.02  # N m s / rad
    actuation_torque_max: float = 0.15  # N m
    finger_base_separation: float = 0.1  # m
    imu_mount_fraction: float = 0.75

    def __post_init__(self):
        if int(self.links_per_finger) < 1:
            raise ConfigError("links_per_finger must be >= 1")
        for name in ("link_length", "link_mass", "finger_base_separation"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("joint_stiffness", "joint_damping", "actuation_torque_max"):
            if getattr(self, name) < 0 or not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite and >= 0")
        if not 0 < self.imu_mount_fraction <= 1:
            raise ConfigError("imu_mount_fraction must lie in (0, 1]")

    def validate(self) -> None:
        """Strict checks required before generating episodes."""
        if self.links_per_finger < 2:
            raise ConfigError("links_per_finger must be >= 2")
        for name in ("joint_stiffness", "joint_damping", "actuation_torque_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    @property
    def mount(self) -> tuple[int, float]:
        """(link index, distance along that link) of the IMU mount point."""
        pos = self.imu_mount_fraction * self.links_per_finger
        link = min(max(math.ceil(pos) - 1, 0), self.links_per_finger - 1)
        return link, (pos - link) * self.link_length

    @property
    def finger_length(self) -> float:
        return self.links_per_finger * self.link_length


@dataclass(frozen=True)
class ObjectSpec:
    shape: Shape = Shape.BOX
    stiffness: float = 850.0  # N/m
    contact_damping: float = 0.5  # N s / m
    size: float = 0.03  # m, radius or half-extent
    center: tuple[float, float] = (0.0, -0.07)
    # contact patch half-width along a link for the cylinder
    contact_half_width: float = 0.004

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape.parse(self.shape))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not (self.stiffness > 0 and math.isfinite(self.stiffness)):
            raise ConfigError("object stiffness must be finite and > 0")
        if not self.size > 0:
            raise ConfigError("object size must be > 0")
        if self.contact_damping < 0:
            raise ConfigError("contact_damping must be >= 0")

    def check_fits(self, gripper: GripperConfig) -> None:
        gap = 0.5 * gripper.finger_base_separation - abs(self.center[0])
        if self.size >= gap:
            raise ConfigError("object does not fit between the open fingers")


@dataclass(frozen=True)
class DomainShift:
    joint_damping_scale: float = 1.0
    contact_damping_scale: float = 1.0
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    torque_profile_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "accel_bias", tuple(float(b) for b in self.accel_bias))
        object.__setattr__(self, "gyro_bias", tuple(float(b) for b in self.gyro_bias))
        if len(self.accel_bias) != 3 or len(self.gyro_bias) != 3:
            raise ConfigError("biases must be 3-vectors")
        if not (self.joint_damping_scale > 0 and self.contact_damping_scale > 0):
            raise ConfigError("damping scales must be > 0")
        if not 0 <= self.torque_profile_jitter < 1:
            raise ConfigError("torque_profile_jitter must lie in [0, 1)")

    @property
    def is_identity(self) -> bool:
        return self == DomainShift()


IDENTITY_SHIFT = DomainShift()
# Stand-in for the sim-to-real discrepancy; the [shift] section of defaults.ini matches it.
REFERENCE_SHIFT = DomainShift(1.5, 2.0, (0.4, -0.3, 0.2), (0.03, -0.02, 0.02), 0.1)


@dataclass(frozen=True)
class EpisodeConfig:
    duration: float = 2.0
    integration_dt: float = 1e-3
    sample_count: int = SAMPLES
    gravity: float = 9.81
    seed: int = 0
    domain_shift: DomainShift | None = None

    def __post_init__(self):
        if self.sample_count != SAMPLES:
            raise ConfigError(f"sample_count is fixed at {SAMPLES}")
        if not (self.duration > 0 and self.integration_dt > 0):
            raise ConfigError("duration and integration_dt must be > 0")
        steps = self.duration / self.integration_dt
        if abs(steps - round(steps)) > 1e-6 * steps or round(steps) % self.sample_count:
            raise ConfigError("duration / integration_dt must be an integer multiple of sample_count")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.integration_dt))

    @property
    def stride(self) -> int:
        return self.steps // self.sample_count


@dataclass
class GripperState:
    """Hinge angles, rates and accelerations; finger 1 first, then finger 2."""

    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    joint_accelerations: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.joint_angles = np.asarray(self.joint_angles, dtype=np.float64)
        self.joint_velocities = np.asarray(self.joint_velocities, dtype=np.float64)
        self.joint_accelerations = np.asarray(self.joint_accelerations, dtype=np.float64)
        n = self.joint_angles.shape
        if self.joint_velocities.shape != n or self.joint_accelerations.shape != n or len(n) != 1:
            raise ConfigError("state arrays must be 1-D and of equal length")

    @classmethod
    def rest(cls, gripper: GripperConfig) -> "GripperState":
        n = 2 * gripper.links_per_finger
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), 0.0)

    def finger(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.joint_angles.shape[0] // 2
        sl = slice(index * n, (index + 1) * n)
        return self.joint_angles[sl], self.joint_velocities[sl]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.joint_angles)) and np.all(np.isfinite(self.joint_velocities)))


@dataclass(frozen=True)
class ImuFrame:
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class LinkPose:
    """A rigid link as a segment from its proximal to its distal end."""

    start: tuple[float, float]
    end: tuple[float, float]


@dataclass
class EpisodeTrace:
    """An episode plus simulator diagnostics that never leave the sim module."""

    episode: Episode
    max_penetration: float
    bend: np.ndarray = field(repr=False)  # samples x 2, total hinge angle per finger

    @property
    def peak_deflection(self) -> float:
        return float(self.bend[:, 0].max())


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def actuation_profile(t, cfg: EpisodeConfig, gripper: GripperConfig):
    """Tendon torque at time ``t`` (scalar or array).

    Positive (closing) during the first half, negative (opening) during the
    second; every phase boundary is blended with a smoothstep lasting 5% of
    the episode so the torque is continuous.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    T = cfg.duration
    if np.any(t_arr < 0) or np.any(t_arr > T) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"t must lie in [0, {T}]")
    ramp = RAMP_FRACTION * T
    half = 0.5 * T
    closing = _smoothstep(t_arr / ramp) * _smoothstep((half - t_arr) / ramp)
    opening = _smoothstep((t_arr - half) / ramp) * _smoothstep((T - t_arr) / ramp)
    tau = gripper.actuation_torque_max * np.where(t_arr < half, closing, -opening)
    return float(tau) if tau.ndim == 0 else tau


def _shape_code(shape: Shape) -> int:
    return {Shape.BALL: K.BALL, Shape.BOX: K.BOX, Shape.CYLINDER: K.CYLINDER}[Shape(shape)]


def contact_force(link_pose: LinkPose, obj: ObjectSpec, link_velocity) -> tuple[np.ndarray, np.ndarray]:
    """Penalty contact force on one link.

    ``link_velocity`` holds the world velocities of the link's two ends (2x2);
    the velocity of any point on a rigid planar link interpolates linearly
    between them. Returns ``(force, application_point)``. The force is zero
    without penetration and otherwise points along the outward contact normal
    with magnitude ``max(0, k*depth + c*depth_rate)``.
    """
    (sx, sy), (ex, ey) = link_pose.start, link_pose.end
    vel = np.asarray(link_velocity, dtype=np.float64).reshape(2, 2)
    fx, fy, px, py, _ = K.contact_kernel(
        float(sx), float(sy), float(ex), float(ey), vel[0, 0], vel[0, 1], vel[1, 0], vel[1, 1],
        _shape_code(obj.shape), obj.stiffness, obj.contact_damping, obj.size,
        obj.center[0], obj.center[1], obj.contact_half_width)
    return np.array([fx, fy]), np.array([px, py])


def finger_geometry(state: GripperState, gripper: GripperConfig, finger: int):
    """Joint positions (n+1 x 2) and joint velocities (n+1 x 2) of one finger."""
    n = gripper.links_per_finger
    theta, omega = state.finger(finger)
    px, py, vx, vy = (np.empty(n + 1) for _ in range(4))
    ux, uy, wz = (np.empty(n) for _ in range(3))
    sigma = -1.0 if finger == 0 else 1.0
    K.finger_kinematics(np.ascontiguousarray(theta), np.ascontiguousarray(omega),
                        0.5 * sigma * gripper.finger_base_separation, sigma,
                        gripper.link_length, px, py, vx, vy, ux, uy, wz)
    return np.stack([px, py], axis=1), np.stack([vx, vy], axis=1)


def step_dynamics(state: GripperState, gripper: GripperConfig, obj: ObjectSpec | None, torque,
                  dt: float, gravity: float = 9.81, step_index: int = 0) -> GripperState:
    """One semi-implicit Euler step of both fingers.

    ``torque`` is the tendon torque applied at every hinge: a scalar, or one
    value per finger. ``obj=None`` disables contact.
    """
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    if not state.is_finite():
        raise IntegratorBlowup(step_index, "input state is not finite")
    n = gripper.links_per_finger
    if state.joint_angles.shape[0] != 2 * n:
        raise ConfigError(f"state has {state.joint_angles.shape[0]} hinges, gripper has {2 * n}")
    taus = np.broadcast_to(np.asarray(torque, dtype=np.float64), (2,))
    has_obj = obj is not None
    o = obj if has_obj else ObjectSpec()
    theta = np.empty(2 * n)
    omega = np.empty(2 * n)
    alpha = np.empty(2 * n)
    for f in range(2):
        th, om = state.finger(f)
        sigma = -1.0 if f == 0 else 1.0
        sl = slice(f * n, (f + 1) * n)
        K.finger_step(np.ascontiguousarray(th), np.ascontiguousarray(om),
                      0.5 * sigma * gripper.finger_base_separation, sigma,
                      gripper.link_length, gripper.link_mass, gripper.joint_stiffness,
                      gripper.joint_damping, float(taus[f]), _shape_code(o.shape), o.stiffness,
                      o.contact_damping, o.size, o.center[0], o.center[1], o.contact_half_width,
                      has_obj, float(gravity), float(dt), theta[sl], omega[sl], alpha[sl])
    out = GripperState(theta, omega, alpha, state.time + dt)
    if not out.is_finite():
        raise IntegratorBlowup(step_index)
    return out


def imu_readout(state_prev: GripperState, state: GripperState, gripper: GripperConfig, dt: float,
                shift: DomainShift = IDENTITY_SHIFT, gravity: float = 9.81) -> tuple[ImuFrame, ImuFrame]:
    """IMU frames of both fingers at ``state``.

    Linear acceleration is the finite difference of the mount-point velocity
    between the two states; the accelerometer reports specific force (so it
    reads +g upward at rest) in a sensor frame whose x axis runs along the
    link toward the fingertip and whose z axis is out of plane. The gyro z
    axis carries the link's absolute angular rate.
    """
    link, offset = gripper.mount
    frames = []
    out = np.empty(6)
    ab = np.asarray(shift.accel_bias, dtype=np.float64)
    gb = np.asarray(shift.gyro_bias, dtype=np.float64)
    for f in range(2):
        th0, om0 = state_prev.finger(f)
        th1, om1 = state.finger(f)
        sigma = -1.0 if f == 0 else 1.0
        K.imu_kernel(np.ascontiguousarray(th0), np.ascontiguousarray(om0),
                     np.ascontiguousarray(th1), np.ascontiguousarray(om1),
                     0.5 * sigma * gripper.finger_base_separation, sigma, gripper.link_length,
                     link, offset, float(gravity), float(dt), ab, gb, out)
        frames.append(ImuFrame(out[:3].copy(), out[3:].copy()))
    return frames[0], frames[1]


def _torque_scales(shift: DomainShift | None, seed: int) -> np.ndarray:
    if shift is None or shift.torque_profile_jitter == 0:
        return np.ones(2)
    rng = np.random.default_rng(seed)
    return 1.0 + shift.torque_profile_jitter * rng.uniform(-1.0, 1.0, size=2)


def run_episode(gripper: GripperConfig, obj: ObjectSpec, cfg: EpisodeConfig) -> EpisodeTrace:
    """Simulate one episode and keep the physical diagnostics."""
    gripper.validate()
    obj.check_fits(gripper)
    shift = cfg.domain_shift
    g = gripper
    o = obj
    if shift is not None and not shift.is_identity:
        g = replace(gripper, joint_damping=gripper.joint_damping * shift.joint_damping_scale)
        o = replace(obj, contact_damping=obj.contact_damping * shift.contact_damping_scale)
    eff = shift or IDENTITY_SHIFT
    times = np.arange(cfg.steps) * cfg.integration_dt
    torques = actuation_profile(np.minimum(times, cfg.duration), cfg, g)
    link, offset = g.mount
    signal = np.zeros((SAMPLES, CHANNELS))
    bend = np.zeros((SAMPLES, 2))
    status, max_pen = K.run_episode_kernel(
        g.links_per_finger, g.link_length, g.link_mass, g.joint_stiffness, g.joint_damping,
        g.finger_base_separation, link, offset, torques, _torque_scales(shift, cfg.seed),
        _shape_code(o.shape), o.stiffness, o.contact_damping, o.size, o.center[0], o.center[1],
        o.contact_half_width, cfg.gravity, cfg.integration_dt, cfg.stride,
        np.asarray(eff.accel_bias), np.asarray(eff.gyro_bias), signal, bend)
    if status >= 0:
        raise IntegratorBlowup(int(status))
    shifted = shift is not None and not shift.is_identity
    episode = Episode(
        signal=signal,
        stiffness_label=obj.stiffness,
        shape=obj.shape,
        provenance=Provenance.SHIFTED_SIM if shifted else Provenance.SIM,
        seed=cfg.seed,
    )
    return EpisodeTrace(episode, float(max_pen), bend)


def simulate_episode(gripper: GripperConfig, obj: ObjectSpec, cfg: EpisodeConfig) -> Episode:
    """Deterministic 200x12 IMU recording of one squeeze-and-release."""
    return run_episode(gripper, obj, cfg).episode


def reference_object(shape: Shape | str, stiffness: float, **overrides) -> ObjectSpec:
    """Reference geometry for each shape, centred between the fingers."""
    shape = Shape.parse(shape)
    base = {
        Shape.BALL: dict(size=0.03),
        Shape.BOX: dict(size=0.027),
        Shape.CYLINDER: dict(size=0.03, contact_half_width=0.005),
    }[shape]
    base.update(overrides)
    return ObjectSpec(shape=shape, stiffness=stiffness, **base)


def stiffness_grid(count: int, stiffness_range: tuple[float, float]) -> np.ndarray:
    lo, hi = stiffness_range
    if count <= 0:
        raise ConfigError("count must be > 0")
    if not lo < hi:
        raise ConfigError("stiffness range must satisfy min < max")
    if lo <= 0:
        raise ConfigError("stiffness range must be positive")
    return np.linspace(lo, hi, count)


def episode_seeds(master_seed: int, count: int) -> np.ndarray:
    return np.random.SeedSequence(int(master_seed)).generate_state(count, dtype=np.uint64)


@dataclass(frozen=True)
class _Job:
    gripper: GripperConfig
    obj: ObjectSpec
    cfg: EpisodeConfig


def _run_job(job: _Job) -> Episode:
    return simulate_episode(job.gripper, job.obj, job.cfg)


def plan_dataset(gripper: GripperConfig, count: int, stiffness_range: tuple[float, float],
                 shapes: Iterable[Shape | str], cfg: EpisodeConfig, seed: int,
                 position_jitter: float = 0.002, objects: dict | None = None) -> list[_Job]:
    shapes = [Shape.parse(s) for s in shapes]
    if not shapes:
        raise ConfigError("shape set is empty")
    labels = stiffness_grid(count, stiffness_range)
    seeds = episode_seeds(seed, count)
    jobs = []
    for i, (k, s) in enumerate(zip(labels, seeds)):
        shape = shapes[i % len(shapes)]
        template = (objects or {}).get(shape) or reference_object(shape, float(k))
        rng = np.random.default_rng(int(s))
        offset = rng.uniform(-position_jitter, position_jitter, size=2) if position_jitter else (0.0, 0.0)
        center = (template.center[0] + offset[0], template.center[1] + offset[1])
        obj = replace(template, stiffness=float(k), center=center)
        jobs.append(_Job(gripper, obj, replace(cfg, seed=int(s))))
    return jobs


def generate_dataset(gripper: GripperConfig, count: int, stiffness_range: tuple[float, float],
                     shapes: Sequence[Shape | str], cfg: EpisodeConfig, seed: int, *,
                     position_jitter: float = 0.002, objects: dict | None = None,
                     workers: int = 1) -> list[Episode]:
    """Episodes whose labels form an equally spaced grid over ``stiffness_range``.

    Shapes are assigned round-robin, so each shape receives ``count // len(shapes)``
    episodes (plus one for the first ``count % len(shapes)``). Each episode's
    seed is drawn from ``seed``; it fixes a small random offset of the object
    centre (``position_jitter``, metres) and any torque jitter of the domain shift.
    """
    jobs = plan_dataset(gripper, count, stiffness_range, shapes, cfg, seed,
                        position_jitter=position_jitter, objects=objects)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_job(job) for job in jobs]
