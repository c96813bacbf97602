"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The training criteria run desk-scale experiments and take several minutes each.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gripstiff import sim
from gripstiff.dataset import (
    Dataset, compute_stats, decode_dataset, encode_dataset, from_episodes, kfold_split,
    stiffness_from_force_displacement,
)
from gripstiff.episode import CHANNELS, SAMPLES, Episode, Provenance, Shape
from gripstiff.errors import DegenerateInputError, GripstiffError
from gripstiff.models import Architecture, ModelKind, ModelSpec, build, param_count
from gripstiff.nn import (
    BiLstm, Conv1d, Dense, FinalState, Lstm, Sequential, decode_checkpoint, encode_checkpoint,
    gradient_check,
)
from gripstiff.trainer import (
    TrainConfig, cross_validate, experiment_domain_gap, experiment_shape_generalization,
    is_trend_non_increasing, reports_to_json, train_fold,
)

RANGE = (300.0, 1400.0)
G = 9.81


def rng(seed):
    return np.random.default_rng(seed)


def generate(count, shapes, seed, shift=None):
    cfg = sim.EpisodeConfig(domain_shift=shift)
    return from_episodes(sim.generate_dataset(sim.GripperConfig(), count, RANGE, shapes, cfg, seed))


# -- gradients -------------------------------------------------------------------------

TINY = Architecture(conv_filters=(4, 5, 6), recurrent_conv_filters=(4, 5, 5), units=3,
                    head=(6, 4, 1), input_length=16, channels=12)


def test_gradient_suite(criterion):
    t0 = time.perf_counter()
    cases = [
        ("conv1d", Conv1d(3, 4, width=3, stride=2, activation="identity", rng=rng(1)), (2, 9, 3), 1e-6),
        ("dense", Dense(5, 3, activation="identity", rng=rng(2)), (3, 5), 1e-6),
        ("lstm cell", Lstm(3, 4, rng=rng(3)), (2, 1, 3), 1e-5),
        ("lstm bptt", Lstm(3, 4, rng=rng(4)), (2, 7, 3), 1e-5),
        ("stacked lstm", Sequential([("a", Lstm(3, 4, rng=rng(5))), ("b", Lstm(4, 4, rng=rng(6))),
                                     ("last", FinalState())]), (2, 6, 3), 1e-5),
        ("bilstm", Sequential([("bi", BiLstm(3, 4, rng=rng(7))), ("last", FinalState(bidirectional=True))]),
         (2, 5, 3), 1e-5),
        ("ConvBiLstmNet", build(ModelSpec(ModelKind.CONV_BILSTM, seed=8, arch=TINY)), (2, 16, 12), 1e-5),
    ]
    worst = {}
    ok = True
    for name, module, shape, tol in cases:
        rep = gradient_check(module, rng(9).standard_normal(shape), h=1e-6)
        worst[name] = rep.max_rel_error
        ok &= rep.passed(tol)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    assert criterion("gradient suite", ok, detail)


# -- architecture ------------------------------------------------------------------------

def _conv(w, i, o):
    return w * i * o + o


def _lstm(d, u):
    return 4 * u * (d + u + 1)


def _head(i):
    widths = (i, 512, 256, 128, 64, 1)
    return sum(a * b + b for a, b in zip(widths, widths[1:]))


def test_architecture_fidelity(criterion):
    expected = {
        ModelKind.CONV: _conv(3, 12, 128) + _conv(3, 128, 256) + _conv(3, 256, 512) + _head(25 * 512),
        ModelKind.CONV_LSTM: (_conv(3, 12, 128) + _conv(3, 128, 256) + _conv(3, 256, 256)
                              + _lstm(256, 128) + _lstm(128, 128) + _head(128)),
        ModelKind.CONV_BILSTM: (_conv(3, 12, 128) + _conv(3, 128, 256) + _conv(3, 256, 256)
                                + 2 * _lstm(256, 128) + _head(256)),
    }
    filters = {ModelKind.CONV: (128, 256, 512), ModelKind.CONV_LSTM: (128, 256, 256),
               ModelKind.CONV_BILSTM: (128, 256, 256)}
    problems = []
    for kind in ModelKind:
        m = build(ModelSpec(kind, seed=0))
        if param_count(m) != expected[kind]:
            problems.append(f"{kind.value} params {param_count(m)} != {expected[kind]}")
        shapes = m.shapes(batch=1)
        lengths = [shapes[f"conv{i}"][1] for i in (1, 2, 3)]
        widths = [shapes[f"conv{i}"][2] for i in (1, 2, 3)]
        head = [shapes[f"dense{i}"][1] for i in range(1, 6)]
        if lengths != [100, 50, 25] or tuple(widths) != filters[kind] or head != [512, 256, 128, 64, 1]:
            problems.append(f"{kind.value} shapes {lengths} {widths} {head}")
        if kind is ModelKind.CONV_LSTM and shapes["final"] != (1, 128):
            problems.append("ConvLstmNet final width")
        if kind is ModelKind.CONV_BILSTM and shapes["final"] != (1, 256):
            problems.append("ConvBiLstmNet final width")
    counts = ", ".join(f"{k.value} {v}" for k, v in expected.items())
    assert criterion("architecture fidelity", not problems, "; ".join(problems) or counts)


# -- stiffness utility ---------------------------------------------------------------------

def test_stiffness_utility(criterion):
    ok = stiffness_from_force_displacement(1.0, 3.0, 0.0, 0.002) == pytest.approx(1000.0)
    ok &= stiffness_from_force_displacement(2.0, 2.0, 0.0, 0.002) == 0.0
    ok &= stiffness_from_force_displacement(3.0, 1.0, 0.002, 0.0) == pytest.approx(1000.0)
    r = rng(10)
    for _ in range(200):
        f1, f2, d1, d2 = r.uniform(-5, 5, 4)
        if d1 == d2:
            continue
        ok &= stiffness_from_force_displacement(f1, f2, d1, d2) == stiffness_from_force_displacement(f2, f1, d2, d1)
    try:
        stiffness_from_force_displacement(1.0, 3.0, 0.004, 0.004)
        ok = False
    except DegenerateInputError:
        pass
    assert criterion("force/displacement stiffness", ok, "worked examples, symmetry, degenerate input")


# -- cross-validation hygiene ---------------------------------------------------------------

SMALL = Architecture(conv_filters=(4, 4, 4), recurrent_conv_filters=(4, 4, 4), units=3, head=(6, 4, 1))


def synth(n, seed, offset=0):
    r = rng(seed)
    t = np.linspace(0, 1, SAMPLES)
    eps = []
    for i, k in enumerate(np.linspace(300, 1400, n)):
        sig = 0.1 * r.standard_normal((SAMPLES, CHANNELS))
        sig[:, 0] += (k / 1000.0) * np.sin(np.pi * t)
        eps.append(Episode(sig, float(k), Shape.BOX, Provenance.SIM, offset + i))
    return Dataset(tuple(eps))


_coverage_failures = []


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 40), st.integers(0, 2 ** 32 - 1))
def _fold_coverage(k, extra, seed):
    n = k + extra
    plan = kfold_split(n, k, seed)
    vals = [set(plan.validation_indices(f)) for f in range(k)]
    ok = sorted(i for v in vals for i in v) == list(range(n))
    for f in range(k):
        ok &= set(plan.train_indices(f)).isdisjoint(vals[f])
        ok &= len(plan.train_indices(f)) + len(vals[f]) == n
    if not ok:
        _coverage_failures.append((k, extra, seed))
    assert ok


def test_cv_hygiene_and_determinism(criterion):
    try:
        _fold_coverage()
    except AssertionError:
        pass  # reported through _coverage_failures
    ds = synth(20, 0)
    train, val = ds.subset(range(14)), ds.subset(range(14, 20))
    cfg = TrainConfig(batch_size=4, epochs=2)
    spec = ModelSpec(ModelKind.CONV_BILSTM, 0, SMALL)
    a = train_fold(train, val, synth(5, 1, offset=100), spec, cfg)
    b = train_fold(train, val, synth(5, 2, offset=200), spec, cfg)
    stats_ok = (a.stats.source == train.fingerprint()
                and np.array_equal(a.stats.mean, compute_stats(train).mean)
                and not np.array_equal(a.stats.mean, compute_stats(ds).mean))
    isolated = a.train_losses == b.train_losses and all(np.array_equal(a.best_state[k], b.best_state[k])
                                                        for k in a.best_state)
    cv = TrainConfig(batch_size=5, epochs=2, k_folds=3, seed=4)
    same = reports_to_json({"r": cross_validate(ds, None, spec, cv)}) == reports_to_json(
        {"r": cross_validate(ds, None, spec, cv)})
    ok = not _coverage_failures and stats_ok and isolated and same
    detail = (f"coverage {'ok' if not _coverage_failures else _coverage_failures[0]}, train-only stats {stats_ok}, "
              f"test isolation {isolated}, identical reports {same}")
    assert criterion("cv hygiene", ok, detail)


# -- learnability ---------------------------------------------------------------------------

def test_learnability(criterion):
    t0 = time.perf_counter()
    ds = generate(500, (Shape.BOX,), seed=1)
    cfg = TrainConfig(learning_rate=0.001, batch_size=50, epochs=30, k_folds=5)
    rep = cross_validate(ds, None, ModelSpec(ModelKind.CONV_BILSTM, 0), cfg)
    elapsed = time.perf_counter() - t0
    ok = rep.mean_mape < 10.0 and elapsed < 15 * 60
    detail = (f"mean validation MAPE {rep.mean_mape:.2f}% (folds "
              + ", ".join(f"{f.mape:.1f}" for f in rep.per_fold) + f"); {elapsed / 60:.1f} min")
    assert criterion("learnability", ok, detail)


# -- shape generalization ---------------------------------------------------------------------

def test_shape_generalization(criterion):
    mixed = generate(600, tuple(Shape), seed=11)
    tests = {s: generate(40, (s,), seed=20 + int(s)) for s in Shape}
    cfg = TrainConfig(batch_size=50, epochs=20, k_folds=5)
    out = experiment_shape_generalization(mixed, tests, cfg, ModelSpec(ModelKind.CONV_BILSTM, 0))
    pooled = out["pooled"].mean_mape
    per_shape = {s.name.lower(): out[s.name.lower()].mean_mape for s in Shape}
    ok = all(v < 3 * pooled for v in per_shape.values())
    detail = f"pooled {pooled:.2f}%, " + ", ".join(f"{k} {v:.2f}%" for k, v in per_shape.items())
    assert criterion("shape generalization", ok, detail)


# -- domain gap -----------------------------------------------------------------------------

def test_domain_gap_trend(criterion):
    sim_ds = generate(250, (Shape.BOX,), seed=1)
    shifted = generate(200, (Shape.BOX,), seed=2, shift=sim.REFERENCE_SHIFT)
    test = generate(100, (Shape.BOX,), seed=3, shift=sim.REFERENCE_SHIFT)
    cfg = TrainConfig(batch_size=50, epochs=15, k_folds=3)
    schedule = [0, 50, 100, 150, 200]
    out = experiment_domain_gap(sim_ds, shifted, test, schedule, cfg, ModelSpec(ModelKind.CONV_BILSTM, 0),
                                noise=(0.7, 0.06))
    means = [out[n].mean_mape for n in schedule]
    ok = is_trend_non_increasing(means, allowed_inversions=1) and means[-1] < means[0]
    detail = ", ".join(f"n={n} {m:.2f}%" for n, m in zip(schedule, means))
    assert criterion("domain-gap trend", ok, detail)


# -- simulator physics -----------------------------------------------------------------------

def _pendulum():
    return sim.GripperConfig(links_per_finger=1, link_length=0.1, link_mass=0.16, joint_stiffness=0.0,
                             joint_damping=0.0, actuation_torque_max=0.0)


def _energy(g, s):
    inertia = g.link_mass * g.link_length ** 2 / 3.0
    theta, omega = s.joint_angles[1], s.joint_velocities[1]
    return 0.5 * inertia * omega ** 2 + g.link_mass * G * 0.5 * g.link_length * (1.0 - math.cos(theta))


def _swing(g, dt, every):
    s = sim.GripperState(np.array([0.6, 0.6]), np.zeros(2), np.zeros(2))
    out = [_energy(g, s)]
    for i in range(round(2.0 / dt)):
        s = sim.step_dynamics(s, g, None, 0.0, dt, gravity=G)
        if (i + 1) % every == 0:
            out.append(_energy(g, s))
    return np.array(out)


def test_simulator_physics(criterion):
    g = sim.GripperConfig()
    s = sim.GripperState.rest(g)
    for i in range(2000):
        s = sim.step_dynamics(s, g, None, 0.0, 1e-3, step_index=i)
    rest = float(np.max(np.abs(s.joint_angles)))

    p = _pendulum()
    coarse, fine = _swing(p, 1e-3, 1), _swing(p, 1e-5, 100)
    drift = float(np.max(np.abs(coarse - fine)) / fine[0])

    inertia = p.link_mass * p.link_length ** 2 / 3.0
    s = sim.GripperState(np.zeros(2), np.zeros(2), np.zeros(2))
    for _ in range(100):
        s = sim.step_dynamics(s, p, None, 10.0 * inertia, 1e-3, gravity=0.0)
    torque_err = float(np.max(np.abs(s.joint_angles - 0.5 * 10.0 * 0.1 ** 2)))

    monotone = True
    for shape in Shape:
        pens = [sim.run_episode(g, sim.reference_object(shape, k), sim.EpisodeConfig()).max_penetration
                for k in (300, 575, 850, 1125, 1400)]
        monotone &= all(x > 0 for x in pens) and all(a > b for a, b in zip(pens, pens[1:]))

    ok = rest < 1e-9 and drift < 0.01 and torque_err < 1e-3 and monotone
    detail = (f"rest {rest:.1e} rad, energy vs fine {100 * drift:.3f}%, torque error {torque_err:.1e} rad, "
              f"penetration monotone {monotone}")
    assert criterion("simulator physics", ok, detail)


# -- persistence --------------------------------------------------------------------------------

def test_persistence(criterion):
    ds = generate(3, tuple(Shape), seed=5)
    raw = encode_dataset(ds)
    back = decode_dataset(raw)
    sgds_exact = back.signals().tobytes() == ds.signals().tobytes() and encode_dataset(back) == raw

    m = build(ModelSpec(ModelKind.CONV_BILSTM, seed=1, arch=TINY))
    blob = encode_checkpoint(m.state_dict(), {"fold": 0})
    header, state = decode_checkpoint(blob)
    sgnn_exact = header == {"fold": 0} and all(state[k].tobytes() == v.tobytes() for k, v in m.state_dict().items())
    sgnn_exact &= encode_checkpoint(state, header) == blob

    r = rng(6)
    unstructured = []
    for trial in range(300):
        for decode, data in ((decode_dataset, raw), (decode_checkpoint, blob)):
            cut = int(r.integers(0, len(data)))
            mutated = bytearray(data[:cut] + r.bytes(int(r.integers(0, 16))))
            if mutated and trial % 2:
                mutated[int(r.integers(0, len(mutated)))] ^= 0xFF
            try:
                decode(bytes(mutated))
            except GripstiffError:
                pass
            except Exception as exc:  # noqa: BLE001 - the point is to catch anything else
                unstructured.append(type(exc).__name__)
    ok = sgds_exact and sgnn_exact and not unstructured
    detail = f"SGDS exact {sgds_exact}, SGNN exact {sgnn_exact}, unstructured errors {len(unstructured)}/600"
    assert criterion("persistence", ok, detail)
