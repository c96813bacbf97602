"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    """Per-tensor errors ``max|analytic - numeric| / max|numeric|``."""

    errors: dict = field(default_factory=dict)
    coords_checked: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def _rel(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.max(np.abs(numeric)) if numeric.size else 0.0
    diff = np.max(np.abs(analytic - numeric)) if numeric.size else 0.0
    return float(diff / scale) if scale > 0 else float(diff)


def _pick(rng, size, count):
    if count >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=count, replace=False))


def gradient_check(module, x, *, h: float = 1e-6, max_coords: int = 10_000, seed: int = 0,
                   check_input: bool = True, upstream: np.ndarray | None = None) -> GradCheckReport:
    """Compare ``module.backward`` against central differences.

    The scalar under test is ``sum(module.forward(x) * R)`` for a seeded
    random projection ``R`` (or ``upstream`` when given). Every coordinate of
    every parameter is perturbed by +-h, unless the total exceeds
    ``max_coords``, in which case a seeded random subsample proportional to
    each tensor's size is used.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    y = module.forward(x)
    R = rng.standard_normal(y.shape) if upstream is None else np.asarray(upstream, dtype=np.float64)
    for p in module.params.values():
        p.zero_grad()
    dx = module.backward(R)
    analytic = {name: p.grad.copy() for name, p in module.params.items()}

    def objective():
        return float(np.sum(module.forward(x) * R))

    targets = [(name, p.value, analytic[name]) for name, p in module.params.items()]
    if check_input:
        targets.append(("input", x, dx))
    total = sum(t[1].size for t in targets)
    report = GradCheckReport()
    for name, array, grad in targets:
        count = array.size
        if total > max_coords:
            count = max(min(array.size, 16), int(round(max_coords * array.size / total)))
        idx = _pick(rng, array.size, count)
        flat = array.reshape(-1)
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * h)
        report.errors[name] = _rel(grad.reshape(-1)[idx], numeric)
        report.coords_checked += idx.size
    for p in module.params.values():
        p.zero_grad()
    return report
