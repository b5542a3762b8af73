"""FGSM and l-infinity PGD attacks.

Attacks operate on plain numpy batches and return numpy batches: the
perturbation is treated as a constant by any outer training loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .nn import per_example_loss
from .rng import as_generator

LossFn = Callable  # (params, x: Tensor, y) -> per-example losses Tensor [N]

DEFAULT_EPSILON = 16 / 255


@dataclass(frozen=True)
class AttackSpec:
    """Threat model and solver settings for one attack.

    ``alpha`` defaults to ``2.5 * epsilon / steps`` for PGD.
    """

    kind: str = "fgsm"
    epsilon: float = DEFAULT_EPSILON
    steps: int = 1
    alpha: Optional[float] = None
    random_start: bool = False
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.kind == "pgd" and self.alpha is not None and not self.alpha > 0:
            raise ValueError("PGD step size alpha must be positive")
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip_lo must be below clip_hi")

    @classmethod
    def fgsm(cls, epsilon: float = DEFAULT_EPSILON, **kw) -> "AttackSpec":
        return cls(kind="fgsm", epsilon=epsilon, **kw)

    @classmethod
    def pgd(cls, epsilon: float = DEFAULT_EPSILON, steps: int = 10, alpha=None,
            random_start: bool = True, **kw) -> "AttackSpec":
        return cls(kind="pgd", epsilon=epsilon, steps=steps, alpha=alpha,
                   random_start=random_start, **kw)

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.epsilon / self.steps


def input_gradient(params, x: np.ndarray, y, loss_fn: Optional[LossFn] = None) -> np.ndarray:
    """Gradient of each example's own loss with respect to its input."""
    loss_fn = loss_fn or per_example_loss
    xt = ad.Tensor(x, ad.Node("leaf", (), None))
    total = ad.sum(loss_fn(params, xt, y))
    (g,) = ad.grad(total, [xt])
    if not np.all(np.isfinite(g.data)):
        raise FloatingPointError("non-finite input gradient in attack")
    return g.data


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float, lo: float, hi: float) -> np.ndarray:
    """Project onto the eps-box around ``x`` and then the pixel range.

    Any element whose rounded distance to ``x`` still exceeds ``epsilon`` is
    nudged toward ``x`` one ulp at a time, so ``|x_adv - x| <= epsilon`` holds
    exactly in working precision.
    """
    dt = x.dtype.type
    eps = dt(epsilon)
    out = np.clip(x_adv, x - eps, x + eps)
    out = np.clip(out, dt(lo), dt(hi))
    bad = np.abs(out - x) > eps
    while bad.any():
        out[bad] = np.nextafter(out[bad], x[bad])
        bad = np.abs(out - x) > eps
    return out


def _check_input(x: np.ndarray, spec: AttackSpec) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype not in ad.SUPPORTED_DTYPES:
        x = x.astype(np.float64)
    if x.size and (x.min() < spec.clip_lo or x.max() > spec.clip_hi):
        raise ValueError("attack input lies outside the clip range")
    return x


def fgsm(params, x: np.ndarray, y, spec: AttackSpec, loss_fn: Optional[LossFn] = None) -> np.ndarray:
    """x + eps * sign(grad_x loss), clipped to the pixel range."""
    if spec.kind != "fgsm":
        raise ValueError("fgsm called with a non-FGSM spec")
    x = _check_input(x, spec)
    if spec.epsilon == 0:
        return x.copy()
    g = input_gradient(params, x, y, loss_fn)
    step = x + x.dtype.type(spec.epsilon) * np.sign(g)
    return project(step, x, spec.epsilon, spec.clip_lo, spec.clip_hi)


def pgd(params, x: np.ndarray, y, spec: AttackSpec, rng=None,
        loss_fn: Optional[LossFn] = None) -> np.ndarray:
    """K-step sign-gradient ascent projected onto the eps-box and pixel range.

    ``rng`` is a Generator or an integer seed; it is used only for the
    random start.
    """
    if spec.kind != "pgd":
        raise ValueError("pgd called with a non-PGD spec")
    x = _check_input(x, spec)
    if spec.epsilon == 0:
        return x.copy()
    dt = x.dtype.type
    lo, hi = spec.clip_lo, spec.clip_hi
    if spec.random_start:
        rng = as_generator(rng, "pgd-init")
        u = rng.uniform(-spec.epsilon, spec.epsilon, size=x.shape).astype(x.dtype)
        x_adv = project(x + u, x, spec.epsilon, lo, hi)
    else:
        x_adv = x.copy()
    alpha = dt(spec.step_size)
    for _ in range(spec.steps):
        g = input_gradient(params, x_adv, y, loss_fn)
        x_adv = project(x_adv + alpha * np.sign(g), x, spec.epsilon, lo, hi)
    return x_adv


def attack(params, x: np.ndarray, y, spec: AttackSpec, rng=None,
           loss_fn: Optional[LossFn] = None) -> np.ndarray:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "fgsm":
        return fgsm(params, x, y, spec, loss_fn)
    return pgd(params, x, y, spec, rng, loss_fn)
