"""Training penalties: gradient alignment (local linearity) and fc orthogonality."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import FC_LAYERS, per_example_loss
from .rng import as_generator


@dataclass(frozen=True)
class RegularizerSpec:
    lambda_ga: float = 0.0
    ga_samples: int = 1
    tau: float = 1e-12
    lambda_orth: float = 0.0
    orth_layers: tuple = FC_LAYERS

    def __post_init__(self):
        if self.lambda_ga < 0 or self.lambda_orth < 0:
            raise ValueError("regularizer weights must be non-negative")
        if self.ga_samples < 1:
            raise ValueError("ga_samples must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "orth_layers", tuple(self.orth_layers))
        unknown = set(self.orth_layers) - set(FC_LAYERS)
        if unknown or not self.orth_layers:
            raise ValueError(f"orth_layers must be a non-empty subset of {FC_LAYERS}")

    @property
    def setting(self) -> str:
        """One of none / gradalign / orth / both."""
        ga, orth = self.lambda_ga > 0, self.lambda_orth > 0
        return {(False, False): "none", (True, False): "gradalign",
                (False, True): "orth", (True, True): "both"}[(ga, orth)]


def _floored_ratio(num: Tensor, norm_product: Tensor, tau: float) -> Tensor:
    # |num| <= norm_product, so the result stays in [-1, 1]; it is 0 for a zero vector.
    cos = ad.div(num, ad.clamp(norm_product, lo=tau))
    return ad.clamp(cos, -1.0, 1.0)


def cosine_sim(g1: Tensor, g2: Tensor, tau: float = 1e-12) -> Tensor:
    """<g1, g2> / max(|g1| |g2|, tau) for two vectors."""
    g1, g2 = ad._pair(g1, g2)
    if g1.shape != g2.shape:
        raise ValueError(f"length mismatch: {g1.shape} vs {g2.shape}")
    g1, g2 = ad.reshape(g1, (-1,)), ad.reshape(g2, (-1,))
    return _floored_ratio(ad.dot(g1, g2), ad.mul(ad.l2_norm(g1), ad.l2_norm(g2)), tau)


def cosine_rows(g1: Tensor, g2: Tensor, tau: float = 1e-12) -> Tensor:
    """Row-wise cosine of two ``[N, ...]`` batches, returned as ``[N]``."""
    if g1.shape != g2.shape:
        raise ValueError(f"shape mismatch: {g1.shape} vs {g2.shape}")
    n = g1.shape[0]
    a, b = ad.reshape(g1, (n, -1)), ad.reshape(g2, (n, -1))
    num = ad.sum(ad.mul(a, b), axis=1)
    den = ad.mul(ad.l2_norm(a, axis=1), ad.l2_norm(b, axis=1))
    return _floored_ratio(num, den, tau)


def _input_grad(params, x: np.ndarray, y, loss_fn, create_graph: bool) -> Tensor:
    xt = Tensor(x, ad.Node("leaf", (), None))
    (g,) = ad.grad(ad.sum(loss_fn(params, xt, y)), [xt], create_graph=create_graph)
    return g


def alignment_cosines(params, x: np.ndarray, y, epsilon: float, samples: int, tau: float,
                      rng=None, create_graph: bool = False, loss_fn=None) -> list[Tensor]:
    """Per-example cosines between input gradients at x and at x + eta.

    One ``[N]`` tensor per Monte Carlo draw; eta ~ U([-eps, eps]^d) is drawn
    independently for every example, in draw order from ``rng``.
    """
    if samples < 1:
        raise ValueError("need at least one noise sample")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    loss_fn = loss_fn or per_example_loss
    rng = as_generator(rng, "eta")
    x = np.asarray(x)
    base = _input_grad(params, x, y, loss_fn, create_graph)
    out = []
    for _ in range(samples):
        eta = rng.uniform(-epsilon, epsilon, size=x.shape).astype(x.dtype)
        moved = _input_grad(params, x + eta, y, loss_fn, create_graph)
        out.append(cosine_rows(base, moved, tau))
    return out


def gradalign_penalty(params, x: np.ndarray, y, epsilon: float, samples: int = 1,
                      tau: float = 1e-12, create_graph: bool = False, rng=None,
                      loss_fn=None) -> Tensor:
    """Mean over examples and draws of 1 - cos(grad_x l(x), grad_x l(x + eta)).

    With ``create_graph`` the result is differentiable with respect to the
    parameters (the input gradients are kept on the tape).
    """
    cosines = alignment_cosines(params, x, y, epsilon, samples, tau, rng, create_graph, loss_fn)
    total = cosines[0]
    for c in cosines[1:]:
        total = ad.add(total, c)
    return ad.sub(1.0, ad.scalar_mul(ad.mean(total), 1.0 / samples))


def _gram_gap(w: Tensor) -> Tensor:
    gram = ad.matmul(w, ad.transpose(w))
    d = ad.sub(gram, np.eye(gram.shape[0], dtype=w.dtype))
    return ad.sum(ad.mul(d, d))


def orth_penalty(params, orth_layers=FC_LAYERS) -> Tensor:
    """Sum over the chosen fc layers of ||W W^T - I||_F^2 (W stored out x in)."""
    layers = tuple(orth_layers)
    if not layers:
        raise ValueError("orth_layers must not be empty")
    total = None
    for layer in layers:
        term = _gram_gap(params.weight(layer))
        total = term if total is None else ad.add(total, term)
    return total


def orthogonality_gap(params, layers=FC_LAYERS) -> list[float]:
    """Per-layer ||W W^T - I||_F^2 divided by the row count; no graph recorded."""
    gaps = []
    for layer in layers:
        w = np.asarray(params.weight(layer).data, dtype=np.float64)
        d = w @ w.T - np.eye(w.shape[0])
        gaps.append(float(np.sum(d * d)) / w.shape[0])
    return gaps
