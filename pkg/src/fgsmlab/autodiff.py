"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

Every operation records a :class:`Node` holding its parents and a
vector-Jacobian product (VJP).  The VJPs are written in terms of the same
differentiable operations, so running the backward pass with recording
enabled (``create_graph=True``) yields gradients that can be differentiated
again.  That is all double backprop needs.

Node indices come from a global counter, so a node's parents always have
smaller indices and the graph is acyclic by construction.  Reverse
topological order is descending index order.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor", "Node", "leaf", "constant", "grad", "fd_grad", "no_grad",
    "enable_grad", "is_grad_enabled",
    "add", "sub", "mul", "div", "neg", "scalar_mul", "matmul", "transpose",
    "sum", "mean", "relu", "sign", "clamp", "dot", "l2_norm", "sqrt", "log",
    "exp", "reshape", "pad_zero", "crop", "broadcast_to", "sum_to",
    "safe_reciprocal", "select_along", "embed_along", "im2col", "col2im",
]

_state = threading.local()
_counter = itertools.count()

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that disables graph recording on this thread."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Node:
    """One tape entry: operation kind, parent tensors and the VJP rule."""

    __slots__ = ("index", "op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Optional[Callable]):
        self.index = next(_counter)
        self.op = op
        self.parents = parents
        self.vjp = vjp

    def __repr__(self) -> str:
        return f"Node({self.index}, {self.op!r})"


class Tensor:
    """A dense real array, optionally attached to the differentiation tape."""

    __slots__ = ("data", "node", "__weakref__")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, node: Optional[Node] = None):
        self.data = data
        self.node = node

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def leaf(shape, values, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    """Create a graph leaf of the given shape from a flat or shaped value sequence."""
    dtype = np.dtype(dtype)
    if dtype not in SUPPORTED_DTYPES:
        raise TypeError(f"unsupported precision {dtype}; use float32 or float64")
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"shape dimensions must be positive, got {shape}")
    arr = np.array(values, dtype=dtype)
    expected = int(np.prod(shape, dtype=np.int64))
    if arr.size != expected:
        raise ValueError(f"{arr.size} values given for shape {shape} ({expected} expected)")
    arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("leaf values must be finite")
    return Tensor(arr, Node("leaf", (), None) if requires_grad else None)


def constant(values, dtype=np.float64) -> Tensor:
    """Wrap an array as a tensor that is never differentiated."""
    return Tensor(np.asarray(values, dtype=dtype))


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    if a.dtype != b.dtype:
        raise TypeError(f"mixed precision in one graph: {a.dtype} vs {b.dtype}")
    return a, b


def _make(data: np.ndarray, op: str, parents: tuple, vjp: Callable) -> Tensor:
    if is_grad_enabled() and any(p.node is not None for p in parents):
        return Tensor(data, Node(op, parents, vjp))
    return Tensor(data)


# ---------------------------------------------------------------------------
# shape plumbing


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if a.shape == shape:
        return a
    src = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), "broadcast_to", (a,),
                 lambda g, needs: (sum_to(g, src),))


def sum_to(a: Tensor, shape) -> Tensor:
    """Sum ``a`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    data = a.data
    lead = data.ndim - len(shape)
    if lead < 0:
        raise ValueError(f"cannot sum {a.shape} to {shape}")
    if lead:
        data = data.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, data.shape)) if s == 1 and t != 1)
    if axes:
        data = data.sum(axis=axes, keepdims=True)
    if data.shape != shape:
        raise ValueError(f"cannot sum {a.shape} to {shape}")
    src = a.shape
    return _make(data, "sum_to", (a,), lambda g, needs: (broadcast_to(g, src),))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,),
                 lambda g, needs: (reshape(g, src),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,),
                 lambda g, needs: (transpose(g, inverse),))


def pad_zero(a: Tensor, pad_width) -> Tensor:
    """Zero-pad ``a``; ``pad_width`` is one (before, after) pair per axis."""
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim or any(lo < 0 or hi < 0 for lo, hi in pad_width):
        raise ValueError(f"bad pad width {pad_width} for shape {a.shape}")
    region = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _make(np.pad(a.data, pad_width), "pad_zero", (a,),
                 lambda g, needs: (crop(g, region),))


def crop(a: Tensor, region: tuple) -> Tensor:
    """Take a contiguous sub-block given as one unit-step slice per axis."""
    region = tuple(slice(*s.indices(n)[:2]) for s, n in zip(region, a.shape))
    pads = tuple((s.start, n - s.stop) for s, n in zip(region, a.shape))
    return _make(a.data[region].copy(), "crop", (a,),
                 lambda g, needs: (pad_zero(g, pads),))


def select_along(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Pick one entry per lane along ``axis`` (``index`` has size 1 on that axis)."""
    index = np.asarray(index)
    if index.shape[axis] != 1:
        raise ValueError("select_along picks exactly one element per lane")
    size = a.shape[axis]
    return _make(np.take_along_axis(a.data, index, axis), "select_along", (a,),
                 lambda g, needs: (embed_along(g, index, axis, size),))


def embed_along(a: Tensor, index: np.ndarray, axis: int, size: int) -> Tensor:
    """Adjoint of :func:`select_along`: scatter into zeros of length ``size``."""
    shape = list(a.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=a.dtype)
    np.put_along_axis(out, index, a.data, axis)
    return _make(out, "embed_along", (a,),
                 lambda g, needs: (select_along(g, index, axis),))


def im2col(x: Tensor, k: int) -> Tensor:
    """Unfold ``[N,C,H,W]`` into rows of ``k*k*C`` patches: ``[N*Ho*Wo, C*k*k]``."""
    n, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    shape = x.shape
    return _make(np.ascontiguousarray(cols), "im2col", (x,),
                 lambda g, needs: (col2im(g, shape, k),))


def col2im(cols: Tensor, shape: tuple, k: int) -> Tensor:
    """Adjoint of :func:`im2col`: overlap-add patches back into ``shape``."""
    n, c, h, w = shape
    ho, wo = h - k + 1, w - k + 1
    patches = cols.data.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += patches[:, :, i, j]
    return _make(out, "col2im", (cols,), lambda g, needs: (im2col(g, k),))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g, needs: (sum_to(g, sa) if needs[0] else None,
                                   sum_to(g, sb) if needs[1] else None))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g, needs: (sum_to(g, sa) if needs[0] else None,
                                   neg(sum_to(g, sb)) if needs[1] else None))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g, needs: (neg(g),))


def mul(a, b) -> Tensor:
    """Elementwise product (numpy broadcasting)."""
    a, b = _pair(a, b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g, needs: (sum_to(mul(g, b), a.shape) if needs[0] else None,
                                   sum_to(mul(g, a), b.shape) if needs[1] else None))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.dtype.type(c), "scalar_mul", (a,),
                 lambda g, needs: (scalar_mul(g, c),))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def vjp(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, out), b)), b.shape) if needs[1] else None
        return ga, gb

    out = _make(a.data / b.data, "div", (a, b), vjp)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b),
                 lambda g, needs: (matmul(g, transpose(b)) if needs[0] else None,
                                   matmul(transpose(a), g) if needs[1] else None))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    data = a.data.sum(axis=axis, keepdims=True)
    src = a.shape
    kept = data.shape

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept), src),)

    return _make(data if keepdims else data.reshape(_squeeze(kept, axis, a.ndim)),
                 "sum", (a,), vjp)


def _squeeze(kept: tuple, axis, ndim: int) -> tuple:
    if axis is None:
        return ()
    axes = {ax % ndim for ax in np.atleast_1d(axis)}
    return tuple(s for i, s in enumerate(kept) if i not in axes)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scalar_mul(sum(a, axis, keepdims), 1.0 / count)


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    return sum(mul(a, b))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)
    return _make(a.data * mask, "relu", (a,),
                 lambda g, needs: (mul(g, Tensor(mask)),))


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0; the derivative is zero everywhere."""
    return _make(np.sign(a.data), "sign", (a,), lambda g, needs: (None,))


def clamp(a: Tensor, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got {lo}, {hi}")
    mask = ((a.data > lo) & (a.data < hi)).astype(a.dtype)
    return _make(np.clip(a.data, lo, hi), "clamp", (a,),
                 lambda g, needs: (mul(g, Tensor(mask)),))


def sqrt(a: Tensor) -> Tensor:
    out = _make(np.sqrt(a.data), "sqrt", (a,),
                lambda g, needs: (div(g, scalar_mul(out, 2.0)),))
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), "log", (a,), lambda g, needs: (div(g, a),))


def exp(a: Tensor) -> Tensor:
    out = _make(np.exp(a.data), "exp", (a,), lambda g, needs: (mul(g, out),))
    return out


def safe_reciprocal(a: Tensor) -> Tensor:
    """1/a where a != 0 and 0 where a == 0 (derivative likewise zeroed)."""
    nz = a.data != 0
    data = np.divide(1, a.data, out=np.zeros_like(a.data), where=nz)
    out = _make(data, "safe_reciprocal", (a,),
                lambda g, needs: (neg(mul(g, mul(out, out))),))
    return out


def l2_norm(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the zero vector is taken to be zero."""
    data = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    kept = data.shape

    def vjp(g, needs):
        scale = mul(reshape(g, kept), safe_reciprocal(reshape(out, kept)))
        return (mul(a, broadcast_to(scale, a.shape)),)

    out = _make(data if keepdims else data.reshape(_squeeze(kept, axis, a.ndim)),
                "l2_norm", (a,), vjp)
    return out


# ---------------------------------------------------------------------------
# differentiation


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Reverse-mode gradients of a scalar ``output`` with respect to ``wrt``.

    With ``create_graph`` the backward pass is itself recorded, so the returned
    gradients can be differentiated again.
    """
    if output.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    for t in wrt:
        if not isinstance(t, Tensor) or t.node is None:
            raise ValueError("every differentiation target must require grad")
    if output.node is None:
        raise ValueError("output does not depend on any differentiation target")

    # Collect the subgraph reachable from the output.
    nodes: dict[int, Node] = {}
    stack = [output.node]
    while stack:
        node = stack.pop()
        if node.index in nodes:
            continue
        nodes[node.index] = node
        stack.extend(p.node for p in node.parents if p.node is not None)

    targets = {t.node.index for t in wrt}
    missing = targets - nodes.keys()
    if missing:
        raise ValueError(f"{len(missing)} differentiation target(s) unreachable from output")

    # A node is relevant if some target is among its ancestors (or itself).
    order = sorted(nodes)
    relevant: set[int] = set()
    for idx in order:
        node = nodes[idx]
        if idx in targets or any(p.node is not None and p.node.index in relevant
                                 for p in node.parents):
            relevant.add(idx)

    grads: dict[int, Tensor] = {}
    with _grad_mode(create_graph):
        grads[output.node.index] = Tensor(np.ones_like(output.data))
        for idx in reversed(order):
            if idx not in relevant or idx not in grads:
                continue
            node = nodes[idx]
            if not node.parents:
                continue
            g = grads[idx] if idx in targets else grads.pop(idx)
            needs = tuple(p.node is not None and p.node.index in relevant for p in node.parents)
            contribs = node.vjp(g, needs)
            for parent, need, gp in zip(node.parents, needs, contribs):
                if not need or gp is None:
                    continue
                pid = parent.node.index
                grads[pid] = add(grads[pid], gp) if pid in grads else gp

    result = []
    for t in wrt:
        g = grads.get(t.node.index)
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif g.shape != t.shape:
            g = Tensor(np.broadcast_to(g.data, t.shape).copy())
        result.append(g if create_graph else Tensor(g.data))
    return result


def fd_grad(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of one tensor."""
    if h <= 0:
        raise ValueError("step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    out = np.empty_like(base)
    flat = base.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tensor(base.copy())))
        flat[i] = orig - h
        fm = _scalar(f(Tensor(base.copy())))
        flat[i] = orig
        res[i] = (fp - fm) / (2 * h)
    return out


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)
