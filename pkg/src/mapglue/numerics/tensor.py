"""Dense tensors with a dynamic reverse-mode tape.

Every op returns a new :class:`Tensor`; nothing that sits on the tape is ever
mutated in place.  Shapes must conform exactly, the only broadcast allowed is
the bias row added by :func:`linear` / :func:`layer_norm` (and constant masks
or rotation tables, which never receive gradients).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "affine",
    "concat",
    "relu",
    "softmax",
    "inner",
    "linear",
    "layer_norm",
    "l2_normalize",
    "log",
    "sum",
    "reshape",
    "transpose",
    "rotary",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable taping inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An n-d float array that can take part in reverse-mode differentiation.

    ``grad`` is allocated for leaves created with ``requires_grad=True`` and
    accumulates across calls to :meth:`backward` until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, *, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''} of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar for the common same-shape cases
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return affine(self, float(other), 0.0)
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = node.grad + g if node.grad is not None else g.copy()
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"internal: gradient shape {pg.shape} != {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.dtype if like is not None else np.float64)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, name: str) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name} produced non-finite output (shape {data.shape})")
    if not needs:
        return Tensor(data, name=name)
    return Tensor(data, requires_grad=True, name=name, _parents=tuple(parents), _backward=backward)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def affine(a: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * a + shift`` with constant scalars."""
    return _make(a.data * scale + shift, (a,), lambda g: (g * scale,), "affine")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped to ``>= floor`` (zero grad where clamped)."""
    clipped = np.maximum(a.data, floor)
    live = a.data > floor
    return _make(np.log(clipped), (a,), lambda g: (np.where(live, g / clipped, 0).astype(a.dtype),), "log")


# ---------------------------------------------------------------------------
# reductions / structure


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.sum(a.data, axis=axis)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.full(shape, g, dtype=a.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), back, "sum")


def inner(a: Tensor, b: Tensor) -> Tensor:
    """Inner product along the last axis."""
    _same_shape("inner", a, b)
    ad, bd = a.data, b.data
    out = np.sum(ad * bd, axis=-1)

    def back(g):
        g = np.expand_dims(g, -1)
        return g * bd, g * ad

    return _make(np.asarray(out, dtype=a.dtype), (a, b), back, "inner")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (last by default)."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    ax = axis % parts[0].data.ndim
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref} vs {p.shape} along axis {ax}")
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, back, "concat")


def reshape(a: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.data.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matmul, or batched 3-d matmul with equal batch extents."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` applied to every row of ``x`` (N x in -> N x out)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, back, "linear")


# ---------------------------------------------------------------------------
# normalisation


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` (boolean, broadcastable to ``a``) marks the admissible entries;
    the rest get exactly zero probability.  Every slice must keep at least
    one admissible entry.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax: a slice has no admissible entry")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = (e / np.sum(e, axis=axis, keepdims=True)).astype(a.dtype)

    def back(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), back, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalisation with affine gain/bias."""
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[1]

    def back(g):
        gx_hat = g * gd
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=1, keepdims=True) - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True))
        return gx.astype(xd.dtype), (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make((xhat * gd + beta.data).astype(xd.dtype), (x, gamma, beta), back, "layer_norm")


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale every row (last axis) to unit Euclidean norm."""
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = xd / denom

    def back(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (np.where(norm > eps, (g - y * dot) / denom, g / denom).astype(xd.dtype),)

    return _make(y.astype(xd.dtype), (x,), back, "l2_normalize")


# ---------------------------------------------------------------------------
# rotary encoding


def rotary(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive feature pairs ``(2k, 2k+1)`` by per-row angles.

    ``x`` is ``(..., N, d)``; ``cos``/``sin`` are constant ``(N, d/2)`` tables.
    """
    xd = x.data
    if xd.shape[-1] % 2 or cos.shape != (xd.shape[-2], xd.shape[-1] // 2) or sin.shape != cos.shape:
        raise ShapeError(f"rotary: features {x.shape} vs tables {cos.shape}/{sin.shape}")
    c = cos.astype(xd.dtype)
    s = sin.astype(xd.dtype)

    def rot(v, sgn):
        ev, od = v[..., 0::2], v[..., 1::2]
        out = np.empty_like(v)
        out[..., 0::2] = ev * c - sgn * od * s
        out[..., 1::2] = sgn * ev * s + od * c
        return out

    return _make(rot(xd, 1.0), (x,), lambda g: (rot(g, -1.0),), "rotary")
