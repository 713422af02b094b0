"""Reverse-mode automatic differentiation over numpy arrays.

Desk-scale tape engine: enough operations to express the shallow channel
mixing stacks, the patch-pooled discriminator heads, the degradation
operator, and every masked distance used by the training objectives.
Nothing here assumes a particular network; layers are built from these
primitives in ``models``.

Conventions
-----------
* ``Tensor`` wraps a floating ``np.ndarray``. float64 is the default;
  float32 data stays float32 so memory-bound training can opt into it.
  Operands that are plain arrays or Python scalars are treated as
  constants: no gradient flows into them.
* ``backward()`` may only be called on a scalar-valued tensor. Gradients
  accumulate into ``.grad`` of every tensor on the tape; callers read the
  ones they care about (the parameter leaves).
* Broadcasting follows numpy; backward sums gradients over broadcast axes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # collapse leading axes numpy added
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # collapse axes that were stretched from size 1
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_bwd")
    # keep numpy from intercepting arithmetic with ndarray on the left
    __array_ufunc__ = None

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        bwd: Callable[[Array], tuple[Array, ...]] | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Array | None = None
        self._parents = parents
        self._bwd = bwd

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant tensor sharing this one's values; gradients stop here."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the tape")
        return mul(self, 1.0 / float(other))

    def abs(self):
        return habs(self)

    def mean(self):
        return mean(self)

    def sum(self):
        return tsum(self)

    # -- backward ------------------------------------------------------

    def backward(self) -> None:
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        # iterative topological order over the tape
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._bwd(node.grad)):
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad = parent.grad + g


def _value(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (bool, int, float)):
        # Python scalars stay weak so they never widen float32 operands
        # (a 0-d float64 array would force promotion).
        return float(x)
    arr = np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


# ---------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------


def add(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av + bv
    parents, grads = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        grads.append(lambda g, s=av.shape: _unbroadcast(g, s))
    if isinstance(b, Tensor):
        parents.append(b)
        grads.append(lambda g, s=bv.shape: _unbroadcast(g, s))
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def neg(a) -> Tensor:
    if not isinstance(a, Tensor):
        return Tensor(-_value(a))
    return Tensor(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av * bv
    parents, grads = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        grads.append(lambda g, o=bv, s=av.shape: _unbroadcast(g * o, s))
    if isinstance(b, Tensor):
        parents.append(b)
        grads.append(lambda g, o=av, s=bv.shape: _unbroadcast(g * o, s))
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def habs(a) -> Tensor:
    """Elementwise absolute value; subgradient 0 at the origin."""
    if not isinstance(a, Tensor):
        return Tensor(np.abs(_value(a)))
    sign = np.sign(a.data)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a) -> Tensor:
    if not isinstance(a, Tensor):
        return Tensor(_value(a) ** 2)
    return Tensor(a.data**2, (a,), lambda g: (2.0 * g * a.data,))


def mean(a) -> Tensor:
    if not isinstance(a, Tensor):
        return Tensor(np.mean(_value(a)))
    n = a.data.size
    return Tensor(
        np.mean(a.data),
        (a,),
        lambda g: (np.full(a.data.shape, float(g) / n, dtype=a.data.dtype),),
    )


def tsum(a) -> Tensor:
    if not isinstance(a, Tensor):
        return Tensor(np.sum(_value(a)))
    return Tensor(
        np.sum(a.data),
        (a,),
        lambda g: (np.full(a.data.shape, float(g), dtype=a.data.dtype),),
    )


def tanh(a) -> Tensor:
    if not isinstance(a, Tensor):
        return Tensor(np.tanh(_value(a)))
    t = np.tanh(a.data)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a) -> Tensor:
    def _sig(x: Array) -> Array:
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    if not isinstance(a, Tensor):
        return Tensor(_sig(_value(a)))
    s = _sig(a.data)
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------
# structured primitives for the layer stacks
# ---------------------------------------------------------------------


def channel_mix(x, w) -> Tensor:
    """1x1 channel mixing: (H, W, Cin) @ (Cin, Cout) -> (H, W, Cout)."""
    xv, wv = _value(x), _value(w)
    if xv.ndim != 3 or wv.ndim != 2 or xv.shape[2] != wv.shape[0]:
        raise ShapeError(
            f"channel_mix expects (H,W,Cin) and (Cin,Cout); got {xv.shape} and {wv.shape}"
        )
    h, w_, cin = xv.shape
    # One flat GEMM beats a broadcast matmul over rows.
    xf = xv.reshape(-1, cin)
    out = (xf @ wv).reshape(h, w_, wv.shape[1])
    parents, grads = [], []
    if isinstance(x, Tensor):
        parents.append(x)
        grads.append(lambda g: (g.reshape(-1, wv.shape[1]) @ wv.T).reshape(xv.shape))
    if isinstance(w, Tensor):
        parents.append(w)
        grads.append(lambda g: xf.T @ g.reshape(-1, wv.shape[1]))
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def depthwise3(x, k) -> Tensor:
    """Depthwise 3x3 correlation with zero 'same' padding.

    ``k`` has shape (3, 3, C) and mixes nothing across channels.
    """
    xv, kv = _value(x), _value(k)
    if xv.ndim != 3 or kv.shape != (3, 3, xv.shape[2]):
        raise ShapeError(
            f"depthwise3 expects (H,W,C) and (3,3,C); got {xv.shape} and {kv.shape}"
        )
    h, w, c = xv.shape
    k9 = kv.reshape(9, c)
    xp = np.zeros((h + 2, w + 2, c), dtype=xv.dtype)
    xp[1 : h + 1, 1 : w + 1] = xv
    # Stack the nine taps once; a single einsum over the tap axis is
    # markedly faster than nine broadcast multiply-accumulates.
    taps = np.stack(
        [xp[u : u + h, v : v + w] for u in range(3) for v in range(3)]
    )
    out = np.einsum("uhwc,uc->hwc", taps, k9)

    parents, grads = [], []
    if isinstance(x, Tensor):

        def _dx(g: Array) -> Array:
            gp = np.zeros((h + 2, w + 2, c), dtype=g.dtype)
            gp[1 : h + 1, 1 : w + 1] = g
            # transposed correlation: flipped offsets
            gtaps = np.stack(
                [
                    gp[2 - u : 2 - u + h, 2 - v : 2 - v + w]
                    for u in range(3)
                    for v in range(3)
                ]
            )
            return np.einsum("uhwc,uc->hwc", gtaps, k9)

        parents.append(x)
        grads.append(_dx)
    if isinstance(k, Tensor):

        def _dk(g: Array) -> Array:
            return np.einsum("hwc,uhwc->uc", g, taps).reshape(3, 3, c)

        parents.append(k)
        grads.append(_dk)
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def avg_pool(x, p: int) -> Tensor:
    """Non-overlapping p x p mean pooling over the spatial axes."""
    xv = _value(x)
    if xv.ndim != 3:
        raise ShapeError(f"avg_pool expects (H,W,C); got {xv.shape}")
    h, w, c = xv.shape
    if h % p or w % p:
        raise ShapeError(f"avg_pool: spatial dims {h}x{w} not divisible by {p}")
    out = xv.reshape(h // p, p, w // p, p, c).mean(axis=(1, 3))
    if not isinstance(x, Tensor):
        return Tensor(out)

    def _dx(g: Array) -> Array:
        return np.repeat(np.repeat(g, p, axis=0), p, axis=1) / (p * p)

    return Tensor(out, (x,), lambda g: (_dx(g),))


def patch_score(feats, w, b) -> Tensor:
    """Per-location affine score: (h, w, F) . (F,) + b -> (h, w)."""
    fv, wv, bv = _value(feats), _value(w), _value(b)
    if fv.ndim != 3 or wv.shape != (fv.shape[2],):
        raise ShapeError(
            f"patch_score expects (h,w,F) and (F,); got {fv.shape} and {wv.shape}"
        )
    out = fv @ wv + float(bv)
    parents, grads = [], []
    if isinstance(feats, Tensor):
        parents.append(feats)
        grads.append(lambda g: g[:, :, None] * wv[None, None, :])
    if isinstance(w, Tensor):
        parents.append(w)
        grads.append(lambda g: np.einsum("hwf,hw->f", fv, g))
    if isinstance(b, Tensor):
        parents.append(b)
        grads.append(lambda g: np.asarray(g.sum()).reshape(bv.shape))
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def gaussian_kernel1d(sigma: float) -> Array:
    """Normalized 1-D Gaussian taps truncated at three standard deviations."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def blur_same(x, kernel1d: Array) -> Tensor:
    """Separable symmetric blur with zero 'same' padding on the two leading axes.

    With a symmetric kernel and zero padding the operator is self-adjoint,
    so the backward pass applies the identical blur to the gradient.
    """
    kernel1d = np.asarray(kernel1d, dtype=np.float64)
    if not np.allclose(kernel1d, kernel1d[::-1]):
        raise ShapeError("blur_same requires a symmetric kernel")
    kernel1d = kernel1d.astype(np.result_type(_value(x)), copy=False)

    def _apply(v: Array) -> Array:
        out = correlate1d(v, kernel1d, axis=0, mode="constant", cval=0.0)
        return correlate1d(out, kernel1d, axis=1, mode="constant", cval=0.0)

    xv = _value(x)
    out = _apply(xv)
    if not isinstance(x, Tensor):
        return Tensor(out)
    return Tensor(out, (x,), lambda g: (_apply(g),))
