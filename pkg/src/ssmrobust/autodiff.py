"""Dense float32 tensors with reverse-mode differentiation.

Tensors wrap row-major ``float32`` arrays; every differentiable primitive
records itself on the active :class:`GradientTape`, and ``gradients`` replays
the records in exact reverse execution order. Values are stored in 32-bit
IEEE-754 throughout so downstream bit-level fault injection has a defined
layout; ops never trap on NaN/Inf and simply propagate them.

The public matrix product accumulates left-to-right over the inner dimension
(one rank-1 update per step), which makes results bit-identical to a naive
sequential triple loop and reproducible across runs.
"""

import threading

import numpy as np

from .errors import DimensionError, MissingRootError, TapeError

DTYPE = np.float32

def _quiet():
    return np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore")


class Tensor:
    """Immutable dense array of float32 values with a shape."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype=float32)"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


_STACK = threading.local()


def _tape_stack():
    if not hasattr(_STACK, "tapes"):
        _STACK.tapes = []
    return _STACK.tapes


def active_tape():
    """The innermost open tape in this thread, or None."""
    tapes = _tape_stack()
    return tapes[-1] if tapes else None


def record(out: Tensor, parents, backward) -> None:
    """Register a primitive on the active tape, if any.

    ``backward(grad_out)`` must return one gradient array (or None) per
    parent. Fused primitives outside this module use this hook.
    """
    tape = active_tape()
    if tape is not None:
        tape._append(out, tuple(parents), backward)


class GradientTape:
    """Ordered record of executed primitives plus the marked roots."""

    def __init__(self):
        self._records = []
        self._produced = set()
        self._watched = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("gradient tapes must be closed in LIFO order")
        stack.pop()
        return False

    def watch(self, tensor: Tensor) -> None:
        """Mark a tensor as a differentiation root."""
        self._watched[id(tensor)] = tensor

    def _append(self, out, parents, backward):
        self._records.append((out, parents, backward))
        self._produced.add(id(out))

    def gradients(self, loss: Tensor, roots=None):
        """Gradients of a scalar loss with respect to each root.

        Replays the tape in exact reverse execution order; unreachable roots
        receive zero gradients. The tape is reset afterwards.
        """
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise TapeError("loss was not produced on this tape")
        if roots is None:
            roots = list(self._watched.values())
        else:
            roots = list(roots)
            for r in roots:
                if id(r) not in self._watched:
                    raise MissingRootError(
                        "root was not watched before the forward pass"
                    )

        grads = {id(loss): np.ones_like(loss.data)}
        with _quiet():
            for out, parents, backward in reversed(self._records):
                g = grads.pop(id(out), None)
                if g is None:
                    continue
                for parent, pg in zip(parents, backward(g)):
                    if parent is None or pg is None:
                        continue
                    pid = id(parent)
                    if pid in grads:
                        grads[pid] = grads[pid] + pg
                    else:
                        grads[pid] = pg

        result = {}
        for r in roots:
            g = grads.get(id(r))
            result[r] = Tensor(g if g is not None else np.zeros_like(r.data))
        self._records.clear()
        self._produced.clear()
        return result


def _as_array(value):
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=DTYPE)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(grad.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.asarray(grad, dtype=DTYPE).reshape(shape)


def _binary(a, b, fwd, bwd_a, bwd_b):
    ta = a if isinstance(a, Tensor) else Tensor(a)
    tb = b if isinstance(b, Tensor) else Tensor(b)
    try:
        with _quiet():
            out = Tensor(fwd(ta.data, tb.data))
    except ValueError as exc:
        raise DimensionError(
            f"shapes {ta.shape} and {tb.shape} are not broadcastable"
        ) from exc

    def backward(g):
        return (
            _unbroadcast(bwd_a(g, ta.data, tb.data), ta.shape),
            _unbroadcast(bwd_b(g, ta.data, tb.data), tb.shape),
        )

    record(out, (ta, tb), backward)
    return out


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    record(out, (x,), lambda g: (-g,))
    return out


def exp(x: Tensor) -> Tensor:
    with _quiet():
        out = Tensor(np.exp(x.data))
    record(out, (x,), lambda g: (g * out.data,))
    return out


def _sigmoid(arr):
    # tanh-based form is overflow-free on both tails
    return DTYPE(0.5) * (np.tanh(DTYPE(0.5) * arr) + DTYPE(1.0))


def sigmoid(x: Tensor) -> Tensor:
    with _quiet():
        s = _sigmoid(x.data)
    out = Tensor(s)
    record(out, (x,), lambda g: (g * (s * (1 - s)),))
    return out


def silu(x: Tensor) -> Tensor:
    with _quiet():
        s = _sigmoid(x.data)
        out = Tensor(x.data * s)

    def backward(g):
        return (g * (s * (1 + x.data * (1 - s))),)

    record(out, (x,), backward)
    return out


def softplus(x: Tensor) -> Tensor:
    with _quiet():
        out = Tensor(np.logaddexp(DTYPE(0.0), x.data))
        s = _sigmoid(x.data)
    record(out, (x,), lambda g: (g * s,))
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the interval."""
    out = Tensor(np.clip(x.data, DTYPE(lo), DTYPE(hi)))
    inside = (x.data >= DTYPE(lo)) & (x.data <= DTYPE(hi))

    def backward(g):
        return (g * inside,)

    record(out, (x,), backward)
    return out


def _mm_seq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with left-to-right accumulation over the inner dim.

    Bit-identical to a sequential triple-loop product; the fixed summation
    order is what makes seeded experiments reproducible at the bit level.
    """
    m, k = a.shape
    _, n = b.shape
    acc = np.zeros((m, n), dtype=DTYPE)
    with _quiet():
        for t in range(k):
            acc += a[:, t : t + 1] * b[t : t + 1, :]
    return acc


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = Tensor(_mm_seq(a.data, b.data))

    def backward(g):
        with _quiet():
            da = np.einsum("mn,kn->mk", g, b.data)
            db = np.einsum("mk,mn->kn", a.data, g)
        return da.astype(DTYPE, copy=False), db.astype(DTYPE, copy=False)

    record(out, (a, b), backward)
    return out


def transpose(x: Tensor, axes=None) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    record(out, (x,), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    record(out, (x,), lambda g: (g.reshape(x.shape),))
    return out


def mean_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = Tensor(x.data.mean(axis=axis, dtype=DTYPE))

    def backward(g):
        ge = np.expand_dims(g, axis) / DTYPE(n)
        return (np.broadcast_to(ge, x.shape).astype(DTYPE, copy=False),)

    record(out, (x,), backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=DTYPE)))

    def backward(g):
        return (np.full(x.shape, g, dtype=DTYPE),)

    record(out, (x,), backward)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match "
            f"feature dim {x.shape[-1]}"
        )
    with _quiet():
        mu = x.data.mean(axis=-1, keepdims=True, dtype=DTYPE)
        centered = x.data - mu
        var = (centered * centered).mean(axis=-1, keepdims=True, dtype=DTYPE)
        inv_std = DTYPE(1.0) / np.sqrt(var + DTYPE(eps))
        xhat = centered * inv_std
        out = Tensor(gamma.data * xhat + beta.data)

    def backward(g):
        with _quiet():
            lead = tuple(range(g.ndim - 1))
            dgamma = (g * xhat).sum(axis=lead, dtype=DTYPE)
            dbeta = g.sum(axis=lead, dtype=DTYPE)
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True, dtype=DTYPE)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True, dtype=DTYPE)
            dx = inv_std * (dxhat - m1 - xhat * m2)
        return dx.astype(DTYPE, copy=False), dgamma, dbeta

    record(out, (x, gamma, beta), backward)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    b, c, _, _ = xp.shape
    cols = np.empty((b, ho, wo, c, kh, kw), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            sub = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
            cols[:, :, :, :, i, j] = sub.transpose(0, 2, 3, 1)
    return cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [O,C,kh,kw] kernels."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    b, c, h, width = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"input channels {c} do not match kernel channels {cw}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > width + 2 * pad:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{width + 2 * pad}"
        )
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (width + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    cols2d = cols.reshape(b * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    prod = _mm_seq(cols2d, np.ascontiguousarray(wmat.T))
    out = Tensor(np.ascontiguousarray(prod.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)))

    def backward(g):
        with _quiet():
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, o)
            dw = np.einsum("po,pk->ok", g2, cols2d).astype(DTYPE, copy=False)
            dcols = np.einsum("po,ok->pk", g2, wmat).astype(DTYPE, copy=False)
            dcols = dcols.reshape(b, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, pad : pad + h, pad : pad + width] if pad else dxp
        return np.ascontiguousarray(dx), dw.reshape(w.shape)

    record(out, (x, w), backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c})")

    with _quiet():
        m = logits.data.max(axis=1, keepdims=True)
        z = logits.data - m
        ez = np.exp(z)
        denom = ez.sum(axis=1, keepdims=True, dtype=DTYPE)
        log_probs = z - np.log(denom)
        picked = log_probs[np.arange(b), labels]
        out = Tensor(np.asarray(-picked.mean(dtype=DTYPE)))

    def backward(g):
        with _quiet():
            p = ez / denom
            p[np.arange(b), labels] -= DTYPE(1.0)
            return (g * p / DTYPE(b),)

    record(out, (logits,), backward)
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a raw array (no tape); used by diagnostics."""
    with _quiet():
        m = logits.max(axis=1, keepdims=True)
        ez = np.exp(logits - m)
        return ez / ez.sum(axis=1, keepdims=True, dtype=DTYPE)
