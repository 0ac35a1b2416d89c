"""Differentiable primitives over Tensor.

Every function validates its preconditions, computes the forward value
with numpy (or a dispatched hot kernel), and — when a Tape is active and
an input requires gradients — records a backward closure.  Reductions
use numpy's fixed index-order accumulation so repeated runs are
bit-identical.
"""

from __future__ import annotations

import contextlib
import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf as _erf

from . import kernels
from .errors import NumericError, ShapeError, UsageError
from .tensor import Tape, Tensor, same_dtype

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# recording / broadcasting helpers

def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    rq = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rq)
    tape = Tape.current()
    if tape is not None and rq:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _scalar(x, dtype) -> np.ndarray:
    return np.asarray(x, dtype=dtype)


# ---------------------------------------------------------------------------
# operation counter (multiply-accumulate counts for matmul/linear and conv)

class OpCounter:
    def __init__(self):
        self.macs = 0


_counters: list[OpCounter] = []


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of matmul/conv2d executed in this scope."""
    c = OpCounter()
    _counters.append(c)
    try:
        yield c
    finally:
        _counters.pop()


def _add_macs(n: int) -> None:
    for c in _counters:
        c.macs += n


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = _scalar(b, a.dtype)
        return _record(a.data + bv, (a,), lambda g: (g,))
    same_dtype(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = _scalar(b, a.dtype)
        return _record(a.data - bv, (a,), lambda g: (g,))
    same_dtype(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = _scalar(b, a.dtype)
        return _record(a.data * bv, (a,), lambda g: (g * bv,))
    same_dtype(a, b)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = _scalar(b, a.dtype)
        return _record(a.data / bv, (a,), lambda g: (g / bv,))
    same_dtype(a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def powf(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# matmul / linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(
            f"matmul leading extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    _add_macs(int(np.prod(out.shape[:-2], dtype=np.int64)) * m * k * n)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x @ w + b, w of shape (in, out)."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


# ---------------------------------------------------------------------------
# shaping

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    src = a.shape
    return _record(out, (a,), lambda g: (g.reshape(src),))


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis "
            f"{axis} of {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[sl] = g
        return (gx,)

    return _record(out, (a,), backward)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    n = a.shape[axis]
    if n % sections != 0:
        raise ShapeError(f"cannot split axis of extent {n} into {sections}")
    step = n // sections
    return [narrow(a, axis, i * step, step) for i in range(sections)]


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    same_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * t.ndim
            sl[axis] = slice(start, stop)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return grads

    return _record(out, tuple(tensors), backward)


def repeat_interleave0(a: Tensor, reps: int) -> Tensor:
    """Repeat each leading-axis slice `reps` times consecutively."""
    out = np.repeat(a.data, reps, axis=0)
    lead = a.shape[0]

    def backward(g):
        return (g.reshape((lead, reps) + a.shape[1:]).sum(axis=1),)

    return _record(out, (a,), backward)


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-d table by an integer index array."""
    if table.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-d table, got {table.shape}")
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), backward)


# ---------------------------------------------------------------------------
# reductions

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, a.shape).astype(a.dtype, copy=True),)

    return _record(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def global_avg_pool(x: Tensor, keepdims: bool = False) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B,C,H,W), got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=keepdims)


# ---------------------------------------------------------------------------
# activations

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _record(out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    out = a.data * s
    return _record(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out = a.data * phi_cdf

    def backward(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (phi_cdf + a.data * pdf),)

    return _record(out.astype(a.dtype), (a,), backward)


def softplus(a: Tensor) -> Tensor:
    out = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0)
    return _record(out, (a,), lambda g: (g * _sigmoid_np(a.data),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _record(out, (a,), lambda g: (g / a.data,))


# ---------------------------------------------------------------------------
# softmax family

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(a.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(a.data).any():
        raise NumericError("log_softmax input contains NaN")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor,
              eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then affine."""
    same_dtype(x, gamma, beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(
            f"layernorm affine params must have shape ({C},), got "
            f"{gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise UsageError("layernorm eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dgamma = (g * xhat).reshape(-1, C).sum(axis=0)
        dbeta = g.reshape(-1, C).sum(axis=0)
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolution / pooling (dispatched hot kernels)

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding=0, groups: int = 1) -> Tensor:
    """Cross-correlation with zero padding (the usual DL "convolution")."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d x and w, got {x.shape} and {w.shape}")
    parts = (x, w) if bias is None else (x, w, bias)
    same_dtype(*parts)
    B, cin, H, W = x.shape
    cout, cpg, kh, kw = w.shape
    if cin % groups != 0 or cout % groups != 0:
        raise ShapeError(
            f"channels not divisible by groups: cin={cin}, cout={cout}, "
            f"groups={groups}")
    if cpg != cin // groups:
        raise ShapeError(
            f"weight expects {cpg} channels/group, input provides "
            f"{cin // groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},)")
    ph, pw = _pair(padding)
    y = kernels.conv2d_forward(x.data, w.data, stride, ph, pw, groups)
    ho, wo = y.shape[2], y.shape[3]
    _add_macs(B * cout * cpg * kh * kw * ho * wo)
    if bias is not None:
        y = y + bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gx, gw = kernels.conv2d_backward(g, x.data, w.data, stride, ph, pw,
                                         groups)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record(y, parts, backward)


def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2,
              padding: int = 1) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (B,C,H,W), got {x.shape}")
    y, arg = kernels.maxpool2d_forward(x.data, kernel, stride, padding)
    x_shape = x.shape

    def backward(g):
        return (kernels.maxpool2d_backward(g, arg, x_shape, kernel, stride,
                                           padding),)

    return _record(y, (x,), backward)


def conv1d_depthwise(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
                     causal: bool = False) -> Tensor:
    """Depthwise 1-d convolution over (B, C, T), kernel (C, k).

    Non-causal uses symmetric same padding (odd k); causal pads on the
    left only, so position t never sees inputs after t.
    """
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(
            f"conv1d_depthwise expects (B,C,T) and (C,k), got {x.shape} "
            f"and {w.shape}")
    B, C, T = x.shape
    k = w.shape[1]
    if w.shape[0] != C:
        raise ShapeError(f"kernel channels {w.shape[0]} != input {C}")
    x4 = reshape(x, (B, C, 1, T))
    w4 = reshape(w, (C, 1, 1, k))
    if causal:
        zeros = Tensor(np.zeros((B, C, 1, k - 1), dtype=x.dtype))
        x4 = concat([zeros, x4], axis=3)
        y = conv2d(x4, w4, bias, stride=1, padding=(0, 0), groups=C)
    else:
        if k % 2 != 1:
            raise ShapeError("same-padded conv1d needs an odd kernel")
        y = conv2d(x4, w4, bias, stride=1, padding=(0, k // 2), groups=C)
    return reshape(y, (B, C, T))


# ---------------------------------------------------------------------------
# selective scan (dispatched hot kernel)

def selective_scan(x: Tensor, delta: Tensor, A: Tensor, Bm: Tensor,
                   Cm: Tensor, D: Tensor) -> Tensor:
    """Input-dependent diagonal linear recurrence.

    x, delta: (B, C, T); A: (C, M) strictly negative; Bm, Cm: (B, M, T);
    D: (C,) skip.  Per step: h = exp(dA) h + (exp(dA)-1)/A * B * x and
    y = C . h + D x.
    """
    same_dtype(x, delta, A, Bm, Cm, D)
    B, C, T = x.shape
    M = A.shape[1]
    if delta.shape != (B, C, T):
        raise ShapeError(f"delta shape {delta.shape} != x shape {x.shape}")
    if A.shape != (C, M):
        raise ShapeError(f"A must be (C, M) with C={C}, got {A.shape}")
    if Bm.shape != (B, M, T) or Cm.shape != (B, M, T):
        raise ShapeError(
            f"B/C must be ({B},{M},{T}), got {Bm.shape} and {Cm.shape}")
    if D.shape != (C,):
        raise ShapeError(f"D must be ({C},), got {D.shape}")
    if not np.isfinite(delta.data).all():
        raise NumericError("selective_scan: non-finite step sizes")
    if (delta.data <= 0).any():
        raise NumericError("selective_scan: step sizes must be positive")
    if (A.data >= 0).any():
        raise NumericError("selective_scan: state matrix must be negative")

    inputs = (x, delta, A, Bm, Cm, D)
    save = Tape.current() is not None and any(t.requires_grad for t in inputs)
    y, hs = kernels.selective_scan_forward(
        x.data, delta.data, A.data, Bm.data, Cm.data, D.data, save)

    def backward(g):
        return kernels.selective_scan_backward(
            g, x.data, delta.data, A.data, Bm.data, Cm.data, D.data, hs)

    return _record(y, inputs, backward)


# ---------------------------------------------------------------------------
# losses

def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels against (B, K) logits."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B,K) logits, got "
                         f"{logits.shape}")
    B, K = logits.shape
    labels = np.asarray(labels)
    onehot = np.zeros((B, K), dtype=logits.dtype)
    onehot[np.arange(B), labels] = 1.0
    lsm = log_softmax(logits, axis=-1)
    picked = tensor_sum(mul(lsm, Tensor(onehot)))
    return mul(picked, -1.0 / B)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

def _attach():
    Tensor.__add__ = add
    Tensor.__radd__ = add
    Tensor.__sub__ = sub
    Tensor.__rsub__ = lambda a, b: add(neg(a), b)
    Tensor.__mul__ = mul
    Tensor.__rmul__ = mul
    Tensor.__truediv__ = div
    Tensor.__rtruediv__ = lambda a, b: mul(powf(a, -1.0), b)
    Tensor.__neg__ = neg
    Tensor.__matmul__ = matmul
    Tensor.reshape = reshape
    Tensor.permute = permute
    Tensor.sum = tensor_sum
    Tensor.mean = mean


_attach()
