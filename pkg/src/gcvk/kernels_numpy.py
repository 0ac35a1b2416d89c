"""Pure-numpy implementations of the loop-heavy kernels.

Shapes follow the convention used by the tensor ops:
conv2d: x (B, Cin, H, W), w (Cout, Cin/groups, kh, kw).
selective scan: x/delta (B, C, T), A (C, M), B/C (B, M, T), D (C,).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view (B, C, Ho, Wo, kh, kw) over a padded input."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, ph, pw, groups):
    B, cin, _, _ = x.shape
    cout, cpg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    wing = win.reshape(B, groups, cpg, ho, wo, kh, kw)
    wg = w.reshape(groups, cout // groups, cpg, kh, kw)
    y = np.einsum("bgchwij,gocij->bgohw", wing, wg, optimize=True)
    return np.ascontiguousarray(y.reshape(B, cout, ho, wo))


def conv2d_backward(gy, x, w, stride, ph, pw, groups):
    B, cin, H, W = x.shape
    cout, cpg, kh, kw = w.shape
    _, _, ho, wo = gy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _windows(xp, kh, kw, stride)
    wing = win.reshape(B, groups, cpg, ho, wo, kh, kw)
    gyg = gy.reshape(B, groups, cout // groups, ho, wo)
    wg = w.reshape(groups, cout // groups, cpg, kh, kw)

    gw = np.einsum("bgchwij,bgohw->gocij", wing, gyg, optimize=True)
    gw = np.ascontiguousarray(gw.reshape(cout, cpg, kh, kw))

    gxp = np.zeros_like(xp)
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            t = np.einsum("bgohw,goc->bgchw", gyg, wg[:, :, :, i, j],
                          optimize=True)
            gxp[:, :, i:i + hspan:stride, j:j + wspan:stride] += (
                t.reshape(B, cin, ho, wo))
    gx = gxp[:, :, ph:ph + H, pw:pw + W]
    return np.ascontiguousarray(gx), gw


def maxpool2d_forward(x, kernel, stride, pad):
    neg = np.finfo(x.dtype).min
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                constant_values=neg)
    win = _windows(xp, kernel, kernel, stride)
    B, C, ho, wo = win.shape[:4]
    flat = win.reshape(B, C, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad):
    B, C, H, W = x_shape
    _, _, ho, wo = gy.shape
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for idx in range(kernel * kernel):
        i, j = divmod(idx, kernel)
        contrib = np.where(arg == idx, gy, 0)
        gxp[:, :, i:i + hspan:stride, j:j + wspan:stride] += contrib
    gx = gxp[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(gx)


def selective_scan_forward(x, delta, A, Bm, Cm, D, save_state):
    """Diagonal-state linear recurrence with zero-order-hold discretization.

    Returns (y, hs) where hs is the full state trajectory (B, T, C, M)
    when save_state, else None.
    """
    B, C, T = x.shape
    M = A.shape[1]
    h = np.zeros((B, C, M), dtype=x.dtype)
    y = np.empty_like(x)
    hs = np.empty((B, T, C, M), dtype=x.dtype) if save_state else None
    for t in range(T):
        z = delta[:, :, t, None] * A[None]
        ab = np.exp(z)
        bb = np.expm1(z) / A[None] * Bm[:, None, :, t]
        h = ab * h + bb * x[:, :, t, None]
        if save_state:
            hs[:, t] = h
        y[:, :, t] = np.einsum("bcm,bm->bc", h, Cm[:, :, t]) + D * x[:, :, t]
    return y, hs


def selective_scan_backward(gy, x, delta, A, Bm, Cm, D, hs):
    B, C, T = x.shape
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(Bm)
    gC = np.zeros_like(Cm)
    gD = np.zeros_like(D)
    gh = np.zeros((B, C, A.shape[1]), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        h_t = hs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(h_t)
        gyt = gy[:, :, t]
        gh = gh + gyt[:, :, None] * Cm[:, None, :, t]
        gC[:, :, t] += np.einsum("bc,bcm->bm", gyt, h_t)
        gD += (gyt * x[:, :, t]).sum(axis=0)
        gx[:, :, t] += gyt * D[None]

        z = delta[:, :, t, None] * A[None]
        ab = np.exp(z)
        e1 = np.expm1(z)
        bmt = Bm[:, None, :, t]
        bb = e1 / A[None] * bmt
        gab = gh * h_prev
        gbb = gh * x[:, :, t, None]
        gx[:, :, t] += (gh * bb).sum(axis=-1)
        gz = gab * ab + gbb * (ab / A[None]) * bmt
        gB[:, :, t] += (gbb * e1 / A[None]).sum(axis=1)
        gA += (gz * delta[:, :, t, None]
               - gbb * e1 / (A * A)[None] * bmt).sum(axis=0)
        gdelta[:, :, t] = (gz * A[None]).sum(axis=-1)
        gh = gh * ab
    return gx, gdelta, gA, gB, gC, gD
