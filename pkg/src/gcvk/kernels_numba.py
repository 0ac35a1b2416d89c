"""Numba @njit implementations of the loop-heavy kernels.

Same signatures and semantics as kernels_numpy.  Parallel loops are only
used where each iteration owns its output slice, so results are
bit-reproducible run to run regardless of scheduling.
"""

from __future__ import annotations

import math

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

# the bundled TBB is too old on some hosts; OMP is present and race-free
# for our owner-computes loops
_numba_config.THREADING_LAYER = "omp"


@njit(cache=True, parallel=True)
def _conv2d_fwd(xp, w, y, stride, cpg, cout_g):
    B, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    ho, wo = y.shape[2], y.shape[3]
    for b in prange(B):
        for co in range(cout):
            g = co // cout_g
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for c in range(cpg):
                        ci = g * cpg + c
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[b, ci, oh * stride + i,
                                           ow * stride + j]
                                        * w[co, c, i, j])
                    y[b, co, oh, ow] = acc


@njit(cache=True, parallel=True)
def _conv2d_bwd_gx(gy, w, gxp, stride, cpg, cout_g):
    B = gy.shape[0]
    cout, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    for b in prange(B):
        for co in range(cout):
            g = co // cout_g
            for oh in range(ho):
                for ow in range(wo):
                    gv = gy[b, co, oh, ow]
                    for c in range(cpg):
                        ci = g * cpg + c
                        for i in range(kh):
                            for j in range(kw):
                                gxp[b, ci, oh * stride + i,
                                    ow * stride + j] += gv * w[co, c, i, j]


@njit(cache=True, parallel=True)
def _conv2d_bwd_gw(gy, xp, gw, stride, cpg, cout_g):
    B = gy.shape[0]
    cout, _, kh, kw = gw.shape
    ho, wo = gy.shape[2], gy.shape[3]
    for co in prange(cout):
        g = co // cout_g
        for c in range(cpg):
            ci = g * cpg + c
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for b in range(B):
                        for oh in range(ho):
                            for ow in range(wo):
                                acc += (gy[b, co, oh, ow]
                                        * xp[b, ci, oh * stride + i,
                                             ow * stride + j])
                    gw[co, c, i, j] = acc


def conv2d_forward(x, w, stride, ph, pw, groups):
    B = x.shape[0]
    cout, cpg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    y = np.empty((B, cout, ho, wo), dtype=x.dtype)
    _conv2d_fwd(xp, w, y, stride, cpg, cout // groups)
    return y


def conv2d_backward(gy, x, w, stride, ph, pw, groups):
    B, cin, H, W = x.shape
    cout, cpg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    gy = np.ascontiguousarray(gy)
    _conv2d_bwd_gx(gy, w, gxp, stride, cpg, cout // groups)
    _conv2d_bwd_gw(gy, xp, gw, stride, cpg, cout // groups)
    gx = np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W])
    return gx, gw


@njit(cache=True, parallel=True)
def _maxpool_fwd(xp, y, arg, kernel, stride):
    B, C, hp, wp = xp.shape
    ho, wo = y.shape[2], y.shape[3]
    for b in prange(B):
        for c in range(C):
            for oh in range(ho):
                for ow in range(wo):
                    best = xp[b, c, oh * stride, ow * stride]
                    bidx = 0
                    for i in range(kernel):
                        for j in range(kernel):
                            v = xp[b, c, oh * stride + i, ow * stride + j]
                            if v > best:
                                best = v
                                bidx = i * kernel + j
                    y[b, c, oh, ow] = best
                    arg[b, c, oh, ow] = bidx


@njit(cache=True, parallel=True)
def _maxpool_bwd(gy, arg, gxp, kernel, stride):
    B, C, ho, wo = gy.shape
    for b in prange(B):
        for c in range(C):
            for oh in range(ho):
                for ow in range(wo):
                    idx = arg[b, c, oh, ow]
                    i = idx // kernel
                    j = idx % kernel
                    gxp[b, c, oh * stride + i, ow * stride + j] += (
                        gy[b, c, oh, ow])


def maxpool2d_forward(x, kernel, stride, pad):
    neg = np.finfo(x.dtype).min
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                constant_values=neg)
    B, C = x.shape[:2]
    ho = (xp.shape[2] - kernel) // stride + 1
    wo = (xp.shape[3] - kernel) // stride + 1
    y = np.empty((B, C, ho, wo), dtype=x.dtype)
    arg = np.empty((B, C, ho, wo), dtype=np.int64)
    _maxpool_fwd(xp, y, arg, kernel, stride)
    return y, arg


def maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad):
    B, C, H, W = x_shape
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    _maxpool_bwd(np.ascontiguousarray(gy), arg, gxp, kernel, stride)
    return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W])


@njit(cache=True, parallel=True)
def _scan_fwd(x, delta, A, Bm, Cm, D, y, hs, save_state):
    B, C, T = x.shape
    M = A.shape[1]
    for b in prange(B):
        for c in range(C):
            h = np.zeros(M, dtype=x.dtype)
            for t in range(T):
                acc = 0.0
                for m in range(M):
                    z = delta[b, c, t] * A[c, m]
                    ab = math.exp(z)
                    bb = math.expm1(z) / A[c, m] * Bm[b, m, t]
                    h[m] = ab * h[m] + bb * x[b, c, t]
                    if save_state:
                        hs[b, t, c, m] = h[m]
                    acc += Cm[b, m, t] * h[m]
                y[b, c, t] = acc + D[c] * x[b, c, t]


@njit(cache=True)
def _scan_bwd(gy, x, delta, A, Bm, Cm, D, hs,
              gx, gdelta, gA, gB, gC, gD):
    B, C, T = x.shape
    M = A.shape[1]
    for b in range(B):
        for c in range(C):
            gh = np.zeros(M, dtype=x.dtype)
            for t in range(T - 1, -1, -1):
                gyt = gy[b, c, t]
                gxv = gyt * D[c]
                gD[c] += gyt * x[b, c, t]
                gdv = 0.0
                for m in range(M):
                    h_t = hs[b, t, c, m]
                    h_prev = hs[b, t - 1, c, m] if t > 0 else 0.0
                    ghm = gh[m] + gyt * Cm[b, m, t]
                    gC[b, m, t] += gyt * h_t

                    a = A[c, m]
                    z = delta[b, c, t] * a
                    ab = math.exp(z)
                    e1 = math.expm1(z)
                    bmt = Bm[b, m, t]
                    bb = e1 / a * bmt
                    gab = ghm * h_prev
                    gbb = ghm * x[b, c, t]
                    gxv += ghm * bb
                    gz = gab * ab + gbb * (ab / a) * bmt
                    gB[b, m, t] += gbb * e1 / a
                    gA[c, m] += gz * delta[b, c, t] - gbb * e1 / (a * a) * bmt
                    gdv += gz * a
                    gh[m] = ghm * ab
                gx[b, c, t] += gxv
                gdelta[b, c, t] = gdv


def selective_scan_forward(x, delta, A, Bm, Cm, D, save_state):
    B, C, T = x.shape
    M = A.shape[1]
    y = np.empty_like(x)
    hs = (np.empty((B, T, C, M), dtype=x.dtype) if save_state
          else np.empty((1, 1, 1, 1), dtype=x.dtype))
    _scan_fwd(x, delta, A, Bm, Cm, D, y, hs, save_state)
    return y, (hs if save_state else None)


def selective_scan_backward(gy, x, delta, A, Bm, Cm, D, hs):
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(Bm)
    gC = np.zeros_like(Cm)
    gD = np.zeros_like(D)
    _scan_bwd(np.ascontiguousarray(gy), x, delta, A, Bm, Cm, D, hs,
              gx, gdelta, gA, gB, gC, gD)
    return gx, gdelta, gA, gB, gC, gD
