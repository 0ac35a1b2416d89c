"""Dispatch between the numpy and numba kernel implementations."""

from __future__ import annotations

from . import backend
from . import kernels_numpy

_NAMES = (
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "selective_scan_forward",
    "selective_scan_backward",
)


def _impl():
    if backend.active() == "numba":
        from . import kernels_numba

        return kernels_numba
    return kernels_numpy


def _make(name):
    def dispatch(*args, **kwargs):
        return getattr(_impl(), name)(*args, **kwargs)

    dispatch.__name__ = name
    return dispatch


conv2d_forward = _make("conv2d_forward")
conv2d_backward = _make("conv2d_backward")
maxpool2d_forward = _make("maxpool2d_forward")
maxpool2d_backward = _make("maxpool2d_backward")
selective_scan_forward = _make("selective_scan_forward")
selective_scan_backward = _make("selective_scan_backward")
