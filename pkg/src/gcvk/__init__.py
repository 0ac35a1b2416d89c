"""Global-context vision kernels.

A desk-scale numerical library for hierarchical windowed-attention
backbones with stage-shared global queries and for selective-scan
state-space mixers, built on a minimal tape-based autograd over numpy
with numba-accelerated hot kernels, plus analytic cost models and
finite-difference verification.
"""

from . import ops  # noqa: F401  (attaches Tensor operator methods)
from .tensor import Tape, Tensor  # noqa: F401

__version__ = "0.1.0"
