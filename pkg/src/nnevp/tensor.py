"""Symmetric second-order tensors in Voigt form.

Components are ordered (11, 22, 33, 23, 13, 12) and the shear slots hold
tensor (not engineering) components for stress and strain alike, so every
norm counts the off-diagonal slots twice. Entries may be floats or tape
variables; all functions here work on either.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad

SymTensor3 = Sequence  # six scalars, floats or ad.Var

SQRT_3_2 = math.sqrt(1.5)
SQRT_2_3 = math.sqrt(2.0 / 3.0)

# index pairs of the Voigt slots
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def diag(a, b, c) -> list:
    return [a, b, c, 0.0, 0.0, 0.0]


def zeros() -> list:
    return [0.0] * 6


def hydrostatic(p) -> list:
    return [p, p, p, 0.0, 0.0, 0.0]


def to_matrix(t: SymTensor3) -> np.ndarray:
    m = np.empty((3, 3))
    for k, (i, j) in enumerate(VOIGT_PAIRS):
        m[i, j] = m[j, i] = ad.value(t[k])
    return m


def from_matrix(m) -> list:
    m = np.asarray(m, dtype=float)
    return [float(0.5 * (m[i, j] + m[j, i])) for i, j in VOIGT_PAIRS]


def trace(t: SymTensor3):
    return ad.lincomb((1.0, 1.0, 1.0), t[:3])


def mean_stress(t: SymTensor3):
    """One third of the trace."""
    third = 1.0 / 3.0
    return ad.lincomb((third, third, third), t[:3])


def deviator(t: SymTensor3) -> list:
    """t - tr(t)/3 * I."""
    a, b, c = t[0], t[1], t[2]
    t2, m1 = 2.0 / 3.0, -1.0 / 3.0
    return [
        ad.lincomb((t2, m1, m1), (a, b, c)),
        ad.lincomb((m1, t2, m1), (a, b, c)),
        ad.lincomb((m1, m1, t2), (a, b, c)),
        t[3], t[4], t[5],
    ]


def _weighted(t: SymTensor3) -> list:
    # shear slots repeated so that a plain dot product counts them twice
    return [t[0], t[1], t[2], t[3], t[3], t[4], t[4], t[5], t[5]]


def norm_squared(t: SymTensor3):
    w = _weighted(t)
    return ad.dot(w, w)


def frobenius_norm(t: SymTensor3):
    return ad.sqrt(norm_squared(t))


def double_dot(a: SymTensor3, b: SymTensor3):
    """a : b, full-tensor contraction."""
    return ad.dot(_weighted(a), _weighted(b))


def von_mises(t: SymTensor3):
    """sqrt(3/2) * ||dev(t)||."""
    d = deviator(t)
    return ad.sqrt(1.5 * norm_squared(d))


def add(a: SymTensor3, b: SymTensor3) -> list:
    return [x + y for x, y in zip(a, b)]


def scale(t: SymTensor3, s) -> list:
    return [s * x for x in t]
