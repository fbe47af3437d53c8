"""Isotropic linear elasticity in 6x6 Voigt form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor import SymTensor3


class ParameterDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ElasticParams:
    E: float  # Young's modulus, MPa
    nu: float  # Poisson's ratio

    def __post_init__(self):
        if not self.E > 0.0:
            raise ParameterDomainError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ParameterDomainError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def lame_lambda(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def shear_modulus(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def bulk_modulus(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))


def build_stiffness(p: ElasticParams) -> np.ndarray:
    """Stiffness matrix acting on tensor-shear Voigt strains.

    Because shear slots carry tensor components, the shear diagonal is 2*mu.
    """
    lam, mu = p.lame_lambda, p.shear_modulus
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[np.arange(3), np.arange(3)] = lam + 2.0 * mu
    c[np.arange(3, 6), np.arange(3, 6)] = 2.0 * mu
    c.setflags(write=False)
    return c


def hooke(c: np.ndarray, elastic_strain: SymTensor3) -> list:
    """sigma = C : eps_e."""
    if not any(isinstance(e, ad.Var) for e in elastic_strain):
        return [float(x) for x in c @ np.asarray(elastic_strain, dtype=float)]
    return [ad.lincomb(c[i], elastic_strain) for i in range(6)]
