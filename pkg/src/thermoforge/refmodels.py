"""Analytic Helmholtz-energy reference materials.

Parameters are stored in the customary units (GPa, mW/(mm K), mJ/(mm^3 K));
every evaluation uses the consistent set mm, s, K, N, mJ, mW, so stresses
and energy densities come out in MPa = mJ/mm^3 and heat fluxes in mW/mm^2.

All derivatives are written out by hand.  These models serve as oracles for
the learned material and for the solver, so they deliberately avoid the
differentiation engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import DomainError
from .kinematics import cofactor, det, right_cauchy_green

GPA = 1000.0  # MPa per GPa


def _invariants(F):
    F = np.asarray(F, dtype=np.float64)
    J = det(F)
    if np.any(J <= 0.0):
        raise DomainError("deformation gradient must have a positive determinant")
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    I2 = 0.5 * (I1 * I1 - np.einsum("...ij,...ji->...", C, C))
    return F, C, I1, I2, J * J, J


def _check_T(T):
    T = np.asarray(T, dtype=np.float64)
    if np.any(T <= 0.0):
        raise DomainError("absolute temperature must be positive")
    return T


def _inv_T(F, J):
    return cofactor(F) / J[..., None, None]


class ReferenceModel:
    """Shared interface; subclasses define the energy and its derivatives."""

    T0: float
    lambda_T: float

    def heat_flux(self, g, F, T):
        """``q = lambda_T * T * cof(C) g``, the gradient of the conduction
        potential ``lambda_T / 2 * T * g . cof(C) g``."""
        T = _check_T(T)
        C = right_cauchy_green(F)
        return self.lambda_T * T[..., None] * np.einsum("...ij,...j->...i", cofactor(C), np.asarray(g, float))

    def conduction_potential(self, g, F, T):
        T = _check_T(T)
        g = np.asarray(g, float)
        C = right_cauchy_green(F)
        return 0.5 * self.lambda_T * T * np.einsum("...i,...ij,...j->...", g, cofactor(C), g)

    def temperature_from_entropy(self, F, s, tol=1e-13, max_iter=100):
        """Invert ``s = entropy(F, T)`` for ``T`` (Newton on the monotone
        map, slope ``c_vol / T``)."""
        s = np.asarray(s, dtype=np.float64)
        T = np.broadcast_to(np.asarray(self.T0, float), np.broadcast_shapes(s.shape, np.shape(det(F)))).copy()
        for _ in range(max_iter):
            r = self.entropy(F, T) - s
            c_vol, _ = self.heat_capacity_terms(F, T)
            step = r * T / c_vol
            # keep iterates positive
            T_new = np.where(step < T, T - step, 0.5 * T)
            if np.all(np.abs(T_new - T) <= tol * T):
                return T_new
            T = T_new
        return T


@dataclass(frozen=True)
class ThermalModelParams(ReferenceModel):
    """Passive mechanical response plus a constant-capacity caloric part."""

    a: float = 1.0  # GPa
    b: float = 1.0
    c: float = 1.0
    lambda_T: float = 30.2  # mW/(mm K)
    c_T0: float = 15.0  # mJ/(mm^3 K)
    T0: float = 293.15

    @property
    def d(self):
        return 2.0 * self.a + 4.0 * self.b + 2.0 * self.c

    def helmholtz(self, F, T):
        T = _check_T(T)
        _, _, I1, I2, I3, _ = _invariants(F)
        mech = GPA * (self.a * I1 + self.b * I2 + self.c * I3 - 0.5 * self.d * np.log(I3))
        th = self.c_T0 * ((T - self.T0) - T * np.log(T / self.T0))
        return mech + th

    def stress(self, F, T):
        _check_T(T)
        F, C, I1, _, I3, J = _invariants(F)
        dI1 = 2.0 * F
        dI2 = 2.0 * (I1[..., None, None] * F - F @ C)
        inv_T = _inv_T(F, J)
        dI3 = 2.0 * I3[..., None, None] * inv_T
        P = self.a * dI1 + self.b * dI2 + self.c * dI3 - self.d * inv_T
        return GPA * P + 0.0 * np.asarray(T)[..., None, None]

    def entropy(self, F, T):
        T = _check_T(T)
        _invariants(F)
        return self.c_T0 * np.log(T / self.T0) + 0.0 * det(F)

    def heat_capacity_terms(self, F, T, F_rate=None):
        T = _check_T(T)
        shape = np.broadcast_shapes(T.shape, np.shape(det(F)))
        return np.full(shape, self.c_T0), np.zeros(shape)


@dataclass(frozen=True)
class CoupledModelParams(ReferenceModel):
    """Compressible neo-Hookean solid with thermal expansion coupling and a
    temperature-dependent heat capacity.

    The coupling energy is ``-3/2 kappa alpha0 (T - T0) ln I3``, so a free
    body expands on heating (``tr eps = 3 alpha0 dT``) and cools under
    adiabatic tension.
    """

    lam: float = 101.160  # GPa
    mu: float = 73.255  # GPa
    alpha0: float = 1.1e-5  # 1/K
    lambda_T: float = 50.2
    c_T0: float = 3.59
    T0: float = 293.15

    @property
    def kappa(self):
        return self.lam + 2.0 / 3.0 * self.mu

    @staticmethod
    def _y(T):
        return (-1.0 + np.sqrt(1.0 + 8.0 * T)) / 4.0

    def helmholtz(self, F, T):
        T = _check_T(T)
        _, _, I1, _, I3, _ = _invariants(F)
        lnI3 = np.log(I3)
        mech = GPA * (0.5 * self.mu * (I1 - 3.0 - lnI3) + 0.25 * self.lam * (I3 - 1.0 - lnI3))
        y, y0 = self._y(T), self._y(self.T0)
        th = self.c_T0 * (y + y * y - T * np.log(y / y0))
        cpl = -1.5 * GPA * self.kappa * self.alpha0 * (T - self.T0) * lnI3
        return mech + th + cpl

    def stress(self, F, T):
        T = _check_T(T)
        F, _, _, _, I3, J = _invariants(F)
        inv_T = _inv_T(F, J)
        mech = self.mu * (F - inv_T) + 0.5 * self.lam * (I3 - 1.0)[..., None, None] * inv_T
        cpl = -3.0 * self.kappa * self.alpha0 * (T - self.T0)[..., None, None] * inv_T
        return GPA * (mech + cpl)

    def entropy(self, F, T):
        # with 2y^2 + y = T the caloric entropy collapses to c_T0 ln(y / y0)
        T = _check_T(T)
        _, _, _, _, I3, _ = _invariants(F)
        y, y0 = self._y(T), self._y(self.T0)
        return self.c_T0 * np.log(y / y0) + 1.5 * GPA * self.kappa * self.alpha0 * np.log(I3)

    def heat_capacity_terms(self, F, T, F_rate=None):
        """``(c_vol, coupling_power)`` with ``c_vol = -T d2psi/dT2`` and
        ``coupling_power = T d2psi/dFdT : F_rate``."""
        T = _check_T(T)
        F, _, _, _, _, J = _invariants(F)
        y = self._y(T)
        c_vol = self.c_T0 * T / (y * (1.0 + 4.0 * y))
        c_vol = np.broadcast_to(c_vol, np.broadcast_shapes(c_vol.shape, J.shape))
        if F_rate is None:
            return c_vol, np.zeros(c_vol.shape)
        mixed = -3.0 * GPA * self.kappa * self.alpha0 * _inv_T(F, J)
        return c_vol, T * np.einsum("...ij,...ij->...", mixed, np.asarray(F_rate, float))


# module-level conveniences ------------------------------------------------------


def helmholtz(params: ReferenceModel, F, T):
    return params.helmholtz(F, T)


def ref_stress(params: ReferenceModel, F, T):
    return params.stress(F, T)


def ref_entropy(params: ReferenceModel, F, T):
    return params.entropy(F, T)


def ref_heat_flux(params: ReferenceModel, g, F, T):
    return params.heat_flux(g, F, T)


def ref_heat_capacity_terms(params: ReferenceModel, F, T, F_rate=None):
    return params.heat_capacity_terms(F, T, F_rate)


MODELS = {"thermal": ThermalModelParams, "coupled": CoupledModelParams}


def reference_model(kind: str, **overrides) -> ReferenceModel:
    try:
        return MODELS[kind](**overrides)
    except KeyError:
        raise ValueError(f"unknown reference model {kind!r}") from None
