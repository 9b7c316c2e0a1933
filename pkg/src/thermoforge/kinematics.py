"""Deformation and thermal kinematics on batches of 3x3 tensors.

All functions broadcast over leading axes: ``F`` has shape ``(..., 3, 3)``
and vectors ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import DomainError

IDENTITY = np.eye(3)


def det(A):
    A = np.asarray(A, dtype=np.float64)
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def cofactor(A):
    """Cofactor matrix ``det(A) A^{-T}`` in closed (adjugate) form.

    Column ``k`` of ``cof A`` is the cross product of the other two columns
    of ``A``, so the result stays accurate as ``det A -> 0``.
    """
    A = np.asarray(A, dtype=np.float64)
    a0, a1, a2 = A[..., :, 0], A[..., :, 1], A[..., :, 2]
    return np.stack([np.cross(a1, a2), np.cross(a2, a0), np.cross(a0, a1)], axis=-1)


def right_cauchy_green(F):
    F = np.asarray(F, dtype=np.float64)
    return np.swapaxes(F, -1, -2) @ F


def _check_admissible(J):
    if np.any(~np.isfinite(J)) or np.any(J <= 0.0):
        raise DomainError("deformation gradient must have a positive determinant")


@dataclass(frozen=True)
class InvariantSet:
    """Principal invariants ``I1 = tr C``, ``I2 = tr cof C``, ``J = det F``."""

    I1: np.ndarray
    I2: np.ndarray
    J: np.ndarray

    @property
    def I1_bar(self):
        return self.I1 - 3.0

    @property
    def I2_bar(self):
        return self.I2 - 3.0

    @property
    def J_bar(self):
        return self.J - 1.0

    def shifted(self):
        return self.I1_bar, self.I2_bar, self.J_bar


@dataclass(frozen=True)
class DissipationInvariantSet:
    """Tensor-induced norms of the thermal gradient: ``|g|``, ``|g|_C``,
    ``|g|_{cof C}``."""

    I4_bar: np.ndarray
    I5_bar: np.ndarray
    I6_bar: np.ndarray

    def as_array(self):
        return np.stack([self.I4_bar, self.I5_bar, self.I6_bar], axis=-1)


def invariants(F) -> InvariantSet:
    F = np.asarray(F, dtype=np.float64)
    J = det(F)
    _check_admissible(J)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    # tr(cof C) = (I1^2 - tr(C^2)) / 2
    I2 = 0.5 * (I1 * I1 - np.einsum("...ij,...ji->...", C, C))
    return InvariantSet(I1, I2, J)


def invariant_derivatives(F):
    """Derivatives of ``(I1, I2, J)`` with respect to ``F``."""
    F = np.asarray(F, dtype=np.float64)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    dI1 = 2.0 * F
    dI2 = 2.0 * (I1[..., None, None] * F - F @ C)
    dJ = cofactor(F)
    return dI1, dI2, dJ


def thermal_gradient(grad_T, T):
    """Referential thermal gradient ``g = -Grad(T) / T = -Grad(ln T)``."""
    T = np.asarray(T, dtype=np.float64)
    if np.any(T <= 0.0):
        raise DomainError("absolute temperature must be positive")
    return -np.asarray(grad_T, dtype=np.float64) / T[..., None]


def _quadratic(g, A):
    return np.einsum("...i,...ij,...j->...", g, A, g)


def dissipation_invariants(g, F) -> DissipationInvariantSet:
    g = np.asarray(g, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    _check_admissible(det(F))
    C = right_cauchy_green(F)
    cofC = cofactor(C)
    # clip tiny negative round-off of the quadratic forms
    i4 = np.sqrt(np.maximum(np.einsum("...i,...i->...", g, g), 0.0))
    i5 = np.sqrt(np.maximum(_quadratic(g, C), 0.0))
    i6 = np.sqrt(np.maximum(_quadratic(g, cofC), 0.0))
    return DissipationInvariantSet(i4, i5, i6)


def random_rotation(seed) -> np.ndarray:
    """Proper rotation drawn uniformly from SO(3) (unit quaternion)."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def uniaxial_incompressible(F11):
    """``diag(F11, F11^-1/2, F11^-1/2)`` for each stretch."""
    F11 = np.asarray(F11, dtype=np.float64)
    lat = F11**-0.5
    F = np.zeros(F11.shape + (3, 3))
    F[..., 0, 0] = F11
    F[..., 1, 1] = lat
    F[..., 2, 2] = lat
    return F
