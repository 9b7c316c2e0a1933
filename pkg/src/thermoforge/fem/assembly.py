"""Element kinematics, quadrature of the internal virtual work and global
assembly.

Arrays carry a leading batch axis ``S`` (time steps or perturbations), then
elements ``E``, quadrature points ``Q`` and element nodes ``A``.  The
integration routines accept tape variables for the constitutive quantities,
so the training loss differentiates through the same code the solver uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as ad
from .problem import Problem


@dataclass
class PointKinematics:
    """Quadrature-point fields derived from element nodal values."""

    F: np.ndarray  # (S, E, Q, 3, 3)
    T: np.ndarray  # (S, E, Q)
    grad_T: np.ndarray  # (S, E, Q, 3)

    @property
    def g(self):
        return -self.grad_T / self.T[..., None]


def local_fields(problem: Problem, x):
    """Element-local dof arrays ``(S, E, 32)`` from global vectors ``(S, ndof)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return x[:, problem.geometry.element_dofs]


def point_kinematics(problem: Problem, xe) -> PointKinematics:
    """Deformation gradient, temperature and its gradient at every Gauss point
    from element-local dofs ``(S, E, 32)``."""
    geom = problem.geometry
    xe = np.asarray(xe, dtype=np.float64)
    u = xe[..., :24].reshape(xe.shape[:-1] + (8, 3))
    T = xe[..., 24:]
    F = np.eye(3) + np.einsum("seai,eqaj->seqij", u, geom.dNdX, optimize=True)
    Tq = np.einsum("sea,qa->seq", T, geom.N, optimize=True)
    gT = np.einsum("sea,eqaj->seqj", T, geom.dNdX, optimize=True)
    return PointKinematics(F, Tq, gT)


def integrate(problem: Problem, P, T_state, ds, q, dt):
    """Element residual contributions ``(S, E, 32)`` of the internal work.

    ``P`` (S,E,Q,3,3), ``T_state`` and ``ds = s^{n+1} - s^n`` (S,E,Q), heat
    flux ``q`` (S,E,Q,3) and step sizes ``dt`` (S,).  Mechanical rows are
    ``int P : Grad N_a``; thermal rows are ``int [T ds N_a - dt q . Grad N_a]``
    (already multiplied by ``dt``).
    """
    geom = problem.geometry
    wdN = geom.weighted_dNdX
    wN = geom.weighted_N
    dt = np.asarray(dt, dtype=np.float64).reshape(-1, 1, 1, 1)
    r_u = ad.einsum("seqij,eqaj->seai", P, wdN)
    r_T = ad.einsum("seq,eqa->sea", T_state * ds, wN) - ad.einsum("seqj,eqaj->sea", q * dt, wdN)
    S, E = np.shape(ad.value(r_T))[:2]
    return ad.concatenate([r_u.reshape((S, E, 24)), r_T], axis=-1)


def assemble(problem: Problem, element_residuals):
    """Scatter-add ``(S, E, 32)`` element vectors into ``(S, ndof)``."""
    S = np.shape(ad.value(element_residuals))[0]
    return ad.scatter(problem.scatter, element_residuals.reshape((S, -1)))


@dataclass
class ResidualVector:
    """Assembled residual with its row partition.

    ``values`` (S, ndof) holds ``internal - external``; thermal rows are
    scaled by the step size.  ``dirichlet`` (S, ndof) flags prescribed rows.
    """

    values: np.ndarray
    dirichlet: np.ndarray
    thermal: np.ndarray  # (ndof,)

    @property
    def free(self):
        return ~self.dirichlet

    def mechanical_block(self):
        return self.values[..., ~self.thermal]

    def thermal_block(self):
        return self.values[..., self.thermal]


def external_matrix(problem: Problem, scaled=True):
    """External load vectors of all steps, ``(S, ndof)``."""
    return np.stack([problem.external_loads(s, scaled) for s in problem.steps]) if problem.steps else np.zeros((0, problem.dofs.n_dof))


def dirichlet_matrix(problem: Problem):
    masks, vals = zip(*(problem.dirichlet(s) for s in problem.steps)) if problem.steps else ((), ())
    return np.array(masks, dtype=bool).reshape(-1, problem.dofs.n_dof), np.array(vals).reshape(-1, problem.dofs.n_dof)
