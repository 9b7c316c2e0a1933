"""Backward-Euler forward solver for the coupled problem and reaction
extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..constitutive import NeuralThermoModel
from ..refmodels import ReferenceModel
from .assembly import ResidualVector, assemble, integrate, local_fields, point_kinematics
from .problem import Problem, Step

log = logging.getLogger(__name__)

TOL = 1e-9
TINY = 1e-300


class SolverError(RuntimeError):
    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


# materials ---------------------------------------------------------------------


class ReferenceMaterial:
    """Adapter for analytic Helmholtz models: temperature is primary, entropy
    follows from ``s = -dpsi/dT``."""

    def __init__(self, model: ReferenceModel):
        self.model = model

    def entropy(self, F, T, s_guess=None):
        return self.model.entropy(F, T)

    def response(self, F, T, g, s_guess=None):
        m = self.model
        return m.stress(F, T), T, m.entropy(F, T), m.heat_flux(g, F, T)


class NeuralMaterial:
    """Adapter for a learned model.  ``entropy_mode`` is ``"newton"`` (local
    inversion of ``T = de/ds``) or ``"mlp"`` (auxiliary network)."""

    def __init__(self, model: NeuralThermoModel, entropy_mode="newton"):
        if entropy_mode not in ("newton", "mlp"):
            raise ValueError(f"unknown entropy mode {entropy_mode!r}")
        self.model = model
        self.entropy_mode = entropy_mode

    def entropy(self, F, T, s_guess=None):
        if self.entropy_mode == "mlp":
            return self.model.entropy_mlp_predict(F, T)
        return self.model.solve_entropy(F, T, s_init=s_guess)

    def response(self, F, T, g, s_guess=None):
        s = self.entropy(F, T, s_guess)
        P, T_state = self.model.stress_and_temperature(F, s)
        return P, T_state, s, self.model.heat_flux(g, F, s)


def as_material(model):
    if isinstance(model, (ReferenceMaterial, NeuralMaterial)):
        return model
    if isinstance(model, ReferenceModel):
        return ReferenceMaterial(model)
    if isinstance(model, NeuralThermoModel):
        return NeuralMaterial(model)
    raise TypeError(f"unsupported material {type(model).__name__}")


# element evaluation -----------------------------------------------------------------


def element_residuals(problem: Problem, material, xe1, s0, dt, s_guess=None):
    """Element contributions ``(S, E, 32)`` and the new entropy ``(S, E, Q)``
    for element-local dofs ``xe1`` and previous entropy ``s0``."""
    kin = point_kinematics(problem, xe1)
    P, T_state, s1, q = material.response(kin.F, kin.T, kin.g, s_guess)
    re = integrate(problem, P, T_state, s1 - s0, q, dt)
    return re, s1


def initial_entropy(problem: Problem, material, x0):
    kin = point_kinematics(problem, local_fields(problem, x0))
    return np.asarray(material.entropy(kin.F, kin.T))[0]


def _block_scales(problem: Problem, re, ext):
    nu = problem.dofs.n_u
    ext_u, ext_T = np.abs(ext[:nu]), np.abs(ext[nu:])
    su = max(ext_u.max(initial=0.0), np.abs(re[..., :24]).max(initial=0.0), TINY)
    sT = max(ext_T.max(initial=0.0), np.abs(re[..., 24:]).max(initial=0.0), TINY)
    return su, sT


def _fd_steps(problem: Problem, xe):
    X = problem.mesh.nodes[problem.mesh.elements]
    size = np.ptp(X, axis=1).max(axis=1)  # (E,)
    Tmag = np.abs(xe[0, :, 24:]).max(axis=1)
    h = np.empty(xe.shape[1:])
    h[:, :24] = 1e-7 * size[:, None]
    h[:, 24:] = 1e-7 * np.maximum(Tmag, 1.0)[:, None]
    return h


def element_tangent(problem: Problem, material, xe, s0, dt, s_guess):
    """Central-difference element stiffness ``(E, 32, 32)``; all elements are
    perturbed at once, one local dof at a time."""
    E = xe.shape[1]
    h = _fd_steps(problem, xe)
    batch = np.repeat(xe, 64, axis=0)
    for k in range(32):
        batch[2 * k, :, k] += h[:, k]
        batch[2 * k + 1, :, k] -= h[:, k]
    guess = None if s_guess is None else np.broadcast_to(s_guess, (64,) + s_guess.shape[1:])
    re, _ = element_residuals(problem, material, batch, s0, np.full(64, dt), guess)
    K = np.empty((E, 32, 32))
    for k in range(32):
        K[:, :, k] = (re[2 * k] - re[2 * k + 1]) / (2.0 * h[:, k, None])
    return K


def global_matrix(problem: Problem, Ke):
    dofs = problem.geometry.element_dofs
    rows = np.repeat(dofs, 32, axis=1).ravel()
    cols = np.tile(dofs, (1, 32)).ravel()
    n = problem.dofs.n_dof
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


# time stepping -----------------------------------------------------------------------


@dataclass
class FieldHistory:
    """Nodal fields and Gauss-point entropy per state (state 0 is initial)."""

    x: np.ndarray  # (S+1, ndof)
    s: np.ndarray  # (S+1, E, Q)
    dt: np.ndarray  # (S,)
    iterations: np.ndarray | None = None  # Newton iterations per step

    @property
    def times(self):
        return np.concatenate([[0.0], np.cumsum(self.dt)])

    def u(self, problem: Problem):
        return problem.dofs.split(self.x)[0]

    def T(self, problem: Problem):
        return problem.dofs.split(self.x)[1]


def _newton(problem, material, x_start, s_start, mask, vals, ext, dt, tol, max_iter):
    x = x_start.copy()
    x[mask] = vals[mask]
    free = ~mask
    s_guess = s_start[None]
    # scales are running maxima so that a stress-free converged state still
    # has a meaningful reference magnitude
    su = sT = TINY
    nu = problem.dofs.n_u
    # increment test for states whose residual scale is pure roundoff
    length = np.ptp(problem.mesh.nodes, axis=0).max()
    small_step = False
    for it in range(max_iter):
        xe = local_fields(problem, x)
        re, s1 = element_residuals(problem, material, xe, s_start[None], np.array([dt]), s_guess)
        r = assemble(problem, re)[0] - ext
        if not np.all(np.isfinite(r)):
            raise SolverError("non-finite residual")
        su_it, sT_it = _block_scales(problem, re, ext)
        su, sT = max(su, su_it), max(sT, sT_it)
        err_u = np.abs(r[:nu][free[:nu]]).max(initial=0.0) / su
        err_T = np.abs(r[nu:][free[nu:]]).max(initial=0.0) / sT
        log.debug("newton it %d: mech %.3e thermal %.3e", it, err_u, err_T)
        if (err_u <= tol and err_T <= tol) or small_step:
            return x, s1[0], it
        K = global_matrix(problem, element_tangent(problem, material, xe, s_start[None], dt, s1))
        Kff = K[free][:, free]
        dx = spla.spsolve(Kff.tocsc(), -r[free])
        if not np.all(np.isfinite(dx)):
            raise SolverError("singular tangent")
        x[free] += dx
        s_guess = s1
        full = np.zeros_like(x)
        full[free] = dx
        small_step = (
            np.abs(full[:nu]).max(initial=0.0) <= tol * 1e-3 * length
            and np.abs(full[nu:]).max(initial=0.0) <= tol * 1e-3 * np.abs(x[nu:]).max()
        )
    raise SolverError("Newton iteration did not converge", residual=max(err_u, err_T))


def _solve_interval(problem, material, x_prev, s_prev, step: Step, ext_u_prev, frac0, frac1, depth, tol, max_iter):
    mask, vals = problem.dirichlet(step)
    ext_full = problem.external_loads(step, scaled=False)
    nu = problem.dofs.n_u
    dt = step.dt * (frac1 - frac0)
    # prescribed values and mechanical loads ramp linearly inside the step
    w = (frac1 - frac0) / (1.0 - frac0)
    vals_sub = np.where(mask, x_prev + w * (vals - x_prev), 0.0)
    ext = np.empty_like(ext_full)
    ext[:nu] = ext_u_prev + w * (ext_full[:nu] - ext_u_prev)
    ext[nu:] = ext_full[nu:] * dt
    try:
        x, s, its = _newton(problem, material, x_prev, s_prev, mask, vals_sub, ext, dt, tol, max_iter)
        if frac1 < 1.0:
            return _solve_interval(problem, material, x, s, step, ext[:nu], frac1, 1.0, depth, tol, max_iter)
        return x, s, its
    except (SolverError, ArithmeticError, ValueError, RuntimeError) as exc:
        if depth >= 4:
            raise SolverError(f"step failed after {depth} bisections: {exc}") from exc
        mid = 0.5 * (frac0 + frac1)
        log.info("bisecting step at fraction %.4f (%s)", mid, exc)
        return _solve_interval(problem, material, x_prev, s_prev, step, ext_u_prev, frac0, mid, depth + 1, tol, max_iter)


def forward_solve(problem: Problem, model, tol=TOL, max_iter=25, x0=None) -> FieldHistory:
    """March the coupled problem through its schedule with Newton iterations
    on the free degrees of freedom."""
    material = as_material(model)
    x = problem.initial_state() if x0 is None else np.asarray(x0, float).copy()
    s = initial_entropy(problem, material, x)
    xs, ss, its = [x.copy()], [s.copy()], []
    ext_u_prev = np.zeros(problem.dofs.n_u)
    for n, step in enumerate(problem.steps):
        try:
            x, s, it = _solve_interval(problem, material, x, s, step, ext_u_prev, 0.0, 1.0, 0, tol, max_iter)
        except SolverError as exc:
            exc.step = n + 1
            raise
        ext_u_prev = problem.external_loads(step, scaled=False)[: problem.dofs.n_u]
        xs.append(x.copy())
        ss.append(s.copy())
        its.append(it)
    return FieldHistory(np.array(xs), np.array(ss), np.array([st.dt for st in problem.steps]), np.array(its))


# residuals and reactions --------------------------------------------------------------


def residual_history(problem: Problem, history: FieldHistory, model) -> ResidualVector:
    """Residual vectors of every step, all steps evaluated in one batch."""
    material = as_material(model)
    S = problem.n_steps
    xe = local_fields(problem, history.x)
    kin = point_kinematics(problem, xe)
    s_all = np.asarray(material.entropy(kin.F, kin.T, history.s))
    re, _ = element_residuals(problem, material, xe[1:], s_all[:-1], history.dt, s_all[1:])
    ext = np.stack([problem.external_loads(st) for st in problem.steps]) if S else np.zeros((0, problem.dofs.n_dof))
    r = assemble(problem, re) - ext
    masks = np.array([problem.dirichlet(st)[0] for st in problem.steps], dtype=bool).reshape(S, -1)
    return ResidualVector(r, masks, problem.dofs.thermal_mask())


def reaction_vectors(problem: Problem, history: FieldHistory, model):
    """Per-dof reactions ``(S, ndof)``: residual rows on prescribed dofs,
    thermal rows divided by the step size, zero elsewhere."""
    res = residual_history(problem, history, model)
    R = np.where(res.dirichlet, res.values, 0.0)
    R[:, problem.dofs.n_u :] /= history.dt[:, None]
    return R


def reactions(problem: Problem, history: FieldHistory, model, node_set, vectors=None):
    """Summed reaction force ``(S, 3)`` and heat flow ``(S,)`` over a node set."""
    R = reaction_vectors(problem, history, model) if vectors is None else vectors
    nodes = problem.mesh.node_sets[node_set]
    Ru, RT = problem.dofs.split(R)
    return Ru[:, nodes].sum(axis=1), RT[:, nodes].sum(axis=1)
