"""Loss terms.  Every function accepts plain arrays or tape variables for the
network parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import diffcore as ad
from ..constitutive import (
    DISSIPATION_NET,
    ENERGY_NETS,
    ENTROPY_NET,
    Kinematics,
    ModelInvalidError,
    ConvergenceError,
    _mat,
    energy_partials,
    entropy_mlp_core,
    heat_flux_core,
    normalization_constants,
    solve_entropy_core,
    _temperature_and_slope,
)
from ..fem.assembly import assemble, integrate
from .data import MaterialPointSamples, PreparedScenario


@dataclass
class LossWeights:
    D: float = 1.0
    N: float = 1.0
    R: float = 1.0
    A: float = 1e3


@dataclass
class RegularizationSpec:
    """Per-subnetwork ``(l1, l2)`` coefficients; absent networks are not
    regularized."""

    coefficients: dict = field(default_factory=lambda: {n: (1e-5, 0.0) for n in ENERGY_NETS + (DISSIPATION_NET,)})

    def to_dict(self):
        return {k: list(v) for k, v in self.coefficients.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


@dataclass
class ModelSettings:
    """Constants of the learned model that training keeps fixed."""

    T0_model: float
    eps_gr: float
    nT_mode: str
    energy_scale: float
    gradient_scale: float = 1.0
    dissipation_scale: float | None = None  # None: energy_scale

    @property
    def flux_factor(self):
        """Model-unit heat flux per network output."""
        D = self.energy_scale if self.dissipation_scale is None else self.dissipation_scale
        return D / (self.energy_scale * self.gradient_scale)


# physics ---------------------------------------------------------------------------


def mse_split(values, dirichlet, rows=None):
    """``(sum of squares, count)`` over prescribed rows and over the rest,
    restricted to ``rows`` when given."""
    sq = values * values
    d = np.asarray(dirichlet, dtype=bool)
    keep = np.ones(d.shape, dtype=bool) if rows is None else np.broadcast_to(rows, d.shape)
    wd = (d & keep).astype(np.float64)
    wn = (~d & keep).astype(np.float64)
    return (sq * wd).sum(), int(wd.sum()), (sq * wn).sum(), int(wn.sum())


def physics_loss(residual, dirichlet):
    """``(L_D, L_N)``: mean squared normalized residual over prescribed rows
    and over free/Neumann rows; an empty partition contributes 0."""
    sD, nD, sN, nN = mse_split(residual, dirichlet)
    return (sD * (1.0 / nD) if nD else 0.0), (sN * (1.0 / nN) if nN else 0.0)


def scenario_terms(specs, params, prep: PreparedScenario, settings: ModelSettings, temperature_scale, constants=None, entropy=None):
    """Normalized residual ``(S, ndof)`` and temperature mismatch at every
    quadrature point for one scenario; entropy from the auxiliary network
    unless given (model units, all states)."""
    kin = prep.kin
    T_model = prep.T / temperature_scale
    if entropy is None:
        s_all = entropy_mlp_core(specs[ENTROPY_NET], params[ENTROPY_NET], kin, T_model, settings.T0_model)
    else:
        s_all = entropy
    _, d1, d2, dJ, ds = energy_partials(specs, params, kin.I1b, kin.I2b, kin.Jb, s_all)
    if constants is None:
        constants = normalization_constants(specs, params, settings.T0_model, settings.nT_mode)
    n_P, n_T = constants
    T_state = ds * n_T
    nq = prep.n_points
    S = prep.target.shape[0]
    new = slice(nq, None)
    P = (
        _mat(d1[new]) * kin.dI1[new]
        + _mat(d2[new]) * kin.dI2[new]
        + _mat(dJ[new] - n_P) * kin.dJ[new]
        + kin.growth_gradient(settings.eps_gr)[new]
    ) * n_T
    q = heat_flux_core(specs[DISSIPATION_NET], params[DISSIPATION_NET], prep.grad, kin.Jb[new], s_all[new]) * settings.flux_factor
    E = prep.scenario.problem.mesh.n_elements
    shp = (S, E, nq // E)
    ds_step = s_all[new] - s_all[: S * nq]
    re = integrate(
        prep.scenario.problem,
        P.reshape(shp + (3, 3)),
        T_state[new].reshape(shp),
        ds_step.reshape(shp),
        q.reshape(shp + (3,)),
        prep.dt,
    )
    r = assemble(prep.scenario.problem, re) * settings.energy_scale
    normalized = (r - prep.target) * (1.0 / prep.row_scale)
    mismatch = T_state - T_model
    return normalized, mismatch


def calibrate_scales(specs, params, prepared, settings: ModelSettings, temperature_scale, weights: LossWeights, energy_scale=None):
    """Energy and dissipation scales that minimize the physics loss of
    ``params`` when only the two output magnitudes may change.

    The entropy is taken from the energy itself (local Newton solve) rather
    than from the untrained auxiliary network, so the stress, the stored heat
    and the flux are all proportional to their scale and the weighted loss
    is a quadratic in ``(energy_scale, dissipation_scale)``.  A given
    ``energy_scale`` is kept fixed.  Scales that come out non-positive fall
    back to a single-parameter fit, then to the energy scale.
    """
    constants = normalization_constants(specs, params, settings.T0_model, settings.nT_mode)
    nD = sum(int((p.dirichlet & p.rows).sum()) for p in prepared)
    nN = sum(int((~p.dirichlet & p.rows).sum()) for p in prepared)
    unit = replace(settings, energy_scale=1.0)
    G = np.zeros((2, 2))
    h = np.zeros(2)
    for prep in prepared:
        T_model = prep.T / temperature_scale
        s = solve_entropy_core(specs, params, prep.kin, T_model, constants[1], tol=1e-12 * settings.T0_model)
        tn = prep.target / prep.row_scale
        r0, _ = scenario_terms(specs, params, prep, replace(unit, dissipation_scale=0.0), temperature_scale, constants, s)
        r1, _ = scenario_terms(specs, params, prep, replace(unit, dissipation_scale=1.0), temperature_scale, constants, s)
        a, b = r0 + tn, r1 - r0
        w = np.where(prep.dirichlet & prep.rows, weights.D / max(nD, 1), 0.0)
        w = w + np.where(~prep.dirichlet & prep.rows, weights.N / max(nN, 1), 0.0)
        G += [[(w * a * a).sum(), (w * a * b).sum()], [(w * a * b).sum(), (w * b * b).sum()]]
        h += [(w * a * tn).sum(), (w * b * tn).sum()]

    def one(k):
        return h[k] / G[k, k] if G[k, k] > 0.0 else math.nan

    if energy_scale is None:
        try:
            E, D = np.linalg.solve(G, h)
        except np.linalg.LinAlgError:
            E = D = math.nan
        if not (E > 0.0 and D > 0.0):
            E, D = one(0), math.nan
        E = E if E > 0.0 else 1.0
    else:
        E = float(energy_scale)
        D = (h[1] - G[0, 1] * E) / G[1, 1] if G[1, 1] > 0.0 else math.nan
    if not D > 0.0:
        D = (h[1] - G[0, 1] * E) / G[1, 1] if G[1, 1] > 0.0 else math.nan
    return float(E), float(D) if D > 0.0 else float(E)


def regularization_loss(params, reg: RegularizationSpec):
    total = 0.0
    for name, (l1, l2) in reg.coefficients.items():
        if name not in params or (l1 == 0.0 and l2 == 0.0):
            continue
        for layer in params[name]:
            for key in sorted(layer):
                w = layer[key]
                if l1:
                    total = total + ad.absolute(w).sum() * l1
                if l2:
                    total = total + (w * w).sum() * l2
    return total


def aux_loss(mismatches):
    """Mean squared temperature mismatch pooled over all points."""
    if not mismatches:
        return 0.0
    total, count = 0.0, 0
    for m in mismatches:
        total = total + (m * m).sum()
        count += int(np.size(ad.value(m)))
    return total * (1.0 / count)


@dataclass
class LossBreakdown:
    D: float
    N: float
    R: float
    aux: float
    total: float

    def as_tuple(self):
        return self.D, self.N, self.R, self.aux, self.total


def fem_loss(specs, params, prepared, weights: LossWeights, reg: RegularizationSpec, settings: ModelSettings, temperature_scale):
    """Total loss over all scenarios and steps, and its components."""
    constants = normalization_constants(specs, params, settings.T0_model, settings.nT_mode)
    sD = sN = 0.0
    nD = nN = 0
    mism = []
    for prep in prepared:
        res, mm = scenario_terms(specs, params, prep, settings, temperature_scale, constants)
        a, b, c, d = mse_split(res, prep.dirichlet, prep.rows)
        sD, nD, sN, nN = sD + a, nD + b, sN + c, nN + d
        mism.append(mm)
    L_D = sD * (1.0 / nD) if nD else 0.0
    L_N = sN * (1.0 / nN) if nN else 0.0
    L_R = regularization_loss(params, reg)
    L_A = aux_loss(mism)
    total = L_D * weights.D + L_N * weights.N + L_R * weights.R + L_A * weights.A
    parts = LossBreakdown(*(float(np.asarray(ad.value(v))) for v in (L_D, L_N, L_R, L_A, total)))
    return total, parts


# material-point mode ----------------------------------------------------------------


@dataclass
class MaterialPointResult:
    loss: object
    n_used: int
    n_failed: int


def materialpoint_loss(specs, params, samples: MaterialPointSamples, settings: ModelSettings, temperature_scale, stress_scale=1.0):
    """MSE of the axial nominal stress with entropy from the local Newton
    solve.

    The entropy enters the tape through one Newton correction evaluated at the
    converged root, ``s = s* - (T(s*; params) - T) / (dT/ds)(s*)`` with the
    slope held constant; its value is ``s*`` and its parameter derivative is
    the implicit-function derivative.
    """
    plain = {k: [{n: np.asarray(ad.value(v)) for n, v in layer.items()} for layer in params[k]] for k in ENERGY_NETS}
    F = samples.F
    kin = Kinematics.of(F)
    T_model = samples.T / temperature_scale
    n_P_plain, n_T_plain = normalization_constants(specs, plain, settings.T0_model, settings.nT_mode)
    n_T_plain = float(ad.value(n_T_plain))
    ok = np.ones(len(T_model), dtype=bool)
    try:
        s_star = solve_entropy_core(specs, plain, kin, T_model, n_T_plain, tol=1e-12 * max(1.0, float(T_model.max())))
    except (ConvergenceError, ModelInvalidError):
        # fall back to per-sample solves so one bad sample does not sink the batch
        s_star = np.zeros(len(T_model))
        for i in range(len(T_model)):
            sub = Kinematics.of(F[i : i + 1])
            try:
                s_star[i] = solve_entropy_core(specs, plain, sub, T_model[i : i + 1], n_T_plain)[0]
            except (ConvergenceError, ModelInvalidError):
                ok[i] = False
    if not ok.any():
        return MaterialPointResult(float("nan"), 0, int((~ok).sum()))
    idx = np.flatnonzero(ok)
    kin = Kinematics.of(F[idx])
    s_star = s_star[idx]
    _, slope = _temperature_and_slope(specs, plain, kin, s_star, n_T_plain)
    constants = normalization_constants(specs, params, settings.T0_model, settings.nT_mode)
    n_P, n_T = constants
    _, _, _, _, ds = energy_partials(specs, params, kin.I1b, kin.I2b, kin.Jb, s_star)
    s_tape = s_star - (ds * n_T - T_model[idx]) * (1.0 / slope)
    _, d1, d2, dJ, _ = energy_partials(specs, params, kin.I1b, kin.I2b, kin.Jb, s_tape)
    P11 = (
        d1 * kin.dI1[:, 0, 0] + d2 * kin.dI2[:, 0, 0] + (dJ - n_P) * kin.dJ[:, 0, 0]
        + kin.growth_gradient(settings.eps_gr)[:, 0, 0]
    ) * n_T * settings.energy_scale
    err = (P11 - samples.P11[idx]) * (1.0 / stress_scale)
    loss = (err * err).sum() * (1.0 / len(idx))
    return MaterialPointResult(loss, len(idx), int((~ok).sum()))


def predict_P11(model, samples: MaterialPointSamples):
    """Axial nominal stress of a trained model at the sample states."""
    s = model.solve_entropy(samples.F, samples.T)
    return model.piola_stress(samples.F, s)[:, 0, 0]
