"""Neural internal energy, dissipation potential and their state laws.

The internal energy is assembled from three zero-anchored input-convex
networks plus a growth term,

    e = n_T * (e_aux + e_growth - n_P * (J - 1)),

where ``n_P`` removes the rest-state stress and ``n_T`` pins the rest-state
temperature.  The dissipation potential is a partially input-convex network
of the three (squared) thermal-gradient norms, parametrized by ``(J - 1, s)``.

Two layers are provided:

* "core" functions taking ``(specs, params, ...)`` that run on plain arrays
  and on tape variables, so the training loss can differentiate through them;
* :class:`NeuralThermoModel`, which holds trained parameters and exposes the
  state laws in physical units.

Internally everything is evaluated in model units: temperatures are divided
by ``temperature_scale`` and energies by ``energy_scale``.  Entropy in model
units is therefore ``s_phys * temperature_scale / energy_scale``.  Thermal
gradients enter the dissipation network divided by ``gradient_scale`` and
its output is multiplied by ``dissipation_scale`` (by default the energy
scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as ad
from . import netarch
from .kinematics import (
    cofactor,
    dissipation_invariants,
    invariant_derivatives,
    invariants,
    right_cauchy_green,
)

ENERGY_NETS = ("FICNN_Fs", "FICNN_F", "FICNN_s")
DISSIPATION_NET = "PICNN_g"
ENTROPY_NET = "MLP_s"
NETWORKS = ENERGY_NETS + (DISSIPATION_NET, ENTROPY_NET)

SOFTPLUS_ZERO = float(ad.softplus(np.zeros(())))


class ModelInvalidError(RuntimeError):
    """Parameters violate a structural requirement (e.g. dT/ds <= 0)."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# small generic helpers ---------------------------------------------------------


def _mat(x):
    """Append two unit axes so a per-point scalar scales a 3x3 tensor."""
    if isinstance(x, ad.Var):
        return x.reshape(x.shape + (1, 1))
    return np.asarray(x, dtype=np.float64)[..., None, None]


def _tangent(x, direction, k):
    shape = np.shape(ad.value(x))
    eps = np.zeros((k,) + shape)
    eps[direction] = 1.0
    return ad.Dual(x, eps)


# energy core -------------------------------------------------------------------


def _aux_energy_from_inputs(specs, params, x_def, x_ent):
    """``e_aux`` from stacked deformation inputs ``[I1b, I2b, Jb, -Jb]`` and
    entropy input ``[sb]``."""
    joint = netarch.ficnn_forward(specs["FICNN_Fs"], params["FICNN_Fs"], ad.concatenate([x_def, x_ent]))
    feat_def = netarch.ficnn_forward(specs["FICNN_F"], params["FICNN_F"], x_def)
    feat_ent = netarch.ficnn_forward(specs["FICNN_s"], params["FICNN_s"], x_ent)
    # subtracting softplus(0)^2 per feature makes the product term vanish at rest
    prod = ad.softplus(feat_def) * ad.softplus(feat_ent) - SOFTPLUS_ZERO * SOFTPLUS_ZERO
    return joint[..., 0] + prod.sum(axis=-1)


def aux_energy_core(specs, params, I1b, I2b, Jb, sb):
    x_def = ad.stack([I1b, I2b, Jb, -Jb])
    x_ent = ad.stack([sb])
    return _aux_energy_from_inputs(specs, params, x_def, x_ent)


def energy_partials(specs, params, I1b, I2b, Jb, sb):
    """``e_aux`` and its partial derivatives with respect to ``(I1, I2, J, s)``.

    Uses a four-direction forward tangent; works with tape-variable
    parameters and entropy.
    """
    k = 4
    i1, i2, j, s = (_tangent(v, d, k) for d, v in enumerate((I1b, I2b, Jb, sb)))
    out = aux_energy_core(specs, params, i1, i2, j, s)
    eps = out.eps
    return out.val, eps[0], eps[1], eps[2], eps[3]


def normalization_constants(specs, params, T0_model, nT_mode="computed"):
    """``(n_P, n_T)`` from the rest-state derivatives of ``e_aux``."""
    z = np.zeros(())
    _, d1, d2, dJ, ds = energy_partials(specs, params, z, z, z, z)
    n_P = 2.0 * d1 + 4.0 * d2 + dJ
    if nT_mode == "fixed":
        return n_P, 1.0
    if nT_mode != "computed":
        raise netarch.ConfigurationError(f"unknown n_T mode {nT_mode!r}")
    ds0 = float(ad.value(ds))
    if not math.isfinite(ds0) or ds0 <= 0.0:
        raise ModelInvalidError("rest-state entropy derivative of the energy must be positive")
    return n_P, T0_model / ds


def growth_energy(F, eps_gr):
    inv = invariants(F)
    return eps_gr * (inv.I1_bar + inv.I2_bar + inv.J_bar - 7.0 * np.log(inv.J))


def growth_energy_gradient(F, eps_gr):
    F = np.asarray(F, dtype=np.float64)
    dI1, dI2, dJ = invariant_derivatives(F)
    inv_T = dJ / invariants(F).J[..., None, None]
    return eps_gr * (dI1 + dI2 + dJ - 7.0 * inv_T)


@dataclass
class Kinematics:
    """Per-point deformation quantities reused across constitutive calls."""

    F: np.ndarray
    I1b: np.ndarray
    I2b: np.ndarray
    Jb: np.ndarray
    J: np.ndarray
    dI1: np.ndarray
    dI2: np.ndarray
    dJ: np.ndarray

    @classmethod
    def of(cls, F):
        F = np.asarray(F, dtype=np.float64)
        inv = invariants(F)
        dI1, dI2, dJ = invariant_derivatives(F)
        return cls(F, inv.I1_bar, inv.I2_bar, inv.J_bar, inv.J, dI1, dI2, dJ)

    def growth_gradient(self, eps_gr):
        inv_T = self.dJ / self.J[..., None, None]
        return eps_gr * (self.dI1 + self.dI2 + self.dJ - 7.0 * inv_T)


def stress_temperature_core(specs, params, kin: Kinematics, sb, eps_gr, T0_model, nT_mode="computed", constants=None):
    """Piola stress and temperature (model units) at entropy ``sb``.

    ``constants`` may carry precomputed ``(n_P, n_T)``.
    """
    _, d1, d2, dJ, ds = energy_partials(specs, params, kin.I1b, kin.I2b, kin.Jb, sb)
    n_P, n_T = constants if constants is not None else normalization_constants(specs, params, T0_model, nT_mode)
    P = (_mat(d1) * kin.dI1 + _mat(d2) * kin.dI2 + _mat(dJ - n_P) * kin.dJ + kin.growth_gradient(eps_gr)) * n_T
    T = ds * n_T
    return P, T


def temperature_core(specs, params, kin: Kinematics, sb, n_T):
    _, _, _, _, ds = energy_partials(specs, params, kin.I1b, kin.I2b, kin.Jb, sb)
    return ds * n_T


def internal_energy_core(specs, params, kin: Kinematics, sb, eps_gr, T0_model, nT_mode="computed", constants=None):
    e_aux = aux_energy_core(specs, params, kin.I1b, kin.I2b, kin.Jb, sb)
    n_P, n_T = constants if constants is not None else normalization_constants(specs, params, T0_model, nT_mode)
    e_gr = eps_gr * (kin.I1b + kin.I2b + kin.Jb - 7.0 * np.log(kin.J))
    return (e_aux + e_gr - n_P * kin.Jb) * n_T


# dissipation core -------------------------------------------------------------


@dataclass
class GradientKinematics:
    """Inputs of the dissipation network and their gradients in ``g``.

    The inputs are the halved squares of the three gradient norms,
    ``|g|^2/2, |g|_C^2/2, |g|_cofC^2/2``, with gradients ``g, C g, cof(C) g``.
    The squares keep the potential smooth at ``g = 0``, so the flux is linear
    in small gradients instead of jumping to a finite value.
    """

    norms: np.ndarray  # (..., 3) network inputs
    directions: np.ndarray  # (..., 3 inputs, 3 components) d input / d g

    @classmethod
    def of(cls, g, F, scale=1.0):
        g = np.asarray(g, dtype=np.float64) / scale
        F = np.asarray(F, dtype=np.float64)
        norms = dissipation_invariants(g, F).as_array()
        C = right_cauchy_green(F)
        Ag = np.stack([g, np.einsum("...ij,...j->...i", C, g), np.einsum("...ij,...j->...i", cofactor(C), g)], axis=-2)
        return cls(0.5 * norms * norms, Ag)


def dissipation_partials(spec, params, gk: GradientKinematics, Jb, sb):
    """``phi`` and its derivatives with respect to the three network inputs."""
    norms = gk.norms
    eps = np.zeros((3,) + norms.shape)
    for k in range(3):
        eps[k, ..., k] = 1.0
    xc = ad.Dual(norms, eps)
    xp = ad.stack([Jb, sb])
    out = netarch.picnn_forward(spec, params, xc, xp)[..., 0]
    return out.val, out.eps


def heat_flux_core(spec, params, gk: GradientKinematics, Jb, sb):
    """``q = sum_k dphi/dx_k * A_k g`` with ``x_k = g.A_k g / 2``."""
    _, dphi = dissipation_partials(spec, params, gk, Jb, sb)
    if isinstance(dphi, ad.Var):
        n = gk.directions.ndim - 2
        letters = "abcdefgh"[:n]
        return ad.einsum(f"k{letters},{letters}kd->{letters}d", dphi, gk.directions)
    return np.einsum("k...,...kd->...d", dphi, gk.directions)


def dissipation_core(spec, params, gk: GradientKinematics, Jb, sb):
    xp = ad.stack([Jb, sb])
    return netarch.picnn_forward(spec, params, gk.norms, xp)[..., 0]


def entropy_mlp_core(spec, params, kin: Kinematics, T_model, T0_model):
    x = ad.stack([kin.I1b, kin.I2b, kin.Jb, np.asarray(T_model, dtype=np.float64) - T0_model])
    return netarch.mlp_forward(spec, params, x)[..., 0]


# entropy inversion -------------------------------------------------------------


@dataclass
class EntropySolveLog:
    iterations: int = 0
    residuals: list = field(default_factory=list)  # max |T - T_target| per iteration
    bisection_points: int = 0


def _temperature_and_slope(specs, params, kin: Kinematics, sb, n_T):
    one = np.ones_like(sb)
    zero = np.zeros_like(sb)
    s2 = ad.Dual(ad.Dual(sb, one), ad.Dual(one, zero))
    e = aux_energy_core(specs, params, kin.I1b, kin.I2b, kin.Jb, s2)
    return n_T * np.asarray(e.val.eps, float), n_T * np.asarray(e.eps.eps, float)


def _temperature_only(specs, params, kin, sb, n_T):
    e = aux_energy_core(specs, params, kin.I1b, kin.I2b, kin.Jb, ad.Dual(sb, np.ones_like(sb)))
    return n_T * np.asarray(e.eps, float)


def _subset(kin: Kinematics, mask):
    return Kinematics(*(getattr(kin, f)[mask] for f in ("F", "I1b", "I2b", "Jb", "J", "dI1", "dI2", "dJ")))


def _bisect(specs, params, kin, T_target, s_start, n_T, tol, max_grow=200, max_iter=400):
    """Bracket-and-bisect root of ``T(s) = T_target`` (monotone increasing)."""
    lo = s_start.copy()
    hi = s_start.copy()
    width = np.maximum(1.0, np.abs(s_start))
    r_lo = _temperature_only(specs, params, kin, lo, n_T) - T_target
    for _ in range(max_grow):
        need = r_lo > 0.0
        if not need.any():
            break
        lo = np.where(need, lo - width, lo)
        width = np.where(need, 2.0 * width, width)
        r_lo = _temperature_only(specs, params, kin, lo, n_T) - T_target
    width = np.maximum(1.0, np.abs(s_start))
    r_hi = _temperature_only(specs, params, kin, hi, n_T) - T_target
    for _ in range(max_grow):
        need = r_hi < 0.0
        if not need.any():
            break
        hi = np.where(need, hi + width, hi)
        width = np.where(need, 2.0 * width, width)
        r_hi = _temperature_only(specs, params, kin, hi, n_T) - T_target
    if np.any(r_lo > 0.0) or np.any(r_hi < 0.0):
        raise ConvergenceError("could not bracket the entropy root")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = _temperature_only(specs, params, kin, mid, n_T) - T_target
        if np.all(np.abs(r) < tol) or np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
        lo = np.where(r < 0.0, mid, lo)
        hi = np.where(r < 0.0, hi, mid)
    return mid


def solve_entropy_core(specs, params, kin: Kinematics, T_target, n_T, s_init=None, tol=None, max_iter=50, log=None, fallback=True):
    """Newton iteration on ``dT/ds`` for every point; with ``fallback``,
    points that fail continue with bracketed bisection followed by Newton
    polishing, otherwise they raise :class:`ConvergenceError`."""
    T_target = np.broadcast_to(np.asarray(T_target, dtype=np.float64), np.shape(kin.I1b)).copy()
    if np.any(T_target <= 0.0):
        raise ad.DomainError("target temperature must be positive")
    s = np.zeros_like(T_target) if s_init is None else np.broadcast_to(np.asarray(s_init, float), T_target.shape).copy()
    if tol is None:
        tol = 1e-10 * float(np.max(T_target))
    n_T = float(n_T)
    active = np.ones(s.shape, dtype=bool)
    for it in range(max_iter):
        sub = _subset(kin, active) if not active.all() else kin
        T, dT = _temperature_and_slope(specs, params, sub, s[active], n_T)
        r = T - T_target[active]
        if log is not None:
            log.iterations = it + 1
            log.residuals.append(float(np.max(np.abs(r), initial=0.0)))
        if np.any(np.isfinite(dT) & (dT <= 0.0)):
            raise ModelInvalidError("d2e/ds2 must be positive")
        done = np.abs(r) < tol
        bad = ~np.isfinite(r) | ~np.isfinite(dT)
        step = np.where(done | bad, 0.0, r / np.where(bad, 1.0, dT))
        idx = np.flatnonzero(active)
        s[idx] -= step
        active[idx[done | bad]] = False
        # points whose iterate became non-finite restart from bisection below
        s[idx[bad]] = np.nan
        if not active.any():
            break
    T_fin = _temperature_only(specs, params, kin, np.nan_to_num(s), n_T)
    failed = ~np.isfinite(s) | ~(np.abs(T_fin - T_target) < tol)
    if failed.any() and not fallback:
        resid = np.abs(T_fin - T_target)[failed]
        raise ConvergenceError(f"entropy solve did not converge in {max_iter} iterations", residual=float(np.nanmax(resid, initial=np.inf)))
    if failed.any():
        sub = _subset(kin, failed)
        start = np.where(np.isfinite(s[failed]), s[failed], 0.0)
        start = np.zeros_like(start) if s_init is None else start
        s_b = _bisect(specs, params, sub, T_target[failed], start, n_T, tol)
        for _ in range(8):
            T, dT = _temperature_and_slope(specs, params, sub, s_b, n_T)
            r = T - T_target[failed]
            if np.all(np.abs(r) < tol):
                break
            s_b = s_b - np.where(np.abs(r) < tol, 0.0, r / dT)
        s[failed] = s_b
        if log is not None:
            log.bisection_points += int(failed.sum())
        T_fin = _temperature_only(specs, params, kin, s, n_T)
        resid = np.abs(T_fin - T_target)
        if not np.all(resid < tol):
            raise ConvergenceError("entropy solve did not converge", residual=float(np.max(resid)))
    return s


# model -----------------------------------------------------------------------


def init_model_params(seed, specs=None):
    specs = specs or netarch.default_specs()
    seeds = np.random.SeedSequence(seed).spawn(len(NETWORKS))
    return {name: netarch.init_params(specs[name], ss) for name, ss in zip(NETWORKS, seeds)}


@dataclass
class NeuralThermoModel:
    """Learned thermomechanical material (energy, dissipation, entropy MLP).

    All public methods take and return physical units: ``F`` (..., 3, 3),
    entropy density, absolute temperature in K, thermal gradient ``g`` in
    1/mm.  Returns broadcast over leading axes.
    """

    params: dict
    specs: dict = field(default_factory=netarch.default_specs)
    T0: float = 293.15
    eps_gr: float = 1e-6
    nT_mode: str = "computed"
    temperature_scale: float = 1.0
    energy_scale: float = 1.0
    gradient_scale: float = 1.0
    dissipation_scale: float | None = None
    _constants: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def initialize(cls, seed, **kwargs):
        specs = kwargs.pop("specs", None) or netarch.default_specs()
        return cls(init_model_params(seed, specs), specs, **kwargs)

    def __post_init__(self):
        for name in NETWORKS:
            netarch.check_params(self.specs[name], self.params[name])
        if self.eps_gr <= 0.0:
            raise netarch.ConfigurationError("growth weight must be positive")
        if not self.gradient_scale > 0.0 or not self.phi_scale > 0.0:
            raise netarch.ConfigurationError("gradient and dissipation scales must be positive")

    def with_params(self, params):
        return replace(self, params=params)

    # unit conversion
    @property
    def T0_model(self):
        return self.T0 / self.temperature_scale

    @property
    def phi_scale(self):
        return self.energy_scale if self.dissipation_scale is None else self.dissipation_scale

    def entropy_to_model(self, s, shape=None):
        s = np.asarray(s, dtype=np.float64) * (self.temperature_scale / self.energy_scale)
        return s if shape is None else np.broadcast_to(s, shape)

    def entropy_to_physical(self, s_model):
        return np.asarray(s_model, dtype=np.float64) * (self.energy_scale / self.temperature_scale)

    def constants(self):
        """``(n_P, n_T)`` for the current parameters (cached)."""
        if self._constants is None:
            n_P, n_T = normalization_constants(self.specs, self.params, self.T0_model, self.nT_mode)
            self._constants = (float(n_P), float(n_T))
        return self._constants

    def energy_args(self):
        return self.specs, self.params

    # energetic state laws
    def auxiliary_energy(self, F, s):
        kin = Kinematics.of(F)
        return self.energy_scale * aux_energy_core(self.specs, self.params, kin.I1b, kin.I2b, kin.Jb, self.entropy_to_model(s, kin.Jb.shape))

    def internal_energy(self, F, s):
        kin = Kinematics.of(F)
        e = internal_energy_core(
            self.specs, self.params, kin, self.entropy_to_model(s, kin.Jb.shape), self.eps_gr, self.T0_model, constants=self.constants()
        )
        return self.energy_scale * e

    def stress_and_temperature(self, F, s):
        kin = Kinematics.of(F)
        P, T = stress_temperature_core(
            self.specs, self.params, kin, self.entropy_to_model(s, kin.Jb.shape), self.eps_gr, self.T0_model, constants=self.constants()
        )
        return self.energy_scale * P, self.temperature_scale * T

    def piola_stress(self, F, s):
        return self.stress_and_temperature(F, s)[0]

    def temperature_of(self, F, s):
        kin = Kinematics.of(F)
        T = temperature_core(self.specs, self.params, kin, self.entropy_to_model(s, kin.Jb.shape), self.constants()[1])
        T = self.temperature_scale * np.asarray(T)
        if np.any(T <= 0.0):
            raise ModelInvalidError("temperature must be positive")
        return T

    def temperature_slope(self, F, s):
        """``d2e/ds2`` in physical units."""
        kin = Kinematics.of(F)
        _, dT = _temperature_and_slope(self.specs, self.params, kin, self.entropy_to_model(s, kin.Jb.shape), self.constants()[1])
        return dT * self.temperature_scale**2 / self.energy_scale

    def solve_entropy(self, F, T, s_init=None, tol=None, max_iter=50, log=None, fallback=True):
        F = np.asarray(F, dtype=np.float64)
        T = np.asarray(T, dtype=np.float64)
        shape = np.broadcast_shapes(F.shape[:-2], T.shape)
        kin = Kinematics.of(np.broadcast_to(F, shape + (3, 3)).reshape(-1, 3, 3))
        T_model = np.broadcast_to(T, shape).reshape(-1) / self.temperature_scale
        if tol is None:
            tol = 1e-10 * self.T0
        s0 = None if s_init is None else np.broadcast_to(self.entropy_to_model(s_init), shape).reshape(-1)
        s = solve_entropy_core(
            self.specs, self.params, kin, T_model, self.constants()[1], s0, tol / self.temperature_scale, max_iter, log, fallback
        )
        return self.entropy_to_physical(s).reshape(shape)

    def entropy_mlp_predict(self, F, T):
        kin = Kinematics.of(F)
        T_model = np.asarray(T, dtype=np.float64) / self.temperature_scale
        s = entropy_mlp_core(self.specs[ENTROPY_NET], self.params[ENTROPY_NET], kin, T_model, self.T0_model)
        return self.entropy_to_physical(s)

    # dissipative state laws
    def dissipation_potential(self, g, F, s):
        gk = GradientKinematics.of(g, F, self.gradient_scale)
        Jb = invariants(F).J_bar
        phi = dissipation_core(self.specs[DISSIPATION_NET], self.params[DISSIPATION_NET], gk, Jb, self.entropy_to_model(s, Jb.shape))
        return self.phi_scale * phi

    def heat_flux(self, g, F, s):
        gk = GradientKinematics.of(g, F, self.gradient_scale)
        Jb = invariants(F).J_bar
        q = heat_flux_core(self.specs[DISSIPATION_NET], self.params[DISSIPATION_NET], gk, Jb, self.entropy_to_model(s, Jb.shape))
        return (self.phi_scale / self.gradient_scale) * q


# module-level conveniences mirroring the operation list


def auxiliary_energy(model: NeuralThermoModel, F, s):
    return model.auxiliary_energy(F, s)


def internal_energy(model: NeuralThermoModel, F, s):
    return model.internal_energy(F, s)


def piola_stress(model: NeuralThermoModel, F, s):
    return model.piola_stress(F, s)


def temperature_of(model: NeuralThermoModel, F, s):
    return model.temperature_of(F, s)


def dissipation_potential(model: NeuralThermoModel, g, F, s):
    return model.dissipation_potential(g, F, s)


def heat_flux(model: NeuralThermoModel, g, F, s):
    return model.heat_flux(g, F, s)


def solve_entropy(model: NeuralThermoModel, F, T_target, s_init=None, tol=None, max_iter=50, log=None, fallback=True):
    return model.solve_entropy(F, T_target, s_init, tol, max_iter, log, fallback)


def entropy_mlp_predict(model: NeuralThermoModel, F, T):
    return model.entropy_mlp_predict(F, T)
