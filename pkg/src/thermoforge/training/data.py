"""Training data: full-field scenarios, material-point samples and the
normalization constants fixed before training."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from ..constitutive import GradientKinematics, Kinematics
from ..fem.assembly import dirichlet_matrix, external_matrix, local_fields, point_kinematics
from ..fem.problem import Problem
from ..kinematics import uniaxial_incompressible


@dataclass
class Scenario:
    """A problem with recorded nodal fields ``x`` (S+1, ndof) and per-dof
    reactions (S, ndof), thermal reactions per unit time."""

    problem: Problem
    x: np.ndarray
    reactions: np.ndarray
    name: str = "scenario"

    @property
    def dt(self):
        return np.array([st.dt for st in self.problem.steps])

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.problem.to_json(os.path.join(directory, "problem.json"))
        np.savez(os.path.join(directory, "fields.npz"), x=self.x, reactions=self.reactions)
        with open(os.path.join(directory, "scenario.json"), "w") as fh:
            json.dump({"name": self.name, "n_steps": self.problem.n_steps}, fh)

    @classmethod
    def load(cls, directory):
        problem = Problem.from_json(os.path.join(directory, "problem.json"))
        with np.load(os.path.join(directory, "fields.npz")) as z:
            x, R = z["x"], z["reactions"]
        name = os.path.basename(os.path.normpath(directory))
        meta = os.path.join(directory, "scenario.json")
        if os.path.exists(meta):
            with open(meta) as fh:
                name = json.load(fh).get("name", name)
        if x.shape != (problem.n_steps + 1, problem.dofs.n_dof) or R.shape != (problem.n_steps, problem.dofs.n_dof):
            raise ValueError(f"field arrays of {directory!r} do not match the problem")
        return cls(problem, x, R, name)


@dataclass
class NormalizationState:
    """Load scales (mechanical, thermal), the temperature scale and the
    thermal-gradient scale.

    The load scales are the largest absolute external load or reaction that
    enters the residual of either block (thermal rows already multiplied by
    the step size); a block without loads keeps scale 1.  The gradient scale
    is the largest gradient norm seen at any quadrature point.  The energy
    and dissipation scales multiply the energy and dissipation network
    outputs; training fixes them before the first epoch (``dissipation=None``
    reuses the energy scale).
    """

    mechanical: float = 1.0
    thermal: float = 1.0
    temperature: float = 1.0
    gradient: float = 1.0
    energy: float = 1.0
    dissipation: float | None = None

    def row_scales(self, problem: Problem):
        sc = np.full(problem.dofs.n_dof, self.mechanical)
        sc[problem.dofs.n_u :] = self.thermal
        return sc

    def to_dict(self):
        return {"mechanical": self.mechanical, "thermal": self.thermal, "temperature": self.temperature, "gradient": self.gradient,
                "energy": self.energy, "dissipation": self.dissipation}

    @classmethod
    def from_dict(cls, d):
        D = d.get("dissipation")
        return cls(float(d["mechanical"]), float(d["thermal"]), float(d["temperature"]), float(d.get("gradient", 1.0)),
                   float(d.get("energy", 1.0)), None if D is None else float(D))


def _positive_or_one(v):
    return float(v) if v > 0.0 and np.isfinite(v) else 1.0


def normalization_for(scenarios) -> NormalizationState:
    mech = therm = 0.0
    t_max = g_max = 0.0
    for sc in scenarios:
        p = sc.problem
        nu = p.dofs.n_u
        loads = external_matrix(p) + sc.reactions * _thermal_dt(p)
        mech = max(mech, np.abs(loads[:, :nu]).max(initial=0.0))
        therm = max(therm, np.abs(loads[:, nu:]).max(initial=0.0))
        t_max = max(t_max, np.abs(sc.x[:, nu:]).max(initial=0.0))
        g = point_kinematics(p, local_fields(p, sc.x)).g
        g_max = max(g_max, np.linalg.norm(g, axis=-1).max(initial=0.0))
    return NormalizationState(_positive_or_one(mech), _positive_or_one(therm), _positive_or_one(t_max), _positive_or_one(g_max))


def _thermal_dt(problem: Problem):
    """Row factors turning per-unit-time thermal reactions into residual rows."""
    f = np.ones((problem.n_steps, problem.dofs.n_dof))
    f[:, problem.dofs.n_u :] = np.array([st.dt for st in problem.steps])[:, None]
    return f


@dataclass
class PreparedScenario:
    """Constant arrays of one scenario, in the layout the loss needs."""

    scenario: Scenario
    kin: Kinematics  # all states, flattened (S+1)*E*Q
    grad: GradientKinematics  # states 1..S, flattened
    T: np.ndarray  # (S+1)*E*Q absolute temperatures
    n_points: int  # E*Q per state
    target: np.ndarray  # (S, ndof): external loads plus reactions (residual rows)
    dirichlet: np.ndarray  # (S, ndof) bool
    row_scale: np.ndarray  # (ndof,)
    dt: np.ndarray  # (S,)
    rows: np.ndarray  # (ndof,) bool, residual rows that enter the loss


BALANCES = ("coupled", "thermal")


def prepare(scenario: Scenario, norm: NormalizationState, balances="coupled") -> PreparedScenario:
    """``balances="thermal"`` treats the body as a rigid heat conductor and
    keeps only the energy-balance rows in the loss."""
    if balances not in BALANCES:
        raise ValueError(f"balances must be one of {BALANCES}")
    p = scenario.problem
    xe = local_fields(p, scenario.x)
    pk = point_kinematics(p, xe)
    S1 = scenario.x.shape[0]
    nq = pk.T.shape[1] * pk.T.shape[2]
    F = pk.F.reshape(-1, 3, 3)
    kin = Kinematics.of(F)
    g = pk.g[1:].reshape(-1, 3)
    grad = GradientKinematics.of(g, F[nq:], norm.gradient)
    masks, _ = dirichlet_matrix(p)
    target = external_matrix(p) + np.where(masks, scenario.reactions, 0.0) * _thermal_dt(p)
    rows = p.dofs.thermal_mask() if balances == "thermal" else np.ones(p.dofs.n_dof, dtype=bool)
    return PreparedScenario(
        scenario, kin, grad, pk.T.reshape(-1), nq, target, masks, norm.row_scales(p), scenario.dt, rows
    )


# material-point samples ------------------------------------------------------------


@dataclass
class MaterialPointSamples:
    """Uniaxial incompressible samples: temperature (K), stretch ``F11`` and
    nominal stress ``P11``."""

    T: np.ndarray
    F11: np.ndarray
    P11: np.ndarray

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64).ravel()
        self.F11 = np.asarray(self.F11, dtype=np.float64).ravel()
        self.P11 = np.asarray(self.P11, dtype=np.float64).ravel()
        if not (len(self.T) == len(self.F11) == len(self.P11)):
            raise ValueError("T, F11 and P11 must have equal length")
        if np.any(self.T <= 0.0) or np.any(self.F11 <= 0.0):
            raise ValueError("temperatures and stretches must be positive")

    @property
    def F(self):
        return uniaxial_incompressible(self.F11)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh)]
        if not rows:
            raise ValueError(f"{path!r} holds no samples")
        keys = {k.strip().lower(): k for k in rows[0]}
        try:
            cols = [keys["t"], keys["f11"], keys["p11"]]
        except KeyError:
            raise ValueError("material-point CSV needs columns T, F11, P11") from None
        arr = np.array([[float(r[c]) for c in cols] for r in rows])
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "F11", "P11"])
            for row in zip(self.T, self.F11, self.P11):
                w.writerow([repr(float(v)) for v in row])
