"""Coupled displacement-temperature problems: mesh, degrees of freedom and
load schedules, with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, face_quadrature, shape_eval, FACES, GAUSS_POINTS, GAUSS_WEIGHTS


class ScheduleError(ValueError):
    pass


@dataclass
class DirichletU:
    node_set: str
    components: tuple  # subset of (0, 1, 2)
    values: tuple  # one value (mm) per component


@dataclass
class DirichletT:
    node_set: str
    value: float  # K


@dataclass
class SurfaceLoad:
    face_set: str
    value: object  # traction 3-vector (N/mm^2) or inward heat flux (mW/mm^2)


@dataclass
class Step:
    dt: float
    dirichlet_u: list = field(default_factory=list)
    dirichlet_T: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    fluxes: list = field(default_factory=list)
    body_force: tuple = (0.0, 0.0, 0.0)  # N/mm^3
    heat_source: float = 0.0  # mW/mm^3

    def to_dict(self):
        return {
            "dt_s": self.dt,
            "dirichlet_u": [{"node_set": d.node_set, "components": list(d.components), "values": list(d.values)} for d in self.dirichlet_u],
            "dirichlet_T": [{"node_set": d.node_set, "value": d.value} for d in self.dirichlet_T],
            "tractions": [{"face_set": t.face_set, "value": list(np.asarray(t.value, float))} for t in self.tractions],
            "fluxes": [{"face_set": f.face_set, "value": float(f.value)} for f in self.fluxes],
            "body_force": list(self.body_force),
            "heat_source": self.heat_source,
        }

    @classmethod
    def from_dict(cls, d):
        dt = float(d["dt_s"])
        if not dt > 0.0:
            raise ScheduleError("time increment must be positive")
        return cls(
            dt,
            [DirichletU(x["node_set"], tuple(x.get("components", (0, 1, 2))), tuple(float(v) for v in x["values"])) for x in d.get("dirichlet_u", [])],
            [DirichletT(x["node_set"], float(x["value"])) for x in d.get("dirichlet_T", [])],
            [SurfaceLoad(x["face_set"], np.asarray(x["value"], float)) for x in d.get("tractions", [])],
            [SurfaceLoad(x["face_set"], float(x["value"])) for x in d.get("fluxes", [])],
            tuple(float(v) for v in d.get("body_force", (0.0, 0.0, 0.0))),
            float(d.get("heat_source", 0.0)),
        )


class DofMap:
    """Global layout: displacements node-major (x, y, z), then temperatures."""

    def __init__(self, n_nodes):
        self.n_nodes = n_nodes
        self.n_u = 3 * n_nodes
        self.n_dof = 4 * n_nodes

    def u(self, nodes, comp):
        return 3 * np.asarray(nodes) + comp

    def T(self, nodes):
        return self.n_u + np.asarray(nodes)

    def split(self, x):
        x = np.asarray(x)
        return x[..., : self.n_u].reshape(x.shape[:-1] + (self.n_nodes, 3)), x[..., self.n_u :]

    def join(self, u, T):
        u = np.asarray(u, float)
        return np.concatenate([u.reshape(u.shape[:-2] + (-1,)), np.asarray(T, float)], axis=-1)

    def thermal_mask(self):
        m = np.zeros(self.n_dof, dtype=bool)
        m[self.n_u :] = True
        return m


@dataclass
class ElementGeometry:
    """Quadrature data: ``dNdX`` (ne, 8q, 8a, 3), ``wdet`` (ne, 8q), shape
    values ``N`` (8q, 8a) and ``element_dofs`` (ne, 32)."""

    dNdX: np.ndarray
    wdet: np.ndarray
    N: np.ndarray
    element_dofs: np.ndarray

    @property
    def weighted_N(self):
        return self.wdet[:, :, None] * self.N[None]

    @property
    def weighted_dNdX(self):
        return self.wdet[:, :, None, None] * self.dNdX


def element_geometry(mesh: Mesh, dofs: DofMap) -> ElementGeometry:
    N, dN = shape_eval(GAUSS_POINTS)
    X = mesh.nodes[mesh.elements]
    Jm = np.einsum("eai,qaj->eqij", X, dN)  # dX_i / dxi_j
    detJ = np.linalg.det(Jm)
    if np.any(detJ <= 0.0):
        raise ValueError("degenerate element")
    Jinv = np.linalg.inv(Jm)
    dNdX = np.einsum("qaj,eqji->eqai", dN, Jinv)
    el = mesh.elements
    udofs = (3 * el[:, :, None] + np.arange(3)).reshape(len(el), 24)
    tdofs = dofs.n_u + el
    return ElementGeometry(dNdX, detJ * GAUSS_WEIGHTS, N, np.concatenate([udofs, tdofs], axis=1))


def face_weights(mesh: Mesh, face_set) -> np.ndarray:
    """Nodal weights ``int N_a dA`` over a face set, shape ``(n_nodes,)``."""
    w = np.zeros(mesh.n_nodes)
    for elem, face in np.asarray(face_set).reshape(-1, 2):
        pts, wts, free = face_quadrature(int(face))
        N, dN = shape_eval(pts)
        X = mesh.nodes[mesh.elements[elem]]
        t1 = np.einsum("ai,qa->qi", X, dN[:, :, free[0]])
        t2 = np.einsum("ai,qa->qi", X, dN[:, :, free[1]])
        da = np.linalg.norm(np.cross(t1, t2), axis=1) * wts
        np.add.at(w, mesh.elements[elem], N.T @ da)
    return w


def volume_weights(mesh: Mesh, geom: ElementGeometry) -> np.ndarray:
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.elements, np.einsum("eq,qa->ea", geom.wdet, geom.N))
    return w


@dataclass
class Problem:
    mesh: Mesh
    steps: list
    T0: float = 293.15

    def __post_init__(self):
        self.dofs = DofMap(self.mesh.n_nodes)
        self.geometry = element_geometry(self.mesh, self.dofs)
        ne = self.mesh.n_elements
        rows = self.geometry.element_dofs.ravel()
        cols = np.arange(ne * 32)
        # global = scatter @ element-local, summed in a fixed order
        self.scatter = sp.csr_matrix((np.ones(ne * 32), (rows, cols)), shape=(self.dofs.n_dof, ne * 32))
        self._face_w = {}
        self._vol_w = volume_weights(self.mesh, self.geometry)
        for s in self.steps:
            self._check_step(s)

    @property
    def n_steps(self):
        return len(self.steps)

    def _check_step(self, step: Step):
        for d in step.dirichlet_u:
            if d.node_set not in self.mesh.node_sets:
                raise ScheduleError(f"unknown node set {d.node_set!r}")
            if len(d.components) != len(d.values):
                raise ScheduleError("one value per constrained component required")
        for d in step.dirichlet_T:
            if d.node_set not in self.mesh.node_sets:
                raise ScheduleError(f"unknown node set {d.node_set!r}")
        for load in (*step.tractions, *step.fluxes):
            if load.face_set not in self.mesh.face_sets:
                raise ScheduleError(f"unknown face set {load.face_set!r}")
        mask, _ = self.dirichlet(step)
        neu = self.external_loads(step, scaled=False) != 0.0
        # loads applied on Dirichlet rows would be silently absorbed by the reaction
        if np.any(mask & neu & ~self._interior_load_rows(step)):
            raise ScheduleError("a degree of freedom cannot carry both a Dirichlet value and a surface load")

    def _interior_load_rows(self, step):
        # body force and heat source act on every node, including constrained ones
        rows = np.zeros(self.dofs.n_dof, dtype=bool)
        if np.any(np.asarray(step.body_force) != 0.0):
            rows[: self.dofs.n_u] = True
        if step.heat_source != 0.0:
            rows[self.dofs.n_u :] = True
        return rows

    def face_weights(self, name):
        if name not in self._face_w:
            self._face_w[name] = face_weights(self.mesh, self.mesh.face_sets[name])
        return self._face_w[name]

    def dirichlet(self, step: Step):
        """Mask and values of the prescribed degrees of freedom for a step."""
        mask = np.zeros(self.dofs.n_dof, dtype=bool)
        vals = np.zeros(self.dofs.n_dof)
        for d in step.dirichlet_u:
            nodes = self.mesh.node_sets[d.node_set]
            for c, v in zip(d.components, d.values):
                idx = self.dofs.u(nodes, c)
                mask[idx] = True
                vals[idx] = v
        for d in step.dirichlet_T:
            idx = self.dofs.T(self.mesh.node_sets[d.node_set])
            mask[idx] = True
            vals[idx] = d.value
        return mask, vals

    def external_loads(self, step: Step, scaled=True):
        """External work vector; thermal rows carry the ``dt`` factor when
        ``scaled``."""
        f = np.zeros(self.dofs.n_dof)
        fu = f[: self.dofs.n_u].reshape(-1, 3)
        for t in step.tractions:
            fu += self.face_weights(t.face_set)[:, None] * np.asarray(t.value, float)[None, :]
        fu += self._vol_w[:, None] * np.asarray(step.body_force, float)[None, :]
        fT = f[self.dofs.n_u :]
        for q in step.fluxes:
            fT += self.face_weights(q.face_set) * float(q.value)
        fT += self._vol_w * step.heat_source
        if scaled:
            fT *= step.dt
        return f

    def initial_state(self):
        x = np.zeros(self.dofs.n_dof)
        x[self.dofs.n_u :] = self.T0
        return x

    # serialization
    def to_dict(self):
        d = self.mesh.to_dict()
        d["steps"] = [s.to_dict() for s in self.steps]
        d["initial"] = {"T0_K": self.T0}
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(Mesh.from_dict(d), [Step.from_dict(s) for s in d["steps"]], float(d.get("initial", {}).get("T0_K", 293.15)))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


__all__ = [
    "DirichletT", "DirichletU", "DofMap", "ElementGeometry", "FACES", "Problem", "ScheduleError",
    "Step", "SurfaceLoad", "element_geometry", "face_weights", "volume_weights",
]
