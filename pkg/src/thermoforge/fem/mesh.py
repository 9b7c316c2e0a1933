"""Hexahedral meshes, reference-element tables and simple mesh generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# reference coordinates of the 8 nodes (bottom face counter-clockwise, then top)
XI_NODES = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=np.float64,
)

# local face id -> (fixed reference axis, fixed value, local nodes)
FACES = {
    0: (2, -1.0, (0, 1, 2, 3)),
    1: (2, 1.0, (4, 5, 6, 7)),
    2: (1, -1.0, (0, 1, 5, 4)),
    3: (0, 1.0, (1, 2, 6, 5)),
    4: (1, 1.0, (2, 3, 7, 6)),
    5: (0, -1.0, (3, 0, 4, 7)),
}


class MeshError(ValueError):
    pass


def shape_eval(xi):
    """Trilinear shape functions and their reference derivatives.

    ``xi`` has shape ``(..., 3)``; returns ``N`` of shape ``(..., 8)`` and
    ``dN/dxi`` of shape ``(..., 8, 3)``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    t = 1.0 + xi[..., None, :] * XI_NODES  # (..., 8, 3)
    N = 0.125 * t[..., 0] * t[..., 1] * t[..., 2]
    dN = np.empty(t.shape)
    dN[..., 0] = 0.125 * XI_NODES[:, 0] * t[..., 1] * t[..., 2]
    dN[..., 1] = 0.125 * XI_NODES[:, 1] * t[..., 0] * t[..., 2]
    dN[..., 2] = 0.125 * XI_NODES[:, 2] * t[..., 0] * t[..., 1]
    return N, dN


_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[a, b, c] for c in (-_G, _G) for b in (-_G, _G) for a in (-_G, _G)])
GAUSS_WEIGHTS = np.ones(8)


def face_quadrature(face: int):
    """2x2 Gauss points on a local face: reference points ``(4, 3)``, weights
    ``(4,)`` and the two in-face reference axes."""
    axis, val, _ = FACES[face]
    free = [a for a in range(3) if a != axis]
    pts = np.zeros((4, 3))
    k = 0
    for b in (-_G, _G):
        for a in (-_G, _G):
            pts[k, free[0]] = a
            pts[k, free[1]] = b
            pts[k, axis] = val
            k += 1
    return pts, np.ones(4), free


@dataclass
class Mesh:
    nodes: np.ndarray  # (n_nodes, 3) reference coordinates, mm
    elements: np.ndarray  # (n_elem, 8) node indices
    node_sets: dict = field(default_factory=dict)  # name -> int array
    face_sets: dict = field(default_factory=dict)  # name -> (k, 2) [element, local face]

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 8)
        self.node_sets = {k: np.asarray(v, dtype=np.int64).ravel() for k, v in self.node_sets.items()}
        self.face_sets = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in self.face_sets.items()}
        self.validate()

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def validate(self):
        nn = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nn):
            raise MeshError("element connectivity index out of range")
        for name, ids in self.node_sets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= nn):
                raise MeshError(f"node set {name!r} index out of range")
        for name, fs in self.face_sets.items():
            if fs.size and (fs[:, 0].min() < 0 or fs[:, 0].max() >= self.n_elements or fs[:, 1].min() < 0 or fs[:, 1].max() > 5):
                raise MeshError(f"face set {name!r} entry out of range")
        detJ = self.jacobian_determinants()
        if np.any(detJ <= 0.0):
            bad = np.unique(np.nonzero(detJ <= 0.0)[0])
            raise MeshError(f"non-positive Jacobian in elements {bad[:10].tolist()}")

    def jacobian_determinants(self, points=GAUSS_POINTS):
        _, dN = shape_eval(points)
        X = self.nodes[self.elements]  # (ne, 8, 3)
        Jm = np.einsum("eai,qaj->eqij", X, dN)
        return np.linalg.det(Jm)

    def face_nodes(self, name):
        fs = self.face_sets[name]
        loc = np.array([FACES[f][2] for f in fs[:, 1]]).reshape(-1, 4)
        return np.unique(self.elements[fs[:, 0, None], loc])

    def to_dict(self):
        return {
            "nodes": self.nodes.tolist(),
            "hex8": self.elements.tolist(),
            "node_sets": {k: v.tolist() for k, v in self.node_sets.items()},
            "face_sets": {k: v.tolist() for k, v in self.face_sets.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["nodes"], d["hex8"], d.get("node_sets", {}), d.get("face_sets", {}))


# generators ----------------------------------------------------------------------


def _structured(coords_fn, nx, ny, nz):
    """Hex mesh of a mapped block; ``coords_fn(i, j, k)`` gives node positions
    on the ``(nx+1, ny+1, nz+1)`` lattice."""
    idx = np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nz + 1, ny + 1, nx + 1)
    k, j, i = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    nodes = coords_fn(i.ravel(), j.ravel(), k.ravel())
    elems = []
    faces = {n: [] for n in ("imin", "imax", "jmin", "jmax", "kmin", "kmax")}
    for kk in range(nz):
        for jj in range(ny):
            for ii in range(nx):
                e = len(elems)
                elems.append(
                    [
                        idx[kk, jj, ii], idx[kk, jj, ii + 1], idx[kk, jj + 1, ii + 1], idx[kk, jj + 1, ii],
                        idx[kk + 1, jj, ii], idx[kk + 1, jj, ii + 1], idx[kk + 1, jj + 1, ii + 1], idx[kk + 1, jj + 1, ii],
                    ]
                )
                if ii == 0:
                    faces["imin"].append([e, 5])
                if ii == nx - 1:
                    faces["imax"].append([e, 3])
                if jj == 0:
                    faces["jmin"].append([e, 2])
                if jj == ny - 1:
                    faces["jmax"].append([e, 4])
                if kk == 0:
                    faces["kmin"].append([e, 0])
                if kk == nz - 1:
                    faces["kmax"].append([e, 1])
    node_sets = {
        "imin": idx[:, :, 0].ravel(), "imax": idx[:, :, nx].ravel(),
        "jmin": idx[:, 0, :].ravel(), "jmax": idx[:, ny, :].ravel(),
        "kmin": idx[0, :, :].ravel(), "kmax": idx[nz, :, :].ravel(),
        "all": idx.ravel(),
    }
    return nodes, np.array(elems), node_sets, {k: np.array(v).reshape(-1, 2) for k, v in faces.items()}


def _renamed(sets, names):
    return {names.get(k, k): v for k, v in sets.items()}


def box_mesh(n=(1, 1, 1), size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Regular brick; sets named ``xmin, xmax, ymin, ymax, zmin, zmax, all``."""
    nx, ny, nz = n
    lx, ly, lz = size

    def coords(i, j, k):
        return np.stack([origin[0] + lx * i / nx, origin[1] + ly * j / ny, origin[2] + lz * k / nz], axis=-1)

    nodes, elems, ns, fs = _structured(coords, nx, ny, nz)
    names = {"imin": "xmin", "imax": "xmax", "jmin": "ymin", "jmax": "ymax", "kmin": "zmin", "kmax": "zmax"}
    return Mesh(nodes, elems, _renamed(ns, names), _renamed(fs, names))


def plate_with_hole(width=10.0, radius=2.0, thickness=1.0, n_around=24, n_radial=4, grading=1.3) -> Mesh:
    """Square plate with a central circular hole, one element through the
    thickness.  Rings of nodes are blended between the hole and the outer
    square along rays.  Node/face sets: ``top``, ``bottom``, ``left``,
    ``right``, ``hole``, ``all``.
    """
    if n_around % 8:
        raise MeshError("n_around must be a multiple of 8 so the corners are nodes")
    half = 0.5 * width
    theta = -0.75 * np.pi + 2.0 * np.pi * np.arange(n_around) / n_around
    inner = radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # outer points: equal spacing along each side of the square
    per_side = n_around // 4
    t = np.arange(per_side) / per_side
    corners = np.array([[-half, -half], [half, -half], [half, half], [-half, half], [-half, -half]])
    outer = np.concatenate([corners[s] + t[:, None] * (corners[s + 1] - corners[s]) for s in range(4)])
    w = grading ** np.arange(n_radial)
    rho = np.concatenate([[0.0], np.cumsum(w) / w.sum()])

    def coords(i, j, k):
        ii = np.mod(i, n_around)
        p = inner[ii] + rho[j][:, None] * (outer[ii] - inner[ii])
        return np.column_stack([p, thickness * k])

    # periodic in the circumferential direction: build with nx = n_around and merge the seam
    nodes, elems, ns, fs = _structured(coords, n_around, n_radial, 1)
    nx1 = n_around + 1
    lattice = np.arange(len(nodes))
    i_of = lattice % nx1
    seam = i_of == n_around
    remap = lattice.copy()
    remap[seam] = lattice[seam] - n_around
    keep = ~seam
    new_index = -np.ones(len(nodes), dtype=np.int64)
    new_index[keep] = np.arange(keep.sum())
    remap = new_index[remap]
    nodes = nodes[keep]
    elems = remap[elems]
    # orientation: radial as local xi_2, circumferential xi_1, thickness xi_3 gives positive volume
    # for a counter-clockwise sweep; flip top/bottom otherwise
    mesh_sets = {}
    outer_nodes = np.unique(remap[ns["jmax"]])
    P = nodes[outer_nodes]
    tol = 1e-9 * width
    mesh_sets["top"] = outer_nodes[np.abs(P[:, 1] - half) < tol]
    mesh_sets["bottom"] = outer_nodes[np.abs(P[:, 1] + half) < tol]
    mesh_sets["left"] = outer_nodes[np.abs(P[:, 0] + half) < tol]
    mesh_sets["right"] = outer_nodes[np.abs(P[:, 0] - half) < tol]
    mesh_sets["hole"] = np.unique(remap[ns["jmin"]])
    mesh_sets["all"] = np.arange(len(nodes))
    face_sets = {"hole": fs["jmin"], "zmin": fs["kmin"], "zmax": fs["kmax"]}
    outer_faces = fs["jmax"]
    for name in ("top", "bottom", "left", "right"):
        members = set(mesh_sets[name].tolist())
        sel = [f for f in outer_faces if set(elems[f[0], list(FACES[f[1]][2])].tolist()) <= members]
        face_sets[name] = np.array(sel).reshape(-1, 2)
    elems = _fix_orientation(nodes, elems, face_sets)
    return Mesh(nodes, elems, mesh_sets, face_sets)


def curved_beam(inner_radius=4.0, outer_radius=7.0, angle_deg=90.0, thickness=1.0, n_around=12, n_radial=3) -> Mesh:
    """Annular sector (curved beam), one element thick.  Sets: ``end0`` at
    angle 0, ``end1`` at the sweep angle, ``inner``, ``outer``, ``all``."""
    phi = np.deg2rad(angle_deg)

    def coords(i, j, k):
        a = phi * i / n_around
        r = inner_radius + (outer_radius - inner_radius) * j / n_radial
        return np.stack([r * np.cos(a), r * np.sin(a), thickness * k], axis=-1)

    nodes, elems, ns, fs = _structured(coords, n_around, n_radial, 1)
    names = {"imin": "end0", "imax": "end1", "jmin": "inner", "jmax": "outer", "kmin": "zmin", "kmax": "zmax"}
    ns, fs = _renamed(ns, names), _renamed(fs, names)
    elems = _fix_orientation(nodes, elems, fs)
    return Mesh(nodes, elems, ns, fs)


# swapping bottom and top node quadruples mirrors zeta; faces 0 and 1 swap
_FLIP = np.array([4, 5, 6, 7, 0, 1, 2, 3])
_FLIP_FACE = {0: 1, 1: 0, 2: 2, 3: 3, 4: 4, 5: 5}


def _fix_orientation(nodes, elems, face_sets):
    _, dN = shape_eval(np.zeros(3))
    X = nodes[elems]
    detJ = np.linalg.det(np.einsum("eai,aj->eij", X, dN))
    neg = detJ < 0
    if neg.any():
        elems = elems.copy()
        elems[neg] = elems[neg][:, _FLIP]
        for fs in face_sets.values():
            for row in fs:
                if neg[row[0]]:
                    row[1] = _FLIP_FACE[int(row[1])]
    return elems


def distorted_patch(seed=0, amplitude=0.15) -> Mesh:
    """2x2x2 unit-cube patch whose interior node and edge midpoints are moved;
    exterior node set ``boundary`` and interior set ``interior``."""
    mesh = box_mesh((2, 2, 2), (1.0, 1.0, 1.0))
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes.copy()
    on_boundary = np.any((nodes < 1e-12) | (nodes > 1 - 1e-12), axis=1)
    interior = np.flatnonzero(~on_boundary)
    nodes[interior] += amplitude * rng.uniform(-1, 1, (len(interior), 3))
    # also distort boundary nodes within their faces (keeps the patch boundary planar)
    for i in np.flatnonzero(on_boundary):
        free = (nodes[i] > 1e-12) & (nodes[i] < 1 - 1e-12)
        nodes[i, free] += 0.5 * amplitude * rng.uniform(-1, 1, free.sum())
    sets = dict(mesh.node_sets)
    sets["boundary"] = np.flatnonzero(on_boundary)
    sets["interior"] = interior
    return Mesh(nodes, mesh.elements, sets, mesh.face_sets)
