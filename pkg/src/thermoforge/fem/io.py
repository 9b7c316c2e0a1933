"""CSV export of nodal field histories and boundary reactions."""

from __future__ import annotations

import csv
import os

import numpy as np

from .problem import Problem

FIELD_COLUMNS = ["node", "x", "y", "z", "ux", "uy", "uz", "T"]


def _fmt(v):
    return repr(float(v))


def write_fields(directory, problem: Problem, x, prefix="step"):
    """One CSV per state (``step_000.csv`` is the initial state)."""
    os.makedirs(directory, exist_ok=True)
    u, T = problem.dofs.split(np.asarray(x))
    X = problem.mesh.nodes
    paths = []
    for n in range(len(x)):
        path = os.path.join(directory, f"{prefix}_{n:03d}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIELD_COLUMNS)
            for a in range(problem.mesh.n_nodes):
                w.writerow([a] + [_fmt(v) for v in (*X[a], *u[n, a], T[n, a])])
        paths.append(path)
    return paths


def reaction_series(problem: Problem, R, node_set):
    """Summed forces ``(S, 3)`` and heat flow ``(S,)`` over a node set."""
    nodes = problem.mesh.node_sets[node_set]
    Ru, RT = problem.dofs.split(np.asarray(R))
    return Ru[:, nodes].sum(axis=1), RT[:, nodes].sum(axis=1)


def write_reactions(path, problem: Problem, R, node_set):
    times = np.cumsum([s.dt for s in problem.steps])
    F, Q = reaction_series(problem, R, node_set)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "Fx", "Fy", "Fz", "Q"])
        for n in range(len(times)):
            w.writerow([n + 1, _fmt(times[n]), *(_fmt(v) for v in F[n]), _fmt(Q[n])])
    return path


def read_table(path):
    """Read a numeric CSV into a dict of column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return {h: data[:, i] for i, h in enumerate(header)}
