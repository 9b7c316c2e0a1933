"""Benchmark boundary value problems and synthetic data generation with the
analytic reference models."""

from __future__ import annotations

import numpy as np

from .fem.mesh import box_mesh, curved_beam, plate_with_hole
from .fem.problem import DirichletT, DirichletU, Problem, Step
from .fem.solver import forward_solve, reaction_vectors
from .refmodels import reference_model
from .training.data import Scenario

T_REF = 293.15


def heat_bar(n_elements=16, length=4.0, width=0.25, amplitude=20.0, period=8.0, n_steps=40, dt=0.2, T0=T_REF) -> Problem:
    """Rigid wall strip: interior face (``xmin``) held at ``T0``, exterior
    face (``xmax``) following ``T0 + amplitude*sin(2 pi t / period)``."""
    mesh = box_mesh((n_elements, 1, 1), (length, width, width))
    steps = []
    for n in range(1, n_steps + 1):
        t = n * dt
        steps.append(
            Step(
                dt,
                dirichlet_u=[DirichletU("all", (0, 1, 2), (0.0, 0.0, 0.0))],
                dirichlet_T=[
                    DirichletT("xmin", T0),
                    DirichletT("xmax", T0 + amplitude * np.sin(2.0 * np.pi * t / period)),
                ],
            )
        )
    return Problem(mesh, steps, T0)


def _ramp(n, n_steps, cycles=0.5):
    """Smooth loading history in ``[0, 1]`` (a half sine by default)."""
    return np.sin(np.pi * cycles * n / n_steps) ** 2 if cycles != 0.5 else np.sin(0.5 * np.pi * n / n_steps)


def _clamped_steps(n_steps, dt, top_disp, top_dT, T0, lower="bottom", upper="top", axis=1, phase=None):
    steps = []
    for n in range(1, n_steps + 1):
        w = np.sin(2.0 * np.pi * n / n_steps) if phase == "cycle" else _ramp(n, n_steps)
        disp = [0.0, 0.0, 0.0]
        disp[axis] = top_disp * w
        steps.append(
            Step(
                dt,
                dirichlet_u=[
                    DirichletU(lower, (0, 1, 2), (0.0, 0.0, 0.0)),
                    DirichletU(upper, (0, 1, 2), tuple(disp)),
                ],
                dirichlet_T=[DirichletT(lower, T0), DirichletT(upper, T0 + top_dT * w)],
            )
        )
    return steps


def plate_scenarios(n_steps=20, dt=0.5, stretch=0.02, dT=20.0, T0=T_REF, mesh_kwargs=None):
    """Three training problems on a perforated plate: deformation-driven
    (isothermal clamps), thermal (fixed clamps, heated top) and combined."""
    kw = {"n_around": 16, "n_radial": 3, "width": 10.0, "radius": 2.0, "thickness": 1.0}
    kw.update(mesh_kwargs or {})
    mesh = plate_with_hole(**kw)
    disp = stretch * kw["width"]
    return {
        "deformation": Problem(mesh, _clamped_steps(n_steps, dt, disp, 0.0, T0), T0),
        "thermal": Problem(mesh, _clamped_steps(n_steps, dt, 0.0, dT, T0), T0),
        "combined": Problem(mesh, _clamped_steps(n_steps, dt, disp, dT, T0, phase="cycle"), T0),
    }


def beam_test(n_steps=20, dt=0.5, displacement=0.15, dT=20.0, T0=T_REF, isothermal=False, mesh_kwargs=None) -> Problem:
    """Unseen test geometry: curved beam clamped at both ends, one end
    displaced and heated cyclically."""
    kw = {"n_around": 10, "n_radial": 2}
    kw.update(mesh_kwargs or {})
    mesh = curved_beam(**kw)
    steps = _clamped_steps(n_steps, dt, displacement, 0.0 if isothermal else dT, T0, "end0", "end1", axis=0, phase="cycle")
    return Problem(mesh, steps, T0)


def generate(problem: Problem, model, name="scenario") -> Scenario:
    """Solve ``problem`` with a reference (or learned) model and record the
    nodal fields and reactions."""
    hist = forward_solve(problem, model)
    R = reaction_vectors(problem, hist, model)
    return Scenario(problem, hist.x, R, name)


def heat_bar_reference(**overrides):
    return reference_model("thermal", **overrides)


def structural_reference(**overrides):
    return reference_model("coupled", **overrides)
