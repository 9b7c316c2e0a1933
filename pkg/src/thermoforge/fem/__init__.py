"""Hexahedral finite elements for the coupled displacement-temperature
problem."""

from .assembly import ResidualVector, assemble, integrate, local_fields, point_kinematics
from .mesh import Mesh, MeshError, box_mesh, curved_beam, distorted_patch, plate_with_hole, shape_eval
from .problem import DirichletT, DirichletU, DofMap, Problem, ScheduleError, Step, SurfaceLoad
from .solver import (
    FieldHistory,
    NeuralMaterial,
    ReferenceMaterial,
    SolverError,
    as_material,
    element_residuals,
    forward_solve,
    reaction_vectors,
    reactions,
    residual_history,
)

__all__ = [
    "DirichletT", "DirichletU", "DofMap", "FieldHistory", "Mesh", "MeshError", "NeuralMaterial",
    "Problem", "ReferenceMaterial", "ResidualVector", "ScheduleError", "SolverError", "Step",
    "SurfaceLoad", "as_material", "assemble", "box_mesh", "curved_beam", "distorted_patch",
    "element_residuals", "forward_solve", "integrate", "local_fields", "plate_with_hole",
    "point_kinematics", "reaction_vectors", "reactions", "residual_history", "shape_eval",
]
