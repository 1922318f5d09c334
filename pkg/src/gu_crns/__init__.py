"""Gauge-Uzawa finite element solver for the chemo-repulsion Navier-Stokes system."""

from .mesh import TriMesh, build_rect_mesh, boundary_vertex_info
from .quadrature import QuadratureRule, rule_for_degree, integrate
from .spaces import (
    SpaceKind,
    FESpace,
    Field,
    CompositeVelocity,
    build_space,
    eval_basis,
    l2_project,
)
from .sparse import SolverFailure, from_triplets, lu_solve, cg_solve, gmres_solve
from .scheme import SchemeConfig, SchemeState, GaugeUzawaSolver

__all__ = [
    "TriMesh",
    "build_rect_mesh",
    "boundary_vertex_info",
    "QuadratureRule",
    "rule_for_degree",
    "integrate",
    "SpaceKind",
    "FESpace",
    "Field",
    "CompositeVelocity",
    "build_space",
    "eval_basis",
    "l2_project",
    "SolverFailure",
    "from_triplets",
    "lu_solve",
    "cg_solve",
    "gmres_solve",
    "SchemeConfig",
    "SchemeState",
    "GaugeUzawaSolver",
]

__version__ = "0.1.0"
