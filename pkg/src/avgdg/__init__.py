"""Interior penalty dG for the Poisson problem with local averaging."""

__version__ = "0.1.0"

from .dg_space import BrokenSpace, DgFunction, project, random_function
from .forms import PenaltySpec, SymSparseMatrix, assemble_oipg, assemble_rhs, assemble_sipg
from .mesh import Mesh, build_structured_unit_square, load_mesh
from .mollifier import Mollifier
from .solver import cg_solve

__all__ = [
    "BrokenSpace",
    "DgFunction",
    "Mesh",
    "Mollifier",
    "PenaltySpec",
    "SymSparseMatrix",
    "assemble_oipg",
    "assemble_rhs",
    "assemble_sipg",
    "build_structured_unit_square",
    "cg_solve",
    "load_mesh",
    "project",
    "random_function",
]
