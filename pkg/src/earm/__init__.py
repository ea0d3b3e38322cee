"""Equilibrated flux recovery and a posteriori error estimation for diffusion problems."""
import os as _os

# EARM_THREADS caps BLAS/OpenMP pools; it only takes effect before numpy loads them
if _os.environ.get("EARM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["EARM_THREADS"])
from ._kernels import backend
from .amr import AmrConfig, adapt_loop, dorfler_mark
from .flux import recover
from .mesh import Mesh2D, build_mesh, refine
from .problems import get_problem, kellogg_problem, lshape_problem, manufactured_problem
from .solvers import DgParameters, solve_problem

__all__ = ["AmrConfig", "DgParameters", "Mesh2D", "adapt_loop", "backend", "build_mesh",
           "dorfler_mark", "get_problem", "kellogg_problem", "lshape_problem",
           "manufactured_problem", "recover", "refine", "solve_problem"]
__version__ = "0.1.0"
