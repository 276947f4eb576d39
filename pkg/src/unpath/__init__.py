"""Discrete approximations to measures on unparametrized paths.

Lattice walks and piecewise-linear Gaussian paths, their propagators and
characteristic functions, cylinder-set geometry and Dirichlet Green
functions on boxes.
"""

__version__ = "0.1.0"

from .core import (Ball, Box, ConvergenceError, EmptyEnsembleError, LatticePath, ModelParams,
                   ParameterError, PLPath, RandomStream, Region, pl_eval, pl_eval_many)
from .propagators import (continuum_G, heat_kernel, lattice_G_hat, lattice_G_position,
                          lattice_G_walksum, lattice_mass, pl_H)
from .sampler import (EnsembleKind, EnsembleSpec, WeightedSample, draw_ensemble, mc_volume,
                      read_path, write_path)
from .charfn import CFSpec, CFValue, cf_empirical, limit_cf, weak_convergence_report
from .geometry import (CylinderSet, Verdict, build_cover, check_star_condition, escape_times,
                       is_member, load_cylinder, mc_cylinder_measure, tangency_scan)
from .dirichlet import (DirichletBox, first_exit_density, green_box, hit_boundary_measure,
                        nested_measure, normal_derivative)

__all__ = [name for name in dir() if not name.startswith("_")]
