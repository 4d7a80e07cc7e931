"""Numerical laboratory for incompressible elastic strings.

Reduced energy densities and their convex envelopes, Bezier mollification of
midlines, tailored frames, recovery deformations made exactly incompressible
by an inner perturbation, and energy-convergence experiments.
"""

from .curve import (PiecewiseAffineCurve, SmoothCurve, bernstein, caratheodory_split,
                    insert_loops, laminate_relax, mollify)
from .density import (INFINITE, StoredDensity, convex_envelope, eval_w, eval_w0,
                      eval_wbar_c, frobenius, double_well_radial, radial_profile,
                      reduce_density, single_well_so3, zero_level_radius)
from .experiments import (ConvergenceRecord, ExperimentConfig, energy, limit_energy,
                          load_config, parse_config, rate_fit, run_alpha, run_alpha0)
from .frame import (manifold_path, normal_field, optimal_cross_sections, tailored_frame,
                    transition)
from .quadrature import Quadrature
from .recovery import (build_path_deformation, build_tube, compose, det_check,
                       inner_perturbation)
from .tensor import BoxGrid, h1_distance, rescaled_gradient, sup_norm

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
