"""Empirical risk minimization over ellipsoids and weak l_q balls.

Closed-form widths and constants, projections, tail fixed points, the
weak-l_q quantizer, the weak-moment interpolation bound, and replica-based
rate studies.
"""

from .ellipsoid import (IDENTITY, EllipsoidProjection, EllipsoidSpec, EllipsoidWidths, LipschitzMap,
                        c_beta, default_truncation, ellipsoid_projection, ellipsoid_widths,
                        erm_mean_trial, project_ellipsoid, smooth_truth, sobolev_ellipsoid,
                        sobolev_width_limits, toy_interval_trial, truncation_tail, width_moment_G)
from .envelopes import envelope_tangency, f_func, f_integral_ratio, g_env, penalized_integral_ratio
from .experiments import (ellipsoid_study, quantizer_study, sparse_constant_check, sparse_study,
                          tail_study, toy_study)
from .interpolation import interpolation_check, interpolation_constant, interpolation_exponent
from .noise import NOISE_KINDS
from .sparse import (WeakLqSpec, erm_sparse_trial, project_weak_lq, quantize_weak_lq,
                     sparse_rd_bound, sparse_width_G, weak_lq_radius)
from .tail import PowerLawG, ellipsoid_G, psi_bound, sparse_G, tail_from_psi
from .trials import ErmReport, ErmTrial, GridRow, rate_fit

__all__ = [name for name in dir() if not name.startswith("_")]
