"""
Central numerical defaults for the predictive engines.
"""
import os


class EngineDefaults:
    """Defaults shared by fitting, curvature and predictive engines."""

    # Optimizer
    MAX_ITERATIONS = 1000
    GRADIENT_TOLERANCE = 1e-8
    REFIT_MAX_ITERATIONS = 200
    BACKTRACK_SHRINK = 0.5
    SUFFICIENT_INCREASE = 1e-4
    INITIAL_STEP = 1.0
    MIN_STEP = 1e-20
    MAX_BACKTRACKS = 60
    # scoring (Gauss-Newton / Fisher) directions up to this many parameters
    SCORING_MAX_DIM = 1000
    # objective changes within this many ulps of |f| are rounding
    OBJECTIVE_NOISE_ULPS = 64
    # gradients within this many ulps of the summed absolute terms are rounding
    GRADIENT_RESOLUTION_ULPS = 1000

    # Curvature: jitter is eps * trace/q, eps walks this ladder
    JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
    DENSE_MAX_DIM = 2000
    SYMMETRY_RTOL = 1e-10
    HESSIAN_FD_STEP = 1e-5

    # Predictive grids
    GRID_COUNT = 201
    GRID_SPAN = 6.0
    MAX_FAILED_FRACTION = 0.01
    MC_MIN_SAMPLES = 100

    # Quadrature oracle
    QUADRATURE_POINTS = 2001
    QUADRATURE_HALF_WIDTH = 10.0


def worker_count(override=None) -> int:
    """Resolve the worker cap: explicit override, then PPD_LAPLACE_THREADS, never below 1."""
    if override is not None:
        return max(1, int(override))
    return max(1, int(os.environ.get('PPD_LAPLACE_THREADS') or 1))
