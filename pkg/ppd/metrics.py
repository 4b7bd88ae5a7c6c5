"""
Calibration and divergence metrics for predictive grids.

Coverage uses closed intervals. NLL and CRPS are reported on whatever
scale the grids live on; the benchmarks always pass standardized targets.

References
----------
Gneiting, T., & Raftery, A. E. (2007). Strictly proper scoring rules,
prediction, and estimation. Journal of the American Statistical Association.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import ConfigurationError
from .predictive import CredibleInterval, PredictiveGrid, credible_interval

logger = logging.getLogger(__name__)


@dataclass
class CalibrationReport:
    """Coverage per nominal level plus mean NLL/CRPS over a test set.

    Attributes
    ----------
    coverage : dict
        Nominal level -> empirical coverage in percent
    mean_nll : float
        Mean negative log predictive density
    mean_crps : float
        Mean continuous ranked probability score
    n_test : int
        Number of test targets
    nll_clamped : int
        Targets outside their grid, scored at the nearest edge
    """
    coverage: Dict[float, float]
    mean_nll: float
    mean_crps: float
    n_test: int
    nll_clamped: int = 0
    scale: str = "standardized"

    def __post_init__(self):
        if self.n_test < 1:
            raise ConfigurationError("CalibrationReport needs n_test >= 1")
        for level, percent in self.coverage.items():
            if not 0.0 <= percent <= 100.0:
                raise ConfigurationError(f"Coverage {percent} at level {level} outside [0, 100]")

    def to_dict(self) -> Dict[str, float]:
        out = {f"coverage_{int(round(level * 100))}": pct for level, pct in sorted(self.coverage.items(), reverse=True)}
        out.update({
            'nll': self.mean_nll,
            'crps': self.mean_crps,
            'n_test': self.n_test,
            'nll_clamped': self.nll_clamped,
            'scale': self.scale,
        })
        return out


def _require_normalized(grid: PredictiveGrid, operation: str):
    if not grid.normalized:
        raise ConfigurationError(f"{operation} needs a normalized grid", operation=operation)


# ----------------------------------------------------------------------
# Coverage
# ----------------------------------------------------------------------

def empirical_coverage(intervals: Sequence[CredibleInterval], truths: Sequence[float]) -> float:
    """Percent of truths inside their closed interval [lower, upper]."""
    if len(intervals) != len(truths):
        raise ConfigurationError(f"{len(intervals)} intervals but {len(truths)} truths",
                                 operation="empirical_coverage")
    if not intervals:
        raise ConfigurationError("empirical_coverage needs at least one interval", operation="empirical_coverage")
    hits = sum(1 for interval, y in zip(intervals, truths) if interval.lower <= y <= interval.upper)
    return 100.0 * hits / len(intervals)


# ----------------------------------------------------------------------
# Proper scores
# ----------------------------------------------------------------------

def nll_with_flag(grid: PredictiveGrid, y_true: float) -> Tuple[float, bool]:
    """(-log density at y_true, whether y_true had to be clamped to the grid)."""
    _require_normalized(grid, "nll")
    y = grid.y_values
    clamped = not (y[0] <= y_true <= y[-1])
    target = min(max(float(y_true), y[0]), y[-1])
    if grid.discrete:
        index = int(np.argmin(np.abs(y - round(target))))
        return float(-grid.log_density[index]), clamped
    density = float(np.interp(target, y, grid.density))
    if density <= 0:
        return math.inf, clamped
    return -math.log(density), clamped


def nll(grid: PredictiveGrid, y_true: float) -> float:
    value, clamped = nll_with_flag(grid, y_true)
    if clamped:
        logger.warning(f"[nll] y_true={y_true:.6g} outside grid [{grid.y_values[0]:.6g}, "
                       f"{grid.y_values[-1]:.6g}]; scored at the nearest edge")
    return value


def crps(grid: PredictiveGrid, y_true: float) -> float:
    """
    Integral of (F(y) - 1{y >= y_true})^2 over the grid.

    y_true is inserted as a grid node so the step is integrated exactly;
    targets beyond the grid add the uncovered tail length. Integer grids
    use the ranked probability score.
    """
    _require_normalized(grid, "crps")
    y = grid.y_values
    if grid.discrete:
        F = grid.cdf()
        step = (y >= y_true).astype(float)
        return float(np.sum((F - step) ** 2))

    p = grid.density
    y_true = float(y_true)
    F = cumulative_trapezoid(p, y, initial=0.0)
    F = F / F[-1]

    if y_true <= y[0]:
        return float(trapezoid((F - 1.0) ** 2, y)) + (y[0] - y_true)
    if y_true >= y[-1]:
        return float(trapezoid(F ** 2, y)) + (y_true - y[-1])

    k = int(np.searchsorted(y, y_true))
    F_true = float(np.interp(y_true, y, F))
    left_y = np.append(y[:k], y_true)
    left_F = np.append(F[:k], F_true)
    right_y = np.insert(y[k:], 0, y_true)
    right_F = np.insert(F[k:], 0, F_true)
    return float(trapezoid(left_F ** 2, left_y) + trapezoid((right_F - 1.0) ** 2, right_y))


def gaussian_crps(mu: float, sigma: float, y: float) -> float:
    """Closed-form CRPS of N(mu, sigma^2) at y."""
    z = (y - mu) / sigma
    return float(sigma * (z * (2.0 * stats.norm.cdf(z) - 1.0) + 2.0 * stats.norm.pdf(z) - 1.0 / math.sqrt(math.pi)))


# ----------------------------------------------------------------------
# Divergences
# ----------------------------------------------------------------------

def _check_pair(p: PredictiveGrid, q: PredictiveGrid, operation: str):
    _require_normalized(p, operation)
    _require_normalized(q, operation)
    if p.y_values.shape != q.y_values.shape or not np.array_equal(p.y_values, q.y_values):
        raise ConfigurationError("Grids must share identical y_values", operation=operation)


def kl_grid(p: PredictiveGrid, q: PredictiveGrid) -> float:
    """KL(p || q) on a shared grid, clipped at 0."""
    _check_pair(p, q, "kl_grid")
    dens = p.density
    with np.errstate(invalid='ignore'):
        integrand = np.where(dens > 0, dens * (p.log_density - q.log_density), 0.0)
    return max(p.integrate(integrand), 0.0)


def entropy_grid(p: PredictiveGrid) -> float:
    """Differential entropy -integral p log p (Shannon entropy on integer grids)."""
    _require_normalized(p, "entropy_grid")
    dens = p.density
    integrand = np.where(dens > 0, -dens * p.log_density, 0.0)
    return p.integrate(integrand)


def total_variation(p: PredictiveGrid, q: PredictiveGrid) -> float:
    _check_pair(p, q, "total_variation")
    return 0.5 * p.integrate(np.abs(p.density - q.density))


def sup_log_gap(p: PredictiveGrid, q: PredictiveGrid) -> float:
    """max |log p - log q| over a shared grid."""
    _check_pair(p, q, "sup_log_gap")
    return float(np.max(np.abs(p.log_density - q.log_density)))


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

def calibration_report(grids: Sequence[PredictiveGrid], truths: Sequence[float],
                       levels: Sequence[float] = (0.95, 0.90, 0.75, 0.50)) -> CalibrationReport:
    """Coverage at every level plus mean NLL and CRPS over paired grids and truths."""
    if len(grids) != len(truths):
        raise ConfigurationError(f"{len(grids)} grids but {len(truths)} truths", operation="calibration_report")
    coverage = {}
    for level in levels:
        intervals: List[CredibleInterval] = [credible_interval(g, level) for g in grids]
        coverage[float(level)] = empirical_coverage(intervals, truths)

    nlls, clamped = [], 0
    for g, y in zip(grids, truths):
        value, was_clamped = nll_with_flag(g, y)
        nlls.append(value)
        clamped += int(was_clamped)
    if clamped:
        logger.warning(f"[calibration] {clamped} of {len(truths)} targets scored at a grid edge")

    return CalibrationReport(
        coverage=coverage,
        mean_nll=float(np.mean(nlls)),
        mean_crps=float(np.mean([crps(g, y) for g, y in zip(grids, truths)])),
        n_test=len(truths),
        nll_clamped=clamped,
    )
