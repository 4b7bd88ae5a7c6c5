"""
Experiment runner.

Each experiment is split into independent cells (n, seed index, engine).
Cells fan out over a ThreadPoolExecutor; results are reassembled in cell
order by the calling thread, which alone writes the report files.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ppd.config import worker_count
from ppd.curvature import build_curvature
from ppd.data import Dataset
from ppd.errors import ConfigurationError, IngestionError, NumericError, PPDError
from ppd.metrics import (
    CalibrationReport,
    calibration_report,
    entropy_grid,
    kl_grid,
    sup_log_gap,
    total_variation,
)
from ppd.models import (
    LikelihoodModel,
    gaussian_constant,
    gaussian_linear,
    heteroscedastic_linear,
    heteroscedastic_mlp,
    poisson_constant,
)
from ppd.optimizer import FitResult, fit_map, refit_budget_config
from ppd.oracles import NormalNormalSpec, PoissonGammaSpec, analytic_grid
from ppd.predictive import (
    GridConfig,
    PredictiveGrid,
    assla_log_ppd,
    assla_values,
    build_y_grid,
    laplace_mc_ppd,
    normalize_grid,
    plugin_log_ppd,
    ssla_log_ppd,
    ssla_point,
)
from ppd.priors import Prior

from .generators import gen_hetero_toy, gen_linear_toy, gen_normal, gen_poisson
from .ingest import IngestConfig, Standardizer, load_csv_dataset
from .reports import ReportWriter
from .schemas import ExperimentConfig
from .seeding import derive_int, derive_rng

logger = logging.getLogger(__name__)

CURVATURE_LABELS = {'dense': 'DENSE', 'ggn': 'DENSE', 'diag': 'DIAG', 'blocked': 'KFAC'}
NORMAL_SPEC = NormalNormalSpec(mu0=4.0, tau0_sq=1.0, sigma_sq=2.0)
POISSON_SPEC = PoissonGammaSpec(alpha=6.0, beta=2.0)


@dataclass
class PrecisionStudyRow:
    """One row of the cancellation study, aggregated over seeds."""
    n: int
    kl_mean: float
    kl_sd: float
    max_abs_log_err_mean: float
    max_abs_log_err_sd: float
    frac_delta_zero: float
    frac_nonfinite: float
    stable_max_abs_log_err: float = 0.0
    n_seeds: int = 0

    def __post_init__(self):
        for name in ('frac_delta_zero', 'frac_nonfinite'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class Problem:
    """A model, its prior and training data, ready to fit."""
    model: LikelihoodModel
    prior: Prior
    data: Dataset
    x_test: np.ndarray
    grid: GridConfig
    oracle: Optional[object] = None


# ----------------------------------------------------------------------
# Cell fan-out
# ----------------------------------------------------------------------

def run_cells(cells: Sequence[dict], fn: Callable[[dict], object], threads: Optional[int] = None,
              label: str = "cells", propagate: bool = True) -> List[Tuple[dict, object]]:
    """
    Run ``fn`` on every cell; return (cell, result) pairs in cell order.

    A failed cell is logged with its traceback. With ``propagate`` the first
    failure (in cell order) is re-raised with the cell added to its context;
    otherwise the exception object stands in for the result.
    """
    results: Dict[int, object] = {}
    workers = min(worker_count(threads), max(1, len(cells)))

    def record_failure(index, e):
        cell = cells[index]
        logger.error(f"[{label} {_cell_tag(cell)}] cell failed: {e}", exc_info=True)
        if isinstance(e, PPDError):
            e.context.update(cell)
        results[index] = e

    if workers == 1:
        for index, cell in enumerate(cells):
            try:
                results[index] = fn(cell)
            except Exception as e:
                record_failure(index, e)
                if propagate:
                    raise
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(fn, cell): index for index, cell in enumerate(cells)}
            for future in as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                except Exception as e:
                    record_failure(index, e)
        if propagate:
            for index in range(len(cells)):
                if isinstance(results[index], Exception):
                    raise results[index]
    return [(cells[i], results[i]) for i in range(len(cells))]


def _cell_tag(cell: dict) -> str:
    return ' '.join(f"{k}={v}" for k, v in cell.items())


def _engine_threads(config: ExperimentConfig, n_cells: int) -> int:
    """Grid-point threads per engine call; cells already use the pool when there are several."""
    return 1 if n_cells > 1 and worker_count(config.threads) > 1 else worker_count(config.threads)


def resolve_curvature(kind: str, model: LikelihoodModel) -> str:
    """``dense`` means the exact Hessian for linear predictors and the GGN otherwise."""
    if kind == 'dense' and not model.predictor.LINEAR_IN_PARAMS:
        return 'ggn'
    return kind


# ----------------------------------------------------------------------
# Problems
# ----------------------------------------------------------------------

def build_problem(config: ExperimentConfig, n: Optional[int] = None, seed_index: int = 0) -> Problem:
    """Model, prior and training data for the configured experiment."""
    n = n if n is not None else config.n[0]
    rng = derive_rng(config.seed, config.experiment, n, seed_index)
    x_test = np.asarray(config.x_test, dtype=float) if config.x_test else None

    if config.experiment in ('conjugate-normal', 'cancellation'):
        model = gaussian_constant(NORMAL_SPEC.sigma_sq)
        prior = Prior.isotropic(NORMAL_SPEC.tau0_sq, 1, mean=NORMAL_SPEC.mu0)
        return Problem(model, prior, gen_normal(n, rng, NORMAL_SPEC.mu0, NORMAL_SPEC.sigma_sq),
                       x_test if x_test is not None else np.ones(1), config.grid_config(), NORMAL_SPEC)
    if config.experiment == 'conjugate-poisson':
        model = poisson_constant()
        prior = Prior.gamma(POISSON_SPEC.alpha, POISSON_SPEC.beta)
        return Problem(model, prior, gen_poisson(n, rng), x_test if x_test is not None else np.ones(1),
                       config.grid_config(discrete=True), POISSON_SPEC)
    if config.experiment == 'prior-modularity':
        model = gaussian_linear(config.modularity['sigma'] ** 2, 1)
        prior = Prior.isotropic(config.prior['tau_sq'], model.q)
        data = gen_linear_toy(n, rng, sigma=config.modularity['sigma'])
        x = x_test if x_test is not None else np.array([config.modularity['x_test']])
        return Problem(model, prior, data, x, config.grid_config())
    if config.experiment == 'hetero-toy':
        train = gen_hetero_toy(n, derive_int(config.seed, 'hetero-train', n, seed_index))
        model = _hetero_model(config, train.input_dim)
        prior = Prior.isotropic(config.prior['tau_sq'], model.q)
        return Problem(model, prior, train, x_test if x_test is not None else np.zeros(1), config.grid_config())
    raise ConfigurationError(f"No single-problem setup for experiment '{config.experiment}'")


def _hetero_model(config: ExperimentConfig, input_dim: int) -> LikelihoodModel:
    if config.model['arch'] == 'linear':
        model = heteroscedastic_linear(input_dim)
    else:
        model = heteroscedastic_mlp(input_dim, tuple(config.model['hidden']), config.model['activation'])
    return model.with_precision(config.precision)


def fit_problem(problem: Problem, config: ExperimentConfig, seed: int = 0, label: str = "fit") -> FitResult:
    fit = fit_map(problem.model, problem.prior, problem.data, config.fit_config(seed))
    if not (math.isfinite(fit.objective_value) and math.isfinite(fit.gradient_norm)):
        raise NumericError(f"[{label}] MAP fit diverged", operation="fit_map",
                           objective=fit.objective_value, gradient_norm=fit.gradient_norm,
                           iterations=fit.iterations)
    return fit


def engine_grid(engine: str, problem: Problem, fit: FitResult, config: ExperimentConfig, x_test,
                curvature_kind: str, curv=None, grid_cfg: Optional[GridConfig] = None, mc_seed: int = 0,
                threads: Optional[int] = None, require_converged: bool = True) -> PredictiveGrid:
    """One normalized predictive grid from the named engine."""
    model, prior, data = problem.model, problem.prior, problem.data
    grid_cfg = grid_cfg or problem.grid
    if curv is None and engine in ('assla', 'la-mc'):
        curv = build_curvature(curvature_kind, model, prior, data, fit.theta)
    if engine == 'ssla':
        grid = ssla_log_ppd(model, prior, data, fit, x_test, grid_cfg, curvature_kind=curvature_kind,
                            fit_config=config.fit_config(), threads=threads, require_converged=require_converged)
    elif engine == 'assla':
        grid = assla_log_ppd(model, prior, data, fit, curv, x_test, grid_cfg, require_converged=require_converged)
    elif engine == 'la-mc':
        grid = laplace_mc_ppd(model, prior, fit, curv, x_test, n_samples=config.mc_samples, seed=mc_seed,
                              grid_cfg=grid_cfg, require_converged=require_converged)
    elif engine == 'plugin':
        grid = plugin_log_ppd(model, fit, x_test, grid_cfg)
    else:
        raise ConfigurationError(f"Unknown engine '{engine}'")
    return normalize_grid(grid)


# ----------------------------------------------------------------------
# Conjugate validation
# ----------------------------------------------------------------------

def run_conjugate_validation(config: ExperimentConfig) -> Tuple[List[dict], Dict[Tuple, PredictiveGrid]]:
    """
    Compare every engine with the closed-form predictive for each n and seed.

    Returns the table rows and the grids keyed by (engine, n, seed index),
    the analytic grid included under engine ``analytic``.
    """
    if config.experiment not in ('conjugate-normal', 'conjugate-poisson'):
        raise ConfigurationError(f"run_conjugate_validation cannot run '{config.experiment}'")
    cells = [{'n': n, 'seed': s} for n in config.n for s in range(config.seeds)]
    threads = _engine_threads(config, len(cells))

    def run(cell):
        n, s = cell['n'], cell['seed']
        problem = build_problem(config, n, s)
        problem.model = problem.model.with_precision(config.precision)
        fit = fit_problem(problem, config, seed=derive_int(config.seed, 'fit', n, s),
                          label=f"{config.experiment} n={n} seed={s}")
        kind = resolve_curvature(config.curvature, problem.model)
        curv = build_curvature(kind, problem.model, problem.prior, problem.data, fit.theta)
        y_values = build_y_grid(problem.model, fit.theta, problem.x_test, problem.grid)
        truth = analytic_grid(problem.oracle, problem.data, y_values)

        rows, grids = [], {('analytic', n, s): truth}
        for engine in config.engines:
            try:
                grid = engine_grid(engine, problem, fit, config, problem.x_test, kind, curv,
                                   mc_seed=derive_int(config.seed, 'la-mc', n, s), threads=threads)
            except PPDError as e:
                e.context.update(engine=engine, n=n, seed=s)
                raise
            grids[(engine, n, s)] = grid
            rows.append({
                'experiment': config.experiment,
                'n': n,
                'seed': s,
                'engine': engine,
                'curvature': CURVATURE_LABELS[kind],
                'kl_analytic_engine': kl_grid(truth, grid),
                'total_variation': total_variation(truth, grid),
                'sup_log_gap': sup_log_gap(truth, grid),
                'entropy_engine': entropy_grid(grid),
                'entropy_analytic': entropy_grid(truth),
                'failed_points': len(grid.failed_points),
            })
        logger.info(f"[{config.experiment} n={n} seed={s}] "
                    + ', '.join(f"{r['engine']} KL={r['kl_analytic_engine']:.3e}" for r in rows))
        return rows, grids

    rows, grids = [], {}
    for _, (cell_rows, cell_grids) in run_cells(cells, run, config.threads, config.experiment):
        rows.extend(cell_rows)
        grids.update(cell_grids)
    return rows, grids


# ----------------------------------------------------------------------
# Cancellation (precision) study
# ----------------------------------------------------------------------

def cancellation_increments(model: LikelihoodModel, data: Dataset, theta_hat, x_test, y_values,
                            precision: str = 'single') -> Tuple[np.ndarray, np.ndarray]:
    """
    Log-likelihood increments at every grid target, computed two ways.

    stable: log p(y | theta_hat) - log p(y_hat | theta_hat), per term, float64.
    naive:  sum over D + {y} minus sum over D + {y_hat}, both aggregates
            accumulated in ``precision``.
    """
    y_values = np.asarray(y_values, dtype=float)
    x_test = np.atleast_1d(np.asarray(x_test, dtype=float))
    y_hat = model.predict(theta_hat, x_test).mean
    stable = model.log_density_grid(theta_hat, x_test, y_values) - model.log_density(theta_hat, x_test, y_hat)

    low = model.with_precision(precision)
    dt = low.dtype
    base = np.sum(low.log_terms(data, theta_hat), dtype=dt)
    X_new = np.repeat(x_test.reshape(1, -1), y_values.size, axis=0)
    new_terms = low.log_terms(Dataset(X_new, y_values), theta_hat)
    hat_term = low.log_terms(Dataset(x_test.reshape(1, -1), [y_hat]), theta_hat)[0]
    with np.errstate(invalid='ignore', over='ignore'):
        naive = (base + new_terms) - (base + hat_term)
    return np.asarray(stable, dtype=float), np.asarray(naive, dtype=np.float64)


def _normalized_or_none(y_values, log_density, discrete=False) -> Optional[PredictiveGrid]:
    try:
        return normalize_grid(PredictiveGrid(y_values, log_density, discrete=discrete))
    except (NumericError, ConfigurationError):
        return None


def cancellation_cell(n: int, seed: int, seed_index: int, grid_cfg: Optional[GridConfig] = None,
                      precision: str = 'single') -> dict:
    """One (n, seed) measurement of the naive path against the stable one."""
    model = gaussian_constant(NORMAL_SPEC.sigma_sq)
    prior = Prior.isotropic(NORMAL_SPEC.tau0_sq, 1, mean=NORMAL_SPEC.mu0)
    data = gen_normal(n, derive_rng(seed, 'cancellation', n, seed_index), NORMAL_SPEC.mu0, NORMAL_SPEC.sigma_sq)
    fit = fit_map(model, prior, data)
    theta_hat = fit.theta
    x_test = np.ones(1)
    grid_cfg = grid_cfg or GridConfig()
    y_values = build_y_grid(model, theta_hat, x_test, grid_cfg)
    # shift by a fraction of the spacing per seed
    spacing = float(y_values[1] - y_values[0])
    y_values = y_values + derive_rng(seed, 'cancellation-offset', n, seed_index).uniform(-0.5, 0.5) * spacing
    y_hat = model.predict(theta_hat, x_test).mean

    curv = build_curvature('dense', model, prior, data, theta_hat)
    stable_values = assla_values(model, theta_hat, curv, x_test, y_values, y_hat)
    stable_delta, naive_delta = cancellation_increments(model, data, theta_hat, x_test, y_values, precision)
    half_dj = stable_delta - stable_values
    naive_values = naive_delta - half_dj

    exact = -(y_values - y_hat) ** 2 / (2.0 * NORMAL_SPEC.sigma_sq) - half_dj
    stable_err = float(np.max(np.abs(stable_values - exact)))

    nonzero = stable_delta != 0.0
    frac_zero = float(np.mean(naive_delta[nonzero] == 0.0)) if nonzero.any() else 0.0
    frac_nonfinite = float(np.mean(~np.isfinite(naive_values)))

    p = _normalized_or_none(y_values, stable_values)
    q = _normalized_or_none(y_values, naive_values) if frac_nonfinite == 0.0 else None
    if p is None or q is None:
        kl, max_err = float('nan'), float('nan')
    else:
        kl = kl_grid(p, q)
        max_err = sup_log_gap(p, q)
    return {
        'n': n,
        'seed': seed_index,
        'kl': kl,
        'max_abs_log_err': max_err,
        'frac_delta_zero': frac_zero,
        'frac_nonfinite': frac_nonfinite,
        'stable_max_abs_log_err': stable_err,
    }


def run_cancellation_study(n_list: Sequence[int], seeds: int = 6, y_grid: Optional[GridConfig] = None,
                           seed: int = 0, precision: str = 'single',
                           threads: Optional[int] = None) -> Tuple[List[PrecisionStudyRow], List[dict]]:
    """
    Naive aggregate subtraction vs the stable per-term increment, per n.

    Returns the aggregated rows and the per-seed measurements. Non-finite
    naive values are part of the measurement, not an error.
    """
    if not n_list:
        raise ConfigurationError("run_cancellation_study needs a non-empty n_list")
    cells = [{'n': int(n), 'seed': s} for n in n_list for s in range(seeds)]
    measured = [result for _, result in run_cells(
        cells, lambda c: cancellation_cell(c['n'], seed, c['seed'], y_grid, precision), threads, "cancellation")]

    rows = []
    for n in n_list:
        group = [m for m in measured if m['n'] == int(n)]
        kl = np.array([m['kl'] for m in group])
        err = np.array([m['max_abs_log_err'] for m in group])
        rows.append(PrecisionStudyRow(
            n=int(n),
            kl_mean=float(np.nanmean(kl)) if np.isfinite(kl).any() else float('nan'),
            kl_sd=float(np.nanstd(kl)) if np.isfinite(kl).any() else float('nan'),
            max_abs_log_err_mean=float(np.nanmean(err)) if np.isfinite(err).any() else float('nan'),
            max_abs_log_err_sd=float(np.nanstd(err)) if np.isfinite(err).any() else float('nan'),
            frac_delta_zero=float(np.mean([m['frac_delta_zero'] for m in group])),
            frac_nonfinite=float(np.mean([m['frac_nonfinite'] for m in group])),
            stable_max_abs_log_err=float(np.max([m['stable_max_abs_log_err'] for m in group])),
            n_seeds=len(group),
        ))
        logger.info(f"[cancellation n={n}] KL={rows[-1].kl_mean:.3e} "
                    f"max|log err|={rows[-1].max_abs_log_err_mean:.3e} zero={rows[-1].frac_delta_zero:.3f}")
    return rows, measured


# ----------------------------------------------------------------------
# Prior modularity
# ----------------------------------------------------------------------

def modularity_values(problem: Problem, config: ExperimentConfig, tau_sq: float) -> dict:
    """SSLA and ASSLA at y_hat and y_hat + offset under a N(0, tau_sq) prior."""
    model, data, x = problem.model, problem.data, problem.x_test
    prior = Prior.isotropic(tau_sq, model.q)
    fit = fit_map(model, prior, data, config.fit_config())
    theta_hat = fit.theta
    y_hat = model.predict(theta_hat, x).mean
    points = np.array([y_hat, y_hat + config.modularity['offset']])

    kind = resolve_curvature(config.curvature, model)
    curv = build_curvature(kind, model, prior, data, theta_hat)
    ll_hat = model.log_likelihood(data, theta_hat)
    lp_hat = float(prior.log_density(theta_hat))
    refit_cfg = refit_budget_config(config.fit_config())
    ref = model.log_density(theta_hat, x, y_hat)

    ssla = [ssla_point(model, prior, data, theta_hat, x, float(y), kind, refit_cfg,
                       ll_hat, lp_hat, curv.log_det()) - ref for y in points]
    assla = assla_values(model, theta_hat, curv, x, points, y_hat)
    return {
        'tau_sq': tau_sq,
        'theta_hat': theta_hat.tolist(),
        'y': points.tolist(),
        'ssla': [float(v) for v in ssla],
        'assla': [float(v) for v in assla],
    }


def run_prior_modularity(config: ExperimentConfig) -> Tuple[List[dict], List[dict], dict]:
    """
    SSLA and ASSLA under priors of decreasing tightness on the 1D linear toy.

    Values are relative to log p(y_hat | x, theta_hat). Returns the table at
    y_hat, the table at y_hat + offset, and a summary with the spreads.
    """
    problem = build_problem(config, config.n[0], 0)
    taus = list(config.prior['taus'])
    cells = [{'tau_sq': t} for t in taus]
    values = [v for _, v in run_cells(cells, lambda c: modularity_values(problem, config, c['tau_sq']),
                                      config.threads, "prior-modularity")]
    reference = values[int(np.argmax(taus))]

    tables = []
    for point in (0, 1):
        rows = []
        for v in values:
            rows.append({
                'tau_sq': v['tau_sq'],
                'y': v['y'][point],
                'ssla': v['ssla'][point],
                'assla': v['assla'][point],
                'ssla_minus_assla': v['ssla'][point] - v['assla'][point],
                'ssla_minus_noninfo': v['ssla'][point] - reference['ssla'][point],
            })
        tables.append(rows)

    off = tables[1]
    summary = {
        'ssla_spread_off': float(np.ptp([r['ssla'] for r in off])),
        'assla_spread_off': float(np.ptp([r['assla'] for r in off])),
        'max_abs_ssla_minus_assla_at_yhat': float(np.max(np.abs([r['ssla_minus_assla'] for r in tables[0]]))),
    }
    logger.info(f"[prior-modularity] SSLA spread {summary['ssla_spread_off']:.4f}, "
                f"ASSLA spread {summary['assla_spread_off']:.2e} off the self-prediction")
    return tables[0], tables[1], summary


# ----------------------------------------------------------------------
# Calibration benchmarks (heteroscedastic toy, CSV regression)
# ----------------------------------------------------------------------

def _standardize(train: Dataset, test: Dataset) -> Tuple[Dataset, Dataset, Standardizer]:
    columns = [f"x{j}" for j in range(train.input_dim)] + ['y']
    frame = pd.DataFrame(np.column_stack([train.X, train.y]), columns=columns)
    scaler = Standardizer.fit(frame, columns)

    def apply(data):
        out = scaler.transform(pd.DataFrame(np.column_stack([data.X, data.y]), columns=columns))
        return Dataset(out[columns[:-1]].to_numpy(), out['y'].to_numpy())

    return apply(train), apply(test), scaler


def calibration_cells(problem: Problem, test: Dataset, config: ExperimentConfig, seed_index: int,
                      label: str) -> List[dict]:
    """Fit once, then score every engine over the test set."""
    fit = fit_problem(problem, config, seed=derive_int(config.seed, label, 'fit', seed_index),
                      label=f"{label} seed={seed_index}")
    if not fit.stationary:
        logger.warning(f"[{label} seed={seed_index}] MAP fit not converged after {fit.iterations} "
                       f"iterations (|grad|={fit.gradient_norm:.3e}); continuing")
    require = config.hetero['require_converged']
    kind = resolve_curvature(config.curvature, problem.model)
    curv = build_curvature(kind, problem.model, problem.prior, problem.data, fit.theta)

    rows = []
    for engine in config.engines:
        grids = []
        for i in range(test.n):
            grids.append(engine_grid(engine, problem, fit, config, test.X[i], kind, curv,
                                     mc_seed=derive_int(config.seed, label, 'la-mc', seed_index, i),
                                     threads=config.threads, require_converged=require))
        report = calibration_report(grids, test.y, config.levels)
        rows.append({'seed': seed_index, 'engine': engine, 'curvature': CURVATURE_LABELS[kind],
                     'report': report})
        logger.info(f"[{label} seed={seed_index} {engine}] coverage={report.coverage} "
                    f"nll={report.mean_nll:.4f} crps={report.mean_crps:.4f}")
    return rows


def _report_rows(results) -> List[dict]:
    rows = []
    for cell, result in results:
        if isinstance(result, Exception):
            rows.append({'seed': cell['seed'], 'engine': 'all', 'status': 'failed', 'error': str(result)})
            continue
        for r in result:
            row = {'seed': r['seed'], 'engine': r['engine'], 'curvature': r['curvature'], 'status': 'ok'}
            row.update(r['report'].to_dict())
            rows.append(row)
    return rows


def run_hetero_benchmark(config: ExperimentConfig) -> Tuple[Dict[str, List[CalibrationReport]], List[dict]]:
    """
    Coverage, NLL and CRPS of every engine on the heteroscedastic toy.

    Returns the reports per engine (one per successful seed, seed order)
    and the flat table rows, failed seeds included with ``status=failed``.
    """
    if config.experiment != 'hetero-toy':
        raise ConfigurationError(f"run_hetero_benchmark cannot run '{config.experiment}'")
    n_train, n_test = config.n[0], config.hetero['n_test']
    cells = [{'seed': s} for s in range(config.seeds)]

    def run(cell):
        s = cell['seed']
        train = gen_hetero_toy(n_train, derive_int(config.seed, 'hetero-train', n_train, s))
        test = gen_hetero_toy(n_test, derive_int(config.seed, 'hetero-test', n_test, s))
        train, test, _ = _standardize(train, test)
        model = _hetero_model(config, train.input_dim)
        problem = Problem(model, Prior.isotropic(config.prior['tau_sq'], model.q), train,
                          np.zeros(train.input_dim), config.grid_config())
        return calibration_cells(problem, test, config, s, 'hetero-toy')

    results = run_cells(cells, run, 1, 'hetero-toy', propagate=False)
    return _collect_reports(results, config)


def run_csv_regression(config: ExperimentConfig) -> Tuple[Dict[str, List[CalibrationReport]], List[dict], dict]:
    """
    The heteroscedastic benchmark on a local CSV, standardized, subsampled to n[0] training rows.

    Ingestion errors do not depend on the seed and are raised; other seed
    failures are recorded in the rows like the heteroscedastic benchmark.
    """
    if config.experiment != 'csv-regression':
        raise ConfigurationError(f"run_csv_regression cannot run '{config.experiment}'")
    csv_cfg = config.csv
    cells = [{'seed': s} for s in range(config.seeds)]
    provenance = {}

    def run(cell):
        s = cell['seed']
        ingested = load_csv_dataset(csv_cfg['path'], csv_cfg['target'], IngestConfig(
            seed=derive_int(config.seed, 'csv', s), test_fraction=csv_cfg['test_fraction'],
            n_train=config.n[0], n_test=csv_cfg['n_test']))
        provenance[s] = ingested.standardizer.to_dict()
        model = _hetero_model(config, ingested.train.input_dim)
        problem = Problem(model, Prior.isotropic(config.prior['tau_sq'], model.q), ingested.train,
                          np.zeros(ingested.train.input_dim), config.grid_config())
        return calibration_cells(problem, ingested.test, config, s, 'csv-regression')

    results = run_cells(cells, run, 1, 'csv-regression', propagate=False)
    for _, result in results:
        if isinstance(result, IngestionError):
            raise result
    reports, rows = _collect_reports(results, config)
    return reports, rows, provenance


def _collect_reports(results, config: ExperimentConfig):
    reports: Dict[str, List[CalibrationReport]] = {engine: [] for engine in config.engines}
    for _, result in results:
        if isinstance(result, Exception):
            continue
        for r in result:
            reports[r['engine']].append(r['report'])
    return reports, _report_rows(results)


def summarize_reports(reports: Dict[str, List[CalibrationReport]]) -> List[dict]:
    """Mean over seeds per engine, in the layout of the calibration table."""
    rows = []
    for engine, items in reports.items():
        if not items:
            continue
        frame = pd.DataFrame([r.to_dict() for r in items]).drop(columns=['scale'])
        row = {'engine': engine, 'seeds': len(items)}
        row.update({k: float(v) for k, v in frame.mean(numeric_only=True).items()})
        row['scale'] = items[0].scale
        rows.append(row)
    return rows


# ----------------------------------------------------------------------
# Runner
# ----------------------------------------------------------------------

class ExperimentRunner:
    """
    Runs one configured experiment and writes its tables through a ReportWriter.

    The resolved config is echoed before any computation.
    """

    def __init__(self, config: ExperimentConfig, writer: ReportWriter, resolved: Optional[dict] = None):
        self.config = config
        self.writer = writer
        self.logger = logging.getLogger(__name__)
        if resolved is not None:
            self.writer.write_resolved_config(resolved)

        self.handlers = {
            'conjugate-normal': self._conjugate,
            'conjugate-poisson': self._conjugate,
            'cancellation': self._cancellation,
            'prior-modularity': self._prior_modularity,
            'hetero-toy': self._hetero,
            'csv-regression': self._csv,
        }

    def run(self) -> dict:
        handler = self.handlers.get(self.config.experiment)
        if handler is None:
            raise ConfigurationError(f"Unknown experiment '{self.config.experiment}'")
        self.logger.info(f"Starting {self.config.experiment} (seed={self.config.seed}, n={self.config.n}, "
                         f"engines={self.config.engines})")
        summary = handler()
        self.writer.record(kind='summary', experiment=self.config.experiment, **summary)
        self.writer.close()
        self.logger.info(f"Finished {self.config.experiment}: {len(self.writer.written)} files")
        return summary

    # ------------------------------------------------------------------

    def _conjugate(self) -> dict:
        rows, grids = run_conjugate_validation(self.config)
        self.writer.write_table('kl', rows)
        for (engine, n, s), grid in grids.items():
            self.writer.write_grid(grid, engine, n, s)
        self.writer.extend({'kind': 'cell', **row} for row in rows)
        return {'rows': len(rows), 'grids': len(grids)}

    def _cancellation(self) -> dict:
        rows, measured = run_cancellation_study(self.config.n, self.config.seeds, self.config.grid_config(),
                                                self.config.seed, self.config.precision, self.config.threads)
        self.writer.write_table('precision', [asdict(r) for r in rows])
        self.writer.extend({'kind': 'cell', 'precision': self.config.precision, **m} for m in measured)
        return {'rows': len(rows), 'precision': self.config.precision}

    def _prior_modularity(self) -> dict:
        at_hat, off_hat, summary = run_prior_modularity(self.config)
        self.writer.write_table('modularity_at_yhat', at_hat)
        self.writer.write_table('modularity_off_yhat', off_hat)
        return summary

    def _hetero(self) -> dict:
        self.writer.standardization, self.writer.scale = 'population (ddof=0)', 'standardized'
        reports, rows = run_hetero_benchmark(self.config)
        return self._calibration_tables(reports, rows)

    def _csv(self) -> dict:
        self.writer.standardization, self.writer.scale = 'population (ddof=0)', 'standardized'
        reports, rows, provenance = run_csv_regression(self.config)
        self.writer.write_json('standardization.json', {str(k): v for k, v in sorted(provenance.items())})
        return self._calibration_tables(reports, rows)

    def _calibration_tables(self, reports, rows) -> dict:
        self.writer.write_table('calibration_by_seed', rows)
        self.writer.write_table('calibration', summarize_reports(reports))
        self.writer.extend({'kind': 'cell', **row} for row in rows)
        failed = sum(1 for r in rows if r.get('status') == 'failed')
        if failed:
            self.logger.warning(f"{failed} seed(s) failed; see calibration_by_seed.csv")
        return {'rows': len(rows), 'failed_seeds': failed}
