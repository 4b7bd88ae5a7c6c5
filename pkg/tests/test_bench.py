import json
import logging
import math

import numpy as np
import pytest
from marshmallow import ValidationError

from bench.experiments import (
    ExperimentRunner,
    build_problem,
    cancellation_increments,
    resolve_curvature,
    run_cancellation_study,
    run_cells,
    run_conjugate_validation,
    run_hetero_benchmark,
    run_prior_modularity,
)
from bench.generators import gen_hetero_toy, gen_normal, hetero_mean, hetero_noise_sd
from bench.ingest import IngestConfig, load_csv_dataset
from bench.reports import ReportWriter
from bench.seeding import derive_int, derive_rng
from bench.settings import config_hash, load_experiment_config, nest, parse_settings_text
from ppd.data import PseudoObservation
from ppd.errors import ConfigurationError, IngestionError
from ppd.models import gaussian_constant, heteroscedastic_mlp
from ppd.optimizer import fit_map, refit_augmented, refit_budget_config
from ppd.predictive import GridConfig, PredictiveGrid, normalize_grid
from ppd.priors import Prior


def _config(experiment, *overrides):
    return load_experiment_config(overrides=list(overrides), base={'experiment': experiment})


@pytest.fixture
def regression_csv(tmp_path):
    rng = np.random.default_rng(3)
    lines = ["x1,color,flag,const,y"]
    colors = ["red", "green", "blue"]
    for i in range(30):
        x1 = rng.normal(10.0, 2.0)
        lines.append(f"{x1:.6f},{colors[i % 3]},{'yes' if i % 2 else 'no'},5,{2.0 * x1 + rng.normal():.6f}")
    path = tmp_path / "data.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ----------------------------------------------------------------------
# Seeding and generators
# ----------------------------------------------------------------------

def test_derived_streams_are_reproducible():
    a = derive_rng(7, "hetero-toy", 200, 0).normal(size=5)
    b = derive_rng(7, "hetero-toy", 200, 0).normal(size=5)
    c = derive_rng(7, "hetero-toy", 200, 1).normal(size=5)
    assert a.tolist() == b.tolist()
    assert a.tolist() != c.tolist()


def test_derived_int_seed():
    value = derive_int(0, "la-mc", 20, 0)
    assert value == derive_int(0, "la-mc", 20, 0)
    assert 0 <= value < 2 ** 32
    with pytest.raises(ValueError):
        derive_int(0, -1)


def test_hetero_mean_and_noise():
    assert hetero_mean(0.0) == 0.0
    assert hetero_mean(math.pi / 2) == pytest.approx(7.0)
    assert hetero_noise_sd(0.0) == pytest.approx(3.0)
    assert hetero_noise_sd(math.pi) == pytest.approx(0.0, abs=1e-12)


def test_hetero_toy_is_deterministic():
    first, second = gen_hetero_toy(50, 3), gen_hetero_toy(50, 3)
    assert first.X.tolist() == second.X.tolist()
    assert first.y.tolist() == second.y.tolist()
    assert first.input_dim == 1


def test_hetero_toy_inputs_follow_the_mixture():
    data = gen_hetero_toy(100000, 11)
    assert float(np.mean(data.X)) == pytest.approx(0.0, abs=0.05)
    near_zero = np.abs(data.X[:, 0]) < 2.5
    assert float(np.mean(near_zero)) == pytest.approx(1.0 / 3.0, abs=0.01)


def test_hetero_toy_residuals_are_half_normal():
    data = gen_hetero_toy(100000, 5)
    x = data.X[:, 0]
    scaled = np.abs(data.y - hetero_mean(x)) / hetero_noise_sd(x)
    assert float(np.mean(scaled)) == pytest.approx(math.sqrt(2.0 / math.pi), abs=0.01)


def test_generators_reject_empty_samples():
    with pytest.raises(ConfigurationError):
        gen_normal(0, 1)


# ----------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------

def test_csv_is_encoded_and_standardized(regression_csv):
    ingested = load_csv_dataset(str(regression_csv), "y", IngestConfig(seed=0, n_test=5))
    assert ingested.feature_names == ["x1", "color=blue", "color=green", "color=red", "flag"]
    assert ingested.dropped_columns == ["const"]
    assert ingested.train.n == 25
    assert ingested.test.n == 5

    y = np.concatenate([ingested.train.y, ingested.test.y])
    assert float(np.mean(y)) == pytest.approx(0.0, abs=1e-12)
    assert float(np.std(y)) == pytest.approx(1.0, abs=1e-12)
    one_hot = np.concatenate([ingested.train.X, ingested.test.X])[:, 1:4]
    assert np.all(one_hot.sum(axis=1) == 1.0)


def test_standardization_round_trip(regression_csv):
    ingested = load_csv_dataset(str(regression_csv), "y", IngestConfig(seed=0, n_test=5))
    y = np.concatenate([ingested.train.y, ingested.test.y])
    restored = np.sort(ingested.standardizer.inverse_column("y", y))
    original = np.sort(np.loadtxt(regression_csv, delimiter=",", skiprows=1, usecols=4))
    assert np.max(np.abs(restored - original)) < 1e-12


def test_split_depends_only_on_the_seed(regression_csv):
    a = load_csv_dataset(str(regression_csv), "y", IngestConfig(seed=4, n_test=5))
    b = load_csv_dataset(str(regression_csv), "y", IngestConfig(seed=4, n_test=5))
    assert a.test.y.tolist() == b.test.y.tolist()


def test_rows_with_missing_markers_are_dropped(tmp_path):
    path = tmp_path / "missing.csv"
    path.write_text("a,y\n1,2\n?,3\n2,NA\n3,5\n4,4\n", encoding="utf-8")
    ingested = load_csv_dataset(str(path), "y", IngestConfig(n_test=1))
    assert ingested.dropped_rows == 2
    assert ingested.train.n + ingested.test.n == 3


def test_unparseable_cell_names_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,2\n2,3\n3,4\nabc,5\n5,6\n", encoding="utf-8")
    with pytest.raises(IngestionError) as info:
        load_csv_dataset(str(path), "y")
    assert info.value.context['row'] == 4
    assert info.value.context['column'] == 'a'


def test_unparseable_cell_row_counts_dropped_rows(tmp_path):
    path = tmp_path / "gappy.csv"
    path.write_text("a,y\n1,2\n?,3\n2,4\nabc,5\n5,6\n", encoding="utf-8")
    with pytest.raises(IngestionError) as info:
        load_csv_dataset(str(path), "y")
    assert info.value.context['row'] == 4
    assert 'data row 4' in str(info.value)


def test_missing_target_column(regression_csv):
    with pytest.raises(IngestionError) as info:
        load_csv_dataset(str(regression_csv), "price")
    assert info.value.context['column'] == 'price'


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_csv_dataset(str(tmp_path / "nope.csv"), "y")


# ----------------------------------------------------------------------
# Settings
# ----------------------------------------------------------------------

def test_settings_text_parsing():
    flat = parse_settings_text("grid.count = 51  # coarse\n\n# comment only\nn = 20, 100\n")
    assert flat == {'grid.count': '51', 'n': '20, 100'}
    assert nest(flat) == {'grid': {'count': '51'}, 'n': '20, 100'}


def test_settings_line_without_assignment():
    with pytest.raises(ValidationError):
        parse_settings_text("grid.count 51")


def test_section_and_value_conflict():
    with pytest.raises(ValidationError):
        nest({'grid': '1', 'grid.count': '51'})


def test_settings_file_then_overrides(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("experiment = conjugate-normal\nn = 20\nseed = 3\n", encoding="utf-8")
    config = load_experiment_config(str(path), ["seed=5", "seed=9"])
    assert config.n == [20]
    assert config.seed == 9


def test_unknown_fit_direction_is_rejected():
    with pytest.raises(ValidationError):
        _config('conjugate-normal', 'fit.direction=newton')


def test_unknown_key_is_rejected():
    with pytest.raises(ValidationError) as info:
        _config('conjugate-normal', 'grid.cuont=5')
    assert 'grid' in info.value.messages


def test_experiment_defaults_apply_and_yield_to_overrides():
    config = _config('hetero-toy', 'seeds=2')
    assert config.seeds == 2
    assert config.fit['gradient_tolerance'] == 1e-3
    assert config.fit['refit_max_iterations'] == 500
    assert config.grid['max_failed_fraction'] == 0.05
    assert config.grid['count'] == 51
    assert config.fit['direction'] == 'auto'
    assert config.fit_config().direction == 'auto'
    assert not config.hetero['require_converged']


def test_discrete_grid_config_for_counts():
    grid = _config('conjugate-poisson').grid_config(discrete=True)
    assert grid.discrete
    assert grid.values[0] == 0 and grid.values[-1] == 50


def test_csv_experiment_needs_a_path():
    with pytest.raises(ValidationError):
        _config('csv-regression')


def test_config_hash_tracks_content():
    assert config_hash(_config('conjugate-normal')) == config_hash(_config('conjugate-normal'))
    assert config_hash(_config('conjugate-normal')) != config_hash(_config('conjugate-normal', 'seed=1'))


def test_dense_curvature_resolves_to_ggn_for_networks():
    assert resolve_curvature('dense', heteroscedastic_mlp(1, hidden=(2,))) == 'ggn'
    assert resolve_curvature('dense', gaussian_constant(1.0)) == 'dense'
    assert resolve_curvature('diag', heteroscedastic_mlp(1, hidden=(2,))) == 'diag'


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

def test_tables_carry_provenance(tmp_path):
    writer = ReportWriter(str(tmp_path), 'conjugate-normal', 'abc123')
    path = writer.write_table('kl', [{'n': 20, 'kl': 1e-4}])
    lines = open(path, encoding='utf-8').read().splitlines()
    assert lines[0] == ("# provenance: experiment=conjugate-normal; config_hash=abc123; "
                        "scale=original; standardization=none")
    assert lines[1] == "n,kl"


def test_grid_files_and_run_log(tmp_path):
    writer = ReportWriter(str(tmp_path), 'conjugate-normal', 'abc123')
    y = np.linspace(-3.0, 3.0, 11)
    writer.write_grid(normalize_grid(PredictiveGrid(y, -0.5 * y ** 2)), 'ssla', 20, 0)
    writer.record(kind='cell', n=20, kl=np.float64(0.5))
    writer.close()
    assert (tmp_path / 'grids' / 'ssla_n20_seed0.csv').exists()
    records = [json.loads(line) for line in (tmp_path / 'run.jsonl').read_text().splitlines()]
    assert records == [{'kind': 'cell', 'n': 20, 'kl': 0.5}]


# ----------------------------------------------------------------------
# Cell fan-out
# ----------------------------------------------------------------------

def test_run_cells_keeps_cell_order():
    cells = [{'i': i} for i in range(12)]
    results = run_cells(cells, lambda c: c['i'] * 2, threads=4)
    assert [r for _, r in results] == [2 * i for i in range(12)]


def test_run_cells_adds_the_cell_to_the_error():
    def fn(cell):
        if cell['i'] == 2:
            raise ConfigurationError("bad cell")
        return cell['i']

    with pytest.raises(ConfigurationError) as info:
        run_cells([{'i': i} for i in range(4)], fn, threads=2)
    assert info.value.context['i'] == 2

    results = run_cells([{'i': i} for i in range(4)], fn, threads=1, propagate=False)
    assert isinstance(results[2][1], ConfigurationError)
    assert results[3][1] == 3


# ----------------------------------------------------------------------
# Experiments
# ----------------------------------------------------------------------

def test_conjugate_normal_validation():
    rows, grids = run_conjugate_validation(_config('conjugate-normal', 'n=20', 'engines=ssla,assla'))
    by_engine = {r['engine']: r for r in rows}
    assert by_engine['ssla']['kl_analytic_engine'] < 1e-3
    assert by_engine['ssla']['curvature'] == 'DENSE'
    assert ('analytic', 20, 0) in grids


def test_conjugate_validation_with_a_single_observation():
    rows, _ = run_conjugate_validation(_config('conjugate-normal', 'n=1', 'engines=ssla'))
    assert math.isfinite(rows[0]['kl_analytic_engine'])


def test_conjugate_poisson_uses_integer_support():
    rows, grids = run_conjugate_validation(_config('conjugate-poisson', 'n=20', 'engines=ssla'))
    assert grids[('ssla', 20, 0)].discrete
    assert rows[0]['kl_analytic_engine'] < 1e-2


@pytest.mark.slow
def test_conjugate_poisson_total_variation_is_small():
    rows, _ = run_conjugate_validation(_config('conjugate-poisson', 'n=100', 'seeds=3', 'engines=ssla,assla'))
    assert all(r['total_variation'] < 0.02 for r in rows)


def test_conjugate_poisson_refits_converge_at_high_counts():
    config = _config('conjugate-poisson', 'n=20')
    problem = build_problem(config, 20, 0)
    fit = fit_map(problem.model, problem.prior, problem.data, config.fit_config())
    refit_cfg = refit_budget_config(config.fit_config())
    for y in (9, 26, 41):
        refit = refit_augmented(problem.model, problem.prior, problem.data,
                                PseudoObservation(problem.x_test, float(y)), fit.theta, refit_cfg)
        assert refit.converged, (y, refit.message)


@pytest.mark.slow
def test_conjugate_normal_accuracy_holds_at_large_n():
    rows, _ = run_conjugate_validation(_config('conjugate-normal', 'n=1000,100000', 'seeds=2',
                                               'engines=ssla,assla'))
    assert len(rows) == 8
    for row in rows:
        limit = 1e-3 if row['engine'] == 'ssla' else 1e-2
        assert row['kl_analytic_engine'] < limit, row


def test_conjugate_validation_rejects_other_experiments():
    with pytest.raises(ConfigurationError):
        run_conjugate_validation(_config('cancellation'))


def test_double_precision_naive_path_agrees_with_the_stable_one():
    model = gaussian_constant(2.0)
    data = gen_normal(1000, 5)
    fit = fit_map(model, Prior.isotropic(1.0, 1, mean=4.0), data)
    y = np.linspace(0.0, 8.0, 41)
    stable, naive = cancellation_increments(model, data, fit.theta, np.ones(1), y, precision='double')
    assert np.max(np.abs(stable - naive)) < 1e-9


def test_cancellation_study():
    rows, measured = run_cancellation_study([1000], seeds=2, y_grid=GridConfig(count=51))
    assert len(rows) == 1 and len(measured) == 2
    row = rows[0]
    assert row.n_seeds == 2
    assert row.stable_max_abs_log_err <= 1e-9
    assert 0.0 <= row.frac_delta_zero <= 1.0


@pytest.mark.slow
def test_cancellation_grows_with_n_in_single_precision():
    rows, _ = run_cancellation_study([1000, 1000000], seeds=2, y_grid=GridConfig(count=51))
    small, large = rows
    assert large.frac_delta_zero >= small.frac_delta_zero
    assert large.stable_max_abs_log_err <= 1e-9


@pytest.mark.slow
def test_single_precision_error_at_intermediate_n():
    rows, measured = run_cancellation_study([100000], seeds=6)
    row = rows[0]
    assert 7.57e-3 / 3 <= row.max_abs_log_err_mean <= 3 * 7.57e-3
    assert row.kl_sd > 1e-6 * row.kl_mean
    assert len({m['kl'] for m in measured}) == 6


def test_prior_modularity():
    at_hat, off_hat, summary = run_prior_modularity(_config('prior-modularity', 'n=50'))
    assert len(at_hat) == len(off_hat) == 5
    assert summary['max_abs_ssla_minus_assla_at_yhat'] < 1e-6
    gaps = [abs(r['ssla_minus_noninfo']) for r in sorted(off_hat, key=lambda r: r['tau_sq'])]
    assert all(tighter >= looser for tighter, looser in zip(gaps, gaps[1:]))
    assert gaps[0] > gaps[-2] > 0.0
    assert gaps[-1] == 0.0
    assert summary['ssla_spread_off'] > summary['assla_spread_off']


def test_hetero_benchmark_on_a_small_problem():
    config = _config('hetero-toy', 'n=60', 'seeds=1', 'hetero.n_test=6', 'model.arch=linear',
                     'engines=assla,la-mc,plugin', 'levels=0.95,0.5')
    reports, rows = run_hetero_benchmark(config)
    for engine in ('assla', 'la-mc', 'plugin'):
        report = reports[engine][0]
        assert report.n_test == 6
        assert report.coverage[0.95] >= report.coverage[0.5]
        assert report.scale == 'standardized'
    assert all(r['status'] == 'ok' for r in rows)


@pytest.mark.slow
def test_hetero_benchmark_runs_ssla_on_the_default_network(caplog):
    config = _config('hetero-toy', 'seeds=1', 'hetero.n_test=3', 'engines=ssla,assla', 'grid.count=21')
    assert config.model['arch'] == 'mlp'
    with caplog.at_level('WARNING'):
        reports, rows = run_hetero_benchmark(config)
    assert [r['status'] for r in rows] == ['ok', 'ok']
    assert reports['ssla'][0].n_test == 3
    assert 'not converged' not in caplog.text


@pytest.mark.slow
def test_sampled_laplace_covers_at_least_as_often_as_assla():
    config = _config('hetero-toy', 'seeds=5', 'engines=assla,la-mc', 'levels=0.95')
    reports, _ = run_hetero_benchmark(config)
    pairs = zip(reports['la-mc'], reports['assla'])
    wins = sum(mc.coverage[0.95] >= plain.coverage[0.95] for mc, plain in pairs)
    assert wins >= 3


def test_runner_writes_the_conjugate_tables(tmp_path):
    config = _config('conjugate-normal', 'n=20', 'engines=assla,plugin')
    writer = ReportWriter(str(tmp_path), config.experiment, config_hash(config))
    summary = ExperimentRunner(config, writer, resolved={'experiment': config.experiment}).run()
    assert summary == {'rows': 2, 'grids': 3}
    for name in ('kl.csv', 'run.jsonl', 'resolved_config.json', 'grids/analytic_n20_seed0.csv',
                 'grids/assla_n20_seed0.csv', 'grids/plugin_n20_seed0.csv'):
        assert (tmp_path / name).exists()


def test_runner_leaves_logging_setup_to_the_cli(tmp_path, monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, 'handlers', [])
    config = _config('conjugate-normal', 'n=20', 'engines=plugin')
    ExperimentRunner(config, ReportWriter(str(tmp_path), config.experiment, config_hash(config)))
    assert root.handlers == []


@pytest.mark.bench
def test_runner_on_a_csv(tmp_path, regression_csv):
    config = _config('csv-regression', f'csv.path={regression_csv}', 'csv.target=y', 'csv.n_test=4',
                     'n=20', 'seeds=1', 'model.arch=linear', 'engines=assla,plugin')
    writer = ReportWriter(str(tmp_path / 'out'), config.experiment, config_hash(config))
    summary = ExperimentRunner(config, writer).run()
    assert summary['failed_seeds'] == 0
    assert (tmp_path / 'out' / 'calibration.csv').exists()
    standardization = json.loads((tmp_path / 'out' / 'standardization.json').read_text())
    assert standardization['0']['convention'] == 'population (ddof=0)'
