"""
Experiment configuration schemas.

Settings files arrive as nested string mappings (see ``bench.settings``);
these schemas coerce and validate them and reject unknown keys.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

from marshmallow import Schema, ValidationError, fields, post_load, pre_load, validate, validates

from ppd.optimizer import DIRECTIONS, STEP_RULES, FitConfig
from ppd.predictive import ENGINES, GridConfig

EXPERIMENTS = (
    'conjugate-normal',
    'conjugate-poisson',
    'hetero-toy',
    'csv-regression',
    'cancellation',
    'prior-modularity',
)
CURVATURES = ('dense', 'ggn', 'diag', 'blocked')
PRECISIONS = ('double', 'single')

# per-experiment defaults; anything the settings file or --set provides wins
EXPERIMENT_DEFAULTS = {
    'conjugate-normal': {'n': [20, 100, 1000, 10000, 100000]},
    'conjugate-poisson': {'n': [20, 100, 1000], 'grid': {'upper': 50}},
    'hetero-toy': {
        'n': [200],
        'seeds': 5,
        'engines': ['ssla', 'assla', 'la-mc'],
        'fit': {'gradient_tolerance': 1e-3, 'refit_max_iterations': 500},
        'grid': {'max_failed_fraction': 0.05, 'count': 51},
    },
    'csv-regression': {
        'n': [50],
        'levels': [0.95, 0.75, 0.50],
        'fit': {'gradient_tolerance': 1e-3, 'refit_max_iterations': 500},
        'grid': {'max_failed_fraction': 0.05},
    },
    'cancellation': {'n': [1000, 10000, 100000, 1000000], 'seeds': 6, 'precision': 'single', 'engines': ['assla']},
    'prior-modularity': {'n': [50], 'engines': ['ssla', 'assla']},
}


def _merge_defaults(data: dict, defaults: dict) -> dict:
    merged = dict(data)
    for key, value in defaults.items():
        if isinstance(value, dict) and isinstance(merged.get(key, {}), dict):
            merged[key] = _merge_defaults(merged.get(key, {}), value)
        elif key not in merged:
            merged[key] = value
    return merged


class CommaList(fields.List):
    """A list field that also accepts ``"a, b, c"`` strings."""

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(',') if part.strip()]
        return super()._deserialize(value, attr, data, **kwargs)


class GridConfigSchema(Schema):
    count = fields.Int(load_default=201, validate=validate.Range(min=3))
    span = fields.Float(load_default=6.0, validate=validate.Range(min=0, min_inclusive=False))
    max_failed_fraction = fields.Float(load_default=0.01, validate=validate.Range(min=0, max=1, max_inclusive=False))
    upper = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=2))


class FitConfigSchema(Schema):
    max_iterations = fields.Int(load_default=1000, validate=validate.Range(min=0))
    gradient_tolerance = fields.Float(load_default=1e-8, validate=validate.Range(min=0, min_inclusive=False))
    step_rule = fields.Str(load_default='backtracking', validate=validate.OneOf(STEP_RULES))
    step_size = fields.Float(load_default=1.0, validate=validate.Range(min=0, min_inclusive=False))
    refit_max_iterations = fields.Int(load_default=200, validate=validate.Range(min=0))
    barzilai_borwein = fields.Bool(load_default=True)
    direction = fields.Str(load_default='auto', validate=validate.OneOf(DIRECTIONS))


class ModelSchema(Schema):
    arch = fields.Str(load_default='mlp', validate=validate.OneOf(('mlp', 'linear')))
    hidden = CommaList(fields.Int(validate=validate.Range(min=1)), load_default=lambda: [16, 16])
    activation = fields.Str(load_default='tanh', validate=validate.OneOf(('tanh', 'relu')))


class PriorSchema(Schema):
    tau_sq = fields.Float(load_default=1.0, validate=validate.Range(min=0, min_inclusive=False))
    taus = CommaList(fields.Float(validate=validate.Range(min=0, min_inclusive=False)),
                     load_default=lambda: [0.01, 0.1, 1.0, 10.0, 1e6])


class HeteroSchema(Schema):
    n_test = fields.Int(load_default=25, validate=validate.Range(min=1))
    require_converged = fields.Bool(load_default=False)


class ModularitySchema(Schema):
    sigma = fields.Float(load_default=0.5, validate=validate.Range(min=0, min_inclusive=False))
    x_test = fields.Float(load_default=1.5)
    offset = fields.Float(load_default=1.0)


class CsvSchema(Schema):
    path = fields.Str(load_default=None, allow_none=True)
    target = fields.Str(load_default=None, allow_none=True)
    n_test = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=1))
    test_fraction = fields.Float(load_default=0.1, validate=validate.Range(min=0, max=1, min_inclusive=False,
                                                                           max_inclusive=False))


@dataclass
class ExperimentConfig:
    """A fully resolved experiment configuration."""
    experiment: str
    engines: List[str]
    curvature: str
    levels: List[float]
    n: List[int]
    seed: int
    seeds: int
    precision: str
    mc_samples: int
    threads: Optional[int] = None
    x_test: Optional[List[float]] = None
    grid: Dict[str, Any] = field(default_factory=dict)
    fit: Dict[str, Any] = field(default_factory=dict)
    model: Dict[str, Any] = field(default_factory=dict)
    prior: Dict[str, Any] = field(default_factory=dict)
    hetero: Dict[str, Any] = field(default_factory=dict)
    modularity: Dict[str, Any] = field(default_factory=dict)
    csv: Dict[str, Any] = field(default_factory=dict)

    def grid_config(self, discrete: bool = False) -> GridConfig:
        upper = self.grid.get('upper')
        if discrete and upper is not None:
            return replace(GridConfig.integer_support(upper), max_failed_fraction=self.grid['max_failed_fraction'])
        return GridConfig(count=self.grid['count'], span=self.grid['span'],
                          max_failed_fraction=self.grid['max_failed_fraction'])

    def fit_config(self, seed: int = 0) -> FitConfig:
        return FitConfig(seed=seed, **self.fit)


class ExperimentConfigSchema(Schema):
    experiment = fields.Str(required=True, validate=validate.OneOf(EXPERIMENTS))
    engines = CommaList(fields.Str(validate=validate.OneOf(ENGINES)), load_default=lambda: ['ssla', 'assla', 'la-mc'])
    curvature = fields.Str(load_default='dense', validate=validate.OneOf(CURVATURES))
    levels = CommaList(fields.Float(validate=validate.Range(min=0, max=1, min_inclusive=False, max_inclusive=False)),
                       load_default=lambda: [0.95, 0.90, 0.75, 0.50])
    n = CommaList(fields.Int(validate=validate.Range(min=1)), load_default=lambda: [20])
    seed = fields.Int(load_default=0, validate=validate.Range(min=0))
    seeds = fields.Int(load_default=1, validate=validate.Range(min=1))
    precision = fields.Str(load_default='double', validate=validate.OneOf(PRECISIONS))
    mc_samples = fields.Int(load_default=1000, validate=validate.Range(min=100))
    threads = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=1))
    x_test = CommaList(fields.Float(), load_default=None, allow_none=True)
    grid = fields.Nested(GridConfigSchema, load_default=lambda: GridConfigSchema().load({}))
    fit = fields.Nested(FitConfigSchema, load_default=lambda: FitConfigSchema().load({}))
    model = fields.Nested(ModelSchema, load_default=lambda: ModelSchema().load({}))
    prior = fields.Nested(PriorSchema, load_default=lambda: PriorSchema().load({}))
    hetero = fields.Nested(HeteroSchema, load_default=lambda: HeteroSchema().load({}))
    modularity = fields.Nested(ModularitySchema, load_default=lambda: ModularitySchema().load({}))
    csv = fields.Nested(CsvSchema, load_default=lambda: CsvSchema().load({}))

    @validates('engines')
    def validate_engines(self, value, **kwargs):
        if not value:
            raise ValidationError("At least one engine is required.")

    @validates('levels')
    def validate_levels(self, value, **kwargs):
        if not value:
            raise ValidationError("At least one level is required.")

    @pre_load
    def apply_experiment_defaults(self, data, **kwargs):
        defaults = EXPERIMENT_DEFAULTS.get(data.get('experiment')) if isinstance(data, dict) else None
        return _merge_defaults(data, defaults) if defaults else data

    @post_load
    def make_config(self, data, **kwargs):
        if data['experiment'] == 'csv-regression' and not (data['csv']['path'] and data['csv']['target']):
            raise ValidationError("csv-regression needs csv.path and csv.target.", field_name='csv')
        return ExperimentConfig(**data)
