"""
Experiment configuration: YAML (or JSON) ingestion and schema validation.

Every problem is reported as ConfigError(path, message) with a dotted path into
the raw document, before anything is simulated.
"""
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from proj_models.errors import PopscalesError

DEFAULT_OUTPUT = './workspace'
OUTPUT_ENV = 'POPSCALES_OUTPUT_DIR'


class ConfigError(PopscalesError):
    def __init__(self, path, message):
        super().__init__('{}: {}'.format(path, message))
        self.path = path
        self.message = message


#field checks ======================
def _number(lo=None, hi=None, integer=False, strict_lo=False, nullable=False):
    def check(path, value):
        if value is None and nullable:
            return
        kinds = (int,) if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kinds):
            raise ConfigError(path, 'expected {}, got {!r}'.format('an integer' if integer else 'a number', value))
        if lo is not None and (value <= lo if strict_lo else value < lo):
            raise ConfigError(path, 'must be {} {}'.format('>' if strict_lo else '>=', lo))
        if hi is not None and value > hi:
            raise ConfigError(path, 'must be <= {}'.format(hi))
    return check

def _choice(*options):
    def check(path, value):
        if value not in options:
            raise ConfigError(path, 'expected one of {}, got {!r}'.format(list(options), value))
    return check

def _flag(path, value):
    if not isinstance(value, bool):
        raise ConfigError(path, 'expected true or false')

def _list_of(item, min_len=0):
    def check(path, value):
        if not isinstance(value, list) or len(value) < min_len:
            raise ConfigError(path, 'expected a list with at least {} entries'.format(min_len))
        for k, v in enumerate(value):
            item('{}[{}]'.format(path, k), v)
    return check

def _mapping(required=(), nullable=False, **fields):
    def check(path, value):
        if value is None and nullable:
            return
        if not isinstance(value, dict):
            raise ConfigError(path, 'expected a mapping')
        for key in required:
            if key not in value:
                raise ConfigError('{}.{}'.format(path, key), 'required field is missing')
        for key, v in value.items():
            if key in fields:
                fields[key]('{}.{}'.format(path, key), v)
    return check

def _any(path, value):
    pass


POSITIVE = _number(0.0, strict_lo=True)
PROBABILITY = _number(0.0, 1.0)
COUNT = _number(1, integer=True)

#lab schemas ======================
BRANCHING = {
    'generations': _number(0, integer=True),
    'keep_rule': _choice('mother_machine', 'full', 'bernoulli'),
    'keep_probability': _number(0.5, 1.0),
    'keep_bias': _mapping(('p0', 'slope'), nullable=True, p0=_number(), slope=_number()),
    'birth': _mapping(('name', 'theta'), name=_choice('constant', 'affine'), theta=_list_of(POSITIVE, 1)),
    'birth_bound': POSITIVE,
    'drift': _number(),
    'noise': _number(0.0),
    'fragmentation': _mapping(kind=_choice('beta', 'half'), a=POSITIVE, b=POSITIVE),
    'transition': _choice('fragmentation', 'resample'),
    'resample_law': _list_of(POSITIVE, 2),
    'root_trait': _number(0.0),
    'dt': POSITIVE,
    'replicates': _number(2, integer=True),
    'generations_list': _list_of(_number(0, integer=True), 2),
    'holder': _list_of(POSITIVE, 2),
    'kernel_order': _choice(2, 4),
    'window': _list_of(_number(), 2),
    'grid_size': _number(2, integer=True),
    'optimizer': _mapping(('name',), name=_any, params=_mapping()),
    'level': _number(0.0, 1.0, strict_lo=True),
}

PENALTY = _mapping(('kind',), kind=_choice('zero', 'constant', 'favour_c', 'favour_d', 'bump', 'tabulated'),
                   scale=_number(), offset=_number(), tilt=_number(), values=_list_of(_number(), 2))

GROUP_SELECTION = {
    's': _number(),
    'sigma': POSITIVE,
    'penalty': PENALTY,
    'initial': _mapping(('kind',), kind=_choice('uniform', 'beta', 'atoms', 'tabulated')),
    'grid_size': _number(50, integer=True),
    't': POSITIVE,
    'dt': _number(0.0, strict_lo=True, nullable=True),
    'times': _list_of(_number(0.0), 1),
    'sizes': _list_of(_list_of(COUNT, 2), 1),
    'replicates': COUNT,
    'n_paths': _number(100, integer=True),
    'test_function': _choice('identity', 'square', 'indicator_half'),
    'shift_check': _list_of(_number()),
    'scales': _list_of(_number(), 8),
    'sigmas': _list_of(POSITIVE, 2),
    'thresholds': _list_of(_number(0.0), 1),
    'exit_paths': _number(0, integer=True),
}

HJ = {
    'model': _mapping(('name',), name=_choice('three_state', 'two_state', 'custom', 'quadratic', 'heat')),
    'T': POSITIVE,
    'n_points': _number(2, integer=True),
    'check_times': _list_of(_number(0.0), 1),
    'eps': _list_of(POSITIVE, 1),
    'dt': _number(0.0, strict_lo=True, nullable=True),
    'floors': _list_of(POSITIVE, 1),
    'record_every': COUNT,
}

ADAPTIVE = {
    'ecology': _mapping(('name',), name=_choice('linear', 'peak', 'hump', 'gaussian', 'yule', 'subcritical'),
                        n_markers=COUNT, marker_rate=_number(0.0), box=_list_of(_number(), 2),
                        step_probs=_list_of(PROBABILITY, 1), steps=_list_of(_number(integer=True), 1)),
    'regime': _mapping(('K',), K=_number(10, integer=True), sigma_K=POSITIVE, p_K=PROBABILITY, q_K=PROBABILITY,
                       r_K=POSITIVE, alpha=POSITIVE),
    'x0': _number(),
    'u0': _number(0, integer=True),
    'T': POSITIVE,
    'replicates': COUNT,
    'N_FV': _number(100, integer=True),
    'sigma': POSITIVE,
    'sigmas': _list_of(POSITIVE, 2),
    'record_dt': _number(0.0, strict_lo=True, nullable=True),
    'n0': _number(1, integer=True, nullable=True),
    'cead_check': _flag,
    'grid': _number(2, integer=True),
}

LABS = {
    'branching': (BRANCHING, ('tree', 'tree_mean_variance', 'estimator_rates', 'mle')),
    'group_selection': (GROUP_SELECTION, ('limit', 'ibm_vs_limit', 'feynman_kac', 'qsd', 'threshold_scan',
                                          'sigma_scan', 'truncation', 'relaxation')),
    'hj': (HJ, ('discrete_phi', 'eps_sweep', 'truncation', 'continuous')),
    'adaptive_dynamics': (ADAPTIVE, ('ibm', 'tss', 'sfvp', 'cead', 'multiscale', 'tss_cead', 'fixation_scan')),
}


#config ======================
@dataclass
class ExperimentConfig:
    config_name: str
    lab: str
    experiment: str
    params: dict
    seeds: list
    sweep: list = field(default_factory=list)
    output_dir: Optional[str] = None
    n_jobs: int = 1
    description: str = ''
    raw: dict = field(default_factory=dict, repr=False)

    def cells(self):
        """
        (cell_id, cell index, sweep index, seed, merged params) in a fixed order
        """
        sweeps = self.sweep or [{}]
        out = []
        for i, override in enumerate(sweeps):
            for seed in self.seeds:
                cell_id = 'sweep{:03d}_seed{}'.format(i, seed)
                out.append((cell_id, len(out), i, seed, dict(self.params, **override)))
        return out

    def resolve_output(self, cli_out=None):
        return cli_out or self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT


def _check_params(path, params, schema):
    if not isinstance(params, dict):
        raise ConfigError(path, 'expected a mapping')
    for key, value in params.items():
        if key not in schema:
            raise ConfigError('{}.{}'.format(path, key), 'unknown field')
        schema[key]('{}.{}'.format(path, key), value)


def validate_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError('<root>', 'expected a mapping')
    for key in ('config_name', 'lab', 'experiment', 'seeds'):
        if key not in raw:
            raise ConfigError(key, 'required field is missing')
    if not isinstance(raw['config_name'], str) or not raw['config_name']:
        raise ConfigError('config_name', 'expected a nonempty string')
    if raw['lab'] not in LABS:
        raise ConfigError('lab', 'expected one of {}'.format(list(LABS)))
    schema, experiments = LABS[raw['lab']]
    if raw['experiment'] not in experiments:
        raise ConfigError('experiment', 'expected one of {}'.format(list(experiments)))
    _list_of(_number(0, integer=True), 1)('seeds', raw['seeds'])
    if len(set(raw['seeds'])) != len(raw['seeds']):
        raise ConfigError('seeds', 'seeds must be distinct')
    params = raw.get('params') or {}
    _check_params('params', params, schema)
    sweep = raw.get('sweep') or []
    if not isinstance(sweep, list):
        raise ConfigError('sweep', 'expected a list of overrides')
    for k, override in enumerate(sweep):
        _check_params('sweep[{}]'.format(k), override, schema)
    n_jobs = raw.get('n_jobs', 1)
    _number(-1, integer=True)('n_jobs', n_jobs)
    if n_jobs == 0:
        raise ConfigError('n_jobs', 'must be nonzero')
    for key in raw:
        if key not in ('config_name', 'description', 'lab', 'experiment', 'params', 'sweep', 'seeds',
                       'output_dir', 'n_jobs'):
            raise ConfigError(key, 'unknown field')
    return ExperimentConfig(raw['config_name'], raw['lab'], raw['experiment'], dict(params), list(raw['seeds']),
                            list(sweep), raw.get('output_dir'), n_jobs, raw.get('description', ''), raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, 'r') as fr:
            raw = yaml.load(fr, Loader=yaml.FullLoader)
    except OSError as err:
        raise ConfigError('<file>', 'cannot read {}: {}'.format(path, err))
    except yaml.YAMLError as err:
        raise ConfigError('<file>', 'cannot parse {}: {}'.format(path, err))
    return validate_config(raw)
