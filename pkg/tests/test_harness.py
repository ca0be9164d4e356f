import json
import os

import numpy as np
import pytest
import yaml

import cli
from configs import ConfigError, validate_config
from report import pooled_ks_rows
from utils import canonical_json, config_hash, ks_distance, loglog_slope, read_csv, read_json


def base_config(**overrides):
    raw = {
        'config_name': 'tiny_cead',
        'lab': 'adaptive_dynamics',
        'experiment': 'cead',
        'params': {'ecology': {'name': 'linear', 'box': [0.0, 10.0]}, 'x0': 0.0, 'T': 2.0},
        'seeds': [1],
    }
    raw.update(overrides)
    return raw


def write_config(tmp_path, raw):
    path = tmp_path / '{}.yaml'.format(raw['config_name'])
    path.write_text(yaml.safe_dump(raw))
    return str(path)


#configuration ======================
def test_valid_config_expands_cells():
    cfg = validate_config(base_config(seeds=[3, 5], sweep=[{'T': 1.0}, {'T': 2.0}]))
    cells = cfg.cells()
    assert [c[0] for c in cells] == ['sweep000_seed3', 'sweep000_seed5', 'sweep001_seed3', 'sweep001_seed5']
    assert [c[1] for c in cells] == [0, 1, 2, 3]
    assert cells[2][4]['T'] == 1.0 and cells[2][4]['x0'] == 0.0


@pytest.mark.parametrize('raw, path', [
    (base_config(colour='red'), 'colour'),
    (base_config(seeds=[1, 1]), 'seeds'),
    (base_config(lab='chemistry'), 'lab'),
    (base_config(experiment='limit'), 'experiment'),
    (base_config(params={'x0': 0.0, 'horizon': 2.0}), 'params.horizon'),
    (base_config(params={'T': -1.0}), 'params.T'),
    (base_config(n_jobs=0), 'n_jobs'),
])
def test_invalid_config_names_the_field(raw, path):
    with pytest.raises(ConfigError) as err:
        validate_config(raw)
    assert err.value.path == path


def test_missing_required_field():
    raw = base_config()
    del raw['seeds']
    with pytest.raises(ConfigError) as err:
        validate_config(raw)
    assert err.value.path == 'seeds'


def test_output_dir_resolution(monkeypatch):
    cfg = validate_config(base_config())
    monkeypatch.setenv('POPSCALES_OUTPUT_DIR', '/tmp/env_out')
    assert cfg.resolve_output('/tmp/cli_out') == '/tmp/cli_out'
    assert cfg.resolve_output() == '/tmp/env_out'
    assert validate_config(base_config(output_dir='/tmp/cfg_out')).resolve_output() == '/tmp/cfg_out'


#serialization and statistics ======================
def test_canonical_json_is_order_free():
    a = canonical_json({'b': 1, 'a': [0.1, np.float64(2.0)]})
    b = canonical_json({'a': [0.1, 2.0], 'b': 1})
    assert a == b == '{"a":["0.10000000000000001","2"],"b":1}'
    assert config_hash({'a': 1}) == config_hash({'a': 1})
    assert config_hash({'a': 1}) != config_hash({'a': 2})


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, intercept = loglog_slope(x, 3.0 / x)
    assert slope == pytest.approx(-1.0)
    assert intercept == pytest.approx(np.log(3.0))
    assert np.isnan(loglog_slope([1.0], [1.0])[0])


def test_ks_distance():
    sample = np.linspace(0.01, 0.99, 50)
    assert ks_distance(sample, sample) == 0.0
    assert ks_distance(sample, lambda s: np.clip(s, 0, 1)) < 0.05


#command line ======================
def test_validate_command(tmp_path, capsys):
    assert cli.main(['validate', write_config(tmp_path, base_config(seeds=[1, 2]))]) == 0
    assert 'tiny_cead: 2 cells' in capsys.readouterr().out
    assert cli.main(['validate', write_config(tmp_path, base_config(seeds=[]))]) == 2
    assert cli.main(['validate', str(tmp_path / 'absent.yaml')]) == 2
    assert cli.main(['validate']) == 2


def test_run_and_report(tmp_path):
    out = str(tmp_path / 'out')
    config = write_config(tmp_path, base_config())
    assert cli.main(['run', '--config', config, '--out', out]) == 0

    run_dir = os.path.join(out, 'tiny_cead')
    manifest = read_json(os.path.join(run_dir, 'manifest.json'))
    raw = yaml.safe_load(open(config))
    assert manifest['config_hash'] == config_hash(raw)
    assert json.loads(manifest['config'])['experiment'] == 'cead'
    cell = manifest['cells'][0]
    assert cell['status'] == 'ok'
    assert sorted(cell['files']) == ['cells/sweep000_seed1/cead.csv', 'cells/sweep000_seed1/summary.json']

    summary = read_json(os.path.join(run_dir, 'cells', 'sweep000_seed1', 'summary.json'))
    assert not summary['singular']
    assert summary['final_trait'] == pytest.approx(np.e - 1.0, rel=1e-5)

    manifest_path = os.path.join(run_dir, 'manifest.json')
    assert cli.main(['report', manifest_path]) == 0
    rows = read_csv(os.path.join(run_dir, 'summary.csv'))
    assert rows[0]['cell_id'] == 'sweep000_seed1'

    os.remove(os.path.join(run_dir, 'cells', 'sweep000_seed1', 'cead.csv'))
    assert cli.main(['report', manifest_path]) == 4


def test_report_without_manifest(tmp_path, capsys):
    assert cli.main(['report', str(tmp_path / 'nowhere' / 'manifest.json')]) == 4
    assert 'manifest.json' in capsys.readouterr().err


def test_failed_cell_exit_code(tmp_path):
    raw = base_config(config_name='tiny_yule', experiment='ibm',
                      params={'ecology': {'name': 'yule', 'birth': 1.0}, 'regime': {'K': 10}, 'x0': 0.5,
                              'T': 100.0, 'n0': 10})
    out = str(tmp_path / 'out')
    assert cli.main(['run', write_config(tmp_path, raw), '--out', out]) == 3
    manifest = read_json(os.path.join(out, 'tiny_yule', 'manifest.json'))
    cell = manifest['cells'][0]
    assert cell['status'] == 'failed'
    assert cell['error'].startswith('DiagnosticError')
    assert manifest['regime_validity'][0]['K'] == 10
    # failed cells are listed, not treated as missing
    assert cli.main(['report', os.path.join(out, 'tiny_yule', 'manifest.json')]) == 0


def test_parallel_runs_are_identical(tmp_path):
    raw = base_config(config_name='tiny_tss_cead', experiment='tss_cead', seeds=[1, 2],
                      params={'x0': 0.0, 'T': 0.5, 'sigmas': [0.2, 0.1], 'replicates': 3})
    config = write_config(tmp_path, raw)
    serial, threaded = str(tmp_path / 'serial'), str(tmp_path / 'threaded')
    assert cli.main(['run', config, '--out', serial, '--parallel', '1']) == 0
    assert cli.main(['run', config, '--out', threaded, '--parallel', '2']) == 0
    for cell_id in ('sweep000_seed1', 'sweep000_seed2'):
        for name in ('tss_cead.csv', 'summary.json'):
            paths = [os.path.join(root, 'tiny_tss_cead', 'cells', cell_id, name) for root in (serial, threaded)]
            assert open(paths[0]).read() == open(paths[1]).read()

    assert cli.main(['report', os.path.join(serial, 'tiny_tss_cead', 'manifest.json')]) == 0
    slopes = read_csv(os.path.join(serial, 'tiny_tss_cead', 'slopes.csv'))
    assert [row['y'] for row in slopes] == ['distance', 'distance']


def test_ks_rows_pool_the_seeds_of_a_sweep_point():
    rate, horizon = 0.25, 8.0
    censor = 1.0 - np.exp(-rate * horizon)
    # quantiles of the truncated exponential, split over two seeds
    q = (np.arange(200) + 0.5) / 200
    times = -np.log(1.0 - q * censor) / rate
    rows = [{'cell_id': 'sweep000_seed{}'.format(k), 'sweep_index': 0, 'rate': rate, 'horizon': horizon,
             'series': list(times[k::2])} for k in (0, 1)]
    rows.append({'cell_id': 'sweep001_seed1', 'sweep_index': 1, 'samples': 0, 'ks': None})
    pooled = pooled_ks_rows(rows)
    assert [row['cell_id'] for row in pooled] == ['pooled_sweep000']
    assert pooled[0]['samples'] == 200
    assert pooled[0]['ks'] <= 0.5 / 200 + 1e-9
