import argparse
import os, time
from datetime import datetime

from joblib import Parallel, delayed
from tqdm import tqdm

from configs import load_config
from get_instances import get_dirs, get_experiment, get_regime
from proj_models.errors import PopscalesError
from utils import Logger, canonical_json, config_hash, set_seeds, write_csv, write_h5, write_json

TOOLKIT_VERSION = '0.3.0'


def setup(args):
    cfg = load_config(args.config)

    #read configs =================================
    workspace = cfg.resolve_output(args.out)
    n_jobs = args.parallel if args.parallel is not None else cfg.n_jobs
    run_dir, cells_dir, log_dir = get_dirs(workspace, cfg.config_name, remake=args.remake)  #workspace/config_name/cells ; workspace/config_name/log.txt
    logger = Logger(log_dir)
    experiment = get_experiment(cfg.lab)
    set_seeds(cfg.seeds[0])

    return cfg, run_dir, cells_dir, logger, experiment, n_jobs


def run_one(experiment, cfg, cell):
    """
    one (sweep, seed) cell; lab errors are caught and reported, the cell is
    marked failed
    """
    cell_id, cell_index, sweep_index, seed, params = cell
    start = time.time()
    try:
        result = experiment.run_cell(cfg.experiment, params, seed, cell_index)
    except PopscalesError as err:
        return cell_id, None, '{}: {}'.format(type(err).__name__, err), time.time() - start
    return cell_id, result, None, time.time() - start


def write_cell(cells_dir, cell_id, result):
    cell_dir = os.path.join(cells_dir, cell_id)
    os.makedirs(cell_dir, exist_ok=True)
    files = []
    for name in sorted(result.tables):
        write_csv(os.path.join(cell_dir, name + '.csv'), result.tables[name])
        files.append(name + '.csv')
    write_json(os.path.join(cell_dir, 'summary.json'), result.summary)
    files.append('summary.json')
    if result.arrays:
        write_h5(os.path.join(cell_dir, 'arrays.h5'), result.arrays)
        files.append('arrays.h5')
    return [os.path.join('cells', cell_id, f) for f in files]


def regime_validity(cfg):
    # one report per sweep entry, pure function of the configuration
    if cfg.lab != 'adaptive_dynamics':
        return None
    reports = []
    for i, override in enumerate(cfg.sweep or [{}]):
        params = dict(cfg.params, **override)
        if 'regime' in params:
            reports.append(dict(get_regime(params['regime']).report(), sweep_index=i))
    return reports


def main(args):
    cfg, run_dir, cells_dir, logger, experiment, n_jobs = setup(args)
    logger.attach('proj_models')

    logger.write('\n')
    logger.write('run start: ' + datetime.now().strftime('%Y-%m-%d %H:%M:%S'))
    logger.write('{} / {} / {}: {}'.format(cfg.config_name, cfg.lab, cfg.experiment, cfg.description))
    started = datetime.now().isoformat(timespec='seconds')
    start = time.time()

    cells = cfg.cells()
    outcomes = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(run_one)(experiment, cfg, cell) for cell in tqdm(cells, desc=cfg.config_name))

    index = []
    for cell, (cell_id, result, error, seconds) in zip(cells, outcomes):
        entry = {'cell_id': cell_id, 'seed': cell[3], 'sweep_index': cell[2], 'seconds': round(seconds, 3)}
        if error is None:
            entry.update(status='ok', files=write_cell(cells_dir, cell_id, result))
            logger.write('cell {} done in {:.2f} s'.format(cell_id, seconds))
        else:
            entry.update(status='failed', files=[], error=error)
            logger.write('cell {} failed: {}'.format(cell_id, error))
        index.append(entry)

    manifest = {
        'config_name': cfg.config_name,
        'lab': cfg.lab,
        'experiment': cfg.experiment,
        'config_hash': config_hash(cfg.raw),
        'config': canonical_json(cfg.raw),
        'toolkit_version': TOOLKIT_VERSION,
        'seeds': cfg.seeds,
        'started': started,
        'finished': datetime.now().isoformat(timespec='seconds'),
        'cells': index,
    }
    validity = regime_validity(cfg)
    if validity is not None:
        manifest['regime_validity'] = validity
    write_json(os.path.join(run_dir, 'manifest.json'), manifest, atomic=True)

    failed = [entry['cell_id'] for entry in index if entry['status'] != 'ok']
    logger.write('-----------------------')
    logger.write('total run time: {:.2f} min'.format((time.time()-start)/60))
    logger.write('cells: {} ok, {} failed'.format(len(index) - len(failed), len(failed)))
    logger.detach()
    return 3 if failed else 0


def add_arguments(parser):
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--parallel", type=int, default=None, help="number of parallel cells")
    parser.add_argument("--remake", action='store_true', help="clear previous outputs of this config")


if __name__ == "__main__":

    parser = argparse.ArgumentParser(description="")
    parser.add_argument("--config", type=str, required=False, default="configs/polymorphic.yaml",
                        help="config file path")
    add_arguments(parser)

    args = parser.parse_args()

    raise SystemExit(main(args))
