import argparse
import os, time
from datetime import datetime

import numpy as np
from tqdm import tqdm

from get_instances import get_summary_fs
from utils import Logger, ks_distance, loglog_slope, read_csv, read_json, save_plot, to_plain, write_csv


class MissingOutputError(Exception):
    def __init__(self, missing):
        super().__init__('missing outputs for cells: {}'.format(', '.join(missing)))
        self.missing = missing


# experiment -> (table, x column, y columns) fitted on log-log axes
SLOPE_COLUMNS = {
    'tree_mean_variance': ('rates', 'nodes', ('variance',)),
    'estimator_rates': ('rates', 'nodes', ('rmse_nu', 'rmse_q')),
    'eps_sweep': ('eps_sweep', 'eps', ('distance',)),
    'tss_cead': ('tss_cead', 'sigma', ('distance',)),
    'ibm_vs_limit': ('distances', 'm', ('w1',)),
}


def _flatten(summary, prefix=''):
    row = {}
    for key, value in summary.items():
        name = prefix + key
        if isinstance(value, dict):
            row.update(_flatten(value, name + '.'))
        elif not isinstance(value, list):
            row[name] = value
    return row


#summary functions ======================
def summary_row(cell, summary, cell_dir, experiment):
    return [dict({'cell_id': cell['cell_id']}, **_flatten(summary))]


def slope_rows(cell, summary, cell_dir, experiment):
    """
    log-log least-squares slopes refitted from the raw tables; repeated x
    values are averaged first
    """
    table, x_col, y_cols = SLOPE_COLUMNS[experiment]
    rows = read_csv(os.path.join(cell_dir, table + '.csv'))
    out = []
    for y_col in y_cols:
        xs = sorted({row[x_col] for row in rows})
        ys = [np.mean([row[y_col] for row in rows if row[x_col] == x]) for x in xs]
        slope, intercept = loglog_slope(xs, ys)
        out.append({'cell_id': cell['cell_id'], 'x': x_col, 'y': y_col, 'slope': slope, 'intercept': intercept,
                    'points': len(xs), 'series': (xs, ys)})
    return out


def ks_rows(cell, summary, cell_dir, experiment):
    """
    KS distance of the first jump (or first sweep) times against the
    exponential law of the TSS rate truncated at the horizon
    """
    if experiment == 'tss':
        rows = read_csv(os.path.join(cell_dir, 'jumps.csv'))
        first = {}
        for row in rows:
            first.setdefault(row['replicate'], row['t'])
        times, rate, horizon = list(first.values()), summary['total_rate'], summary['horizon']
    else:
        rows = read_csv(os.path.join(cell_dir, 'first_sweeps.csv'))
        times, rate, horizon = [row['t'] for row in rows], summary['tss_rate'], summary['T_macro']
    if not times or rate <= 0:
        return [{'cell_id': cell['cell_id'], 'sweep_index': cell['sweep_index'], 'samples': len(times), 'ks': None}]
    return [{'cell_id': cell['cell_id'], 'sweep_index': cell['sweep_index'], 'samples': len(times), 'rate': rate,
             'horizon': horizon, 'ks': _truncated_exponential_ks(times, rate, horizon), 'series': times}]


def _truncated_exponential_ks(times, rate, horizon):
    censor = 1.0 - np.exp(-rate * horizon)
    return ks_distance(times, lambda s: (1.0 - np.exp(-rate * np.asarray(s))) / censor)


def pooled_ks_rows(rows):
    """
    one extra row per sweep point with several seeds, pooling their first times
    """
    groups = {}
    for row in rows:
        if row.get('series'):
            groups.setdefault(row['sweep_index'], []).append(row)
    pooled = []
    for index, group in sorted(groups.items()):
        if len(group) < 2:
            continue
        times = [t for row in group for t in row['series']]
        rate, horizon = group[0]['rate'], group[0]['horizon']
        pooled.append({'cell_id': 'pooled_sweep{:03d}'.format(index), 'sweep_index': index, 'samples': len(times),
                       'rate': rate, 'horizon': horizon, 'ks': _truncated_exponential_ks(times, rate, horizon)})
    return pooled


def regime_rows(cell, summary, cell_dir, experiment):
    if experiment == 'threshold_scan':
        bracket = summary.get('bracket') or [None, None]
        return [{'cell_id': cell['cell_id'], 'R_wedge': bracket[0], 'R_vee': bracket[1],
                 'one_sided': summary.get('one_sided')}]
    return [{'cell_id': cell['cell_id'], 'regime': summary['regime'], 'rho_alpha': summary['rho_alpha'],
             'rho0': summary['rho0'], 'rho1': summary['rho1'], 'tolerance': summary['tolerance'],
             'residual': summary.get('residual'), 'shift_invariant': summary.get('shift_invariant')}]


AGGREGATE_NAMES = {'slope_rows': 'slopes', 'ks_rows': 'ks', 'regime_rows': 'regimes'}


def setup(args):
    manifest_path = args.manifest
    try:
        manifest = read_json(manifest_path)
    except FileNotFoundError:
        raise MissingOutputError([manifest_path])
    run_dir = os.path.dirname(os.path.abspath(manifest_path))
    logger = Logger(os.path.join(run_dir, 'log.txt'))
    summary_f = get_summary_fs([manifest['experiment']])[manifest['experiment']]
    return manifest, run_dir, logger, summary_f


def main(args):
    manifest, run_dir, logger, summary_f = setup(args)

    missing = [cell['cell_id'] for cell in manifest['cells'] if cell['status'] == 'ok'
               and not all(os.path.exists(os.path.join(run_dir, f)) for f in cell['files'])]
    if missing:
        logger.write('report aborted, missing outputs: {}'.format(', '.join(missing)))
        raise MissingOutputError(missing)

    logger.write('\n')
    logger.write('report start: ' + datetime.now().strftime('%Y-%m-%d %H:%M:%S'))
    start = time.time()

    summaries, aggregate = [], []
    for cell in tqdm(manifest['cells'], desc='report'):
        if cell['status'] != 'ok':
            summaries.append({'cell_id': cell['cell_id'], 'status': cell['status'], 'error': cell.get('error')})
            continue
        cell_dir = os.path.join(run_dir, 'cells', cell['cell_id'])
        summary = read_json(os.path.join(cell_dir, 'summary.json'))
        summaries.append(dict({'cell_id': cell['cell_id'], 'status': 'ok', 'seed': cell['seed'],
                               'sweep_index': cell['sweep_index']}, **_flatten(summary)))
        if summary_f is not summary_row:
            aggregate.extend(summary_f(cell, summary, cell_dir, manifest['experiment']))

    write_csv(os.path.join(run_dir, 'summary.csv'), [to_plain(row) for row in summaries])
    if aggregate:
        name = AGGREGATE_NAMES[summary_f.__name__]
        if name == 'ks':
            aggregate.extend(pooled_ks_rows(aggregate))
        write_csv(os.path.join(run_dir, name + '.csv'),
                  [to_plain({k: v for k, v in row.items() if k != 'series'}) for row in aggregate])
        logger.write('{} rows written to {}.csv'.format(len(aggregate), name))
        if args.plot and name == 'slopes':
            plot_dir = os.path.join(run_dir, 'plots')
            os.makedirs(plot_dir, exist_ok=True)
            for row in aggregate:
                save_plot(os.path.join(plot_dir, '{}_{}.png'.format(row['cell_id'], row['y'])),
                          {row['y']: row['series']}, row['x'], row['y'],
                          'slope {:.3f}'.format(row['slope']), log_scale=True)

    logger.write('-----------------------')
    logger.write('total report time: {:.2f} min'.format((time.time()-start)/60))
    return 0


def add_arguments(parser):
    parser.add_argument("--plot", action='store_true', help="write PNG figures")


if __name__ == "__main__":

    parser = argparse.ArgumentParser(description="")
    parser.add_argument("--manifest", type=str, required=True, help="manifest.json of a run")
    add_arguments(parser)

    args = parser.parse_args()

    raise SystemExit(main(args))
