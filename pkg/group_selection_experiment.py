"""
Group-selection lab cells: the nested Moran process, its limit equation,
Feynman-Kac estimates, quasi-stationary regimes and the truncation experiment.
"""
import numpy as np

from get_instances import get_initial_measure, get_penalty
from proj_models.group_selection import (PenalizedWFModel, NestedMoranState, ancestry_count, evolve_limit_measure,
                                         feynman_kac_estimate, limit_trajectory, sample_measure,
                                         simulate_nested_moran, truncation_experiment)
from proj_models.kernel import RngStream
from proj_models.qsd import classify_regime, interior_relaxation, scan_sigma, scan_threshold
from utils import CellResult

DEFAULTS = {
    's': 1.0,
    'sigma': 1.0,
    'penalty': {'kind': 'bump', 'scale': 20.0, 'tilt': 0.25},
    'initial': {'kind': 'uniform'},
    'grid_size': 200,
    't': 1.0,
    'dt': None,
    'times': [0.0, 0.25, 0.5, 1.0],
    'sizes': [[100, 100], [200, 200]],
    'replicates': 10,
    'n_paths': 10000,
    'test_function': 'identity',
    'shift_check': [-1.0, 2.0],
    'scales': [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0],
    'sigmas': [0.5, 0.75, 1.0, 1.5, 2.0],
    'thresholds': [0.0, 1e-12, 1e-8, 1e-4],
    'exit_paths': 0,
}

TEST_FUNCTIONS = {
    'identity': lambda x: x,
    'square': lambda x: x**2,
    'indicator_half': lambda x: (x <= 0.5).astype(float),
}


def build_model(params):
    return PenalizedWFModel(params['s'], params['sigma'], get_penalty(params['penalty']))


def run_limit(params, rng):
    model = build_model(params)
    mu0 = get_initial_measure(params['initial'], params['grid_size'])
    trajectory = limit_trajectory(mu0, model, params['times'], params['dt'])
    rows = [mu.to_row(t) for t, mu in trajectory]
    arrays = {'times': np.array([t for t, _ in trajectory]),
              'density': np.array([mu.interior_density for _, mu in trajectory])}
    return CellResult({'trajectory': rows}, {'final': rows[-1], 'shift': model.shift}, arrays)


def _moran_start(mu0, m, n, rng):
    x = sample_measure(mu0, m, rng)
    return np.clip(np.rint(x * n).astype(int), 0, n)


def run_ibm_vs_limit(params, rng):
    """
    Wasserstein-1 distance at time t between the nested Moran empirical measure
    and the limit, for every size in `sizes` with paired replicate streams
    """
    model = build_model(params)
    mu0 = get_initial_measure(params['initial'], params['grid_size'])
    limit = evolve_limit_measure(mu0, model, params['t'], params['dt'])
    rows = []
    for r in range(params['replicates']):
        for m, n in params['sizes']:
            stream = rng.child(r).child(m)
            state = NestedMoranState.from_limit(model, _moran_start(mu0, m, n, stream), n)
            path = simulate_nested_moran(state, params['t'], stream, grid_size=params['grid_size'])
            rows.append({'replicate': r, 'm': m, 'n': n, 'w1': path.measures[-1].wasserstein1(limit),
                         'events': path.n_events, 'ancestries': ancestry_count(state, params['t'])})
    first, last = params['sizes'][0][0], params['sizes'][-1][0]
    by_rep = {}
    for row in rows:
        by_rep.setdefault(row['replicate'], {})[row['m']] = row['w1']
    decreasing = [d[last] < d[first] for d in by_rep.values()]
    summary = {'decreasing_fraction': float(np.mean(decreasing)),
               'mean_w1': {str(m): float(np.mean([row['w1'] for row in rows if row['m'] == m]))
                           for m, _ in params['sizes']}}
    return CellResult({'distances': rows}, summary)


def run_feynman_kac(params, rng):
    model = build_model(params)
    mu0 = get_initial_measure(params['initial'], params['grid_size'])
    f = TEST_FUNCTIONS[params['test_function']]
    mc = feynman_kac_estimate(mu0, model, params['t'], f, params['n_paths'], rng, params['dt'])
    pde = evolve_limit_measure(mu0, model, params['t']).integrate(f)
    summary = {'mc': mc.estimate, 'stderr': mc.stderr, 'ess': mc.ess, 'low_ess': mc.low_ess, 'pde': pde,
               'z': abs(mc.estimate - pde) / mc.stderr if mc.stderr > 0 else None,
               'within_3se': abs(mc.estimate - pde) <= 3 * mc.stderr}
    return CellResult({}, summary)


def run_qsd(params, rng):
    """
    QSD, regime and the classification of constant shifts of r
    """
    model = build_model(params)
    report = classify_regime(model, params['grid_size'], rng if params['exit_paths'] else None,
                             params['exit_paths'] or 10000)
    qsd = report.qsd
    centers = qsd.alpha.centers()
    rows = [{'x': float(x), 'alpha': float(a), 'eta': float(e), 'alpha_tilde': float(t)}
            for x, a, e, t in zip(centers, qsd.alpha.interior_density, qsd.eta, qsd.alpha_tilde)]
    shifts = []
    for c in params['shift_check']:
        shifted = PenalizedWFModel(model.s, model.sigma, model.penalty.shifted(c))
        shifts.append({'shift': c, 'regime': classify_regime(shifted, params['grid_size']).regime})
    summary = dict(report.to_dict(), qsd=qsd.to_dict(), shifts=shifts,
                   shift_invariant=all(row['regime'] == report.regime for row in shifts))
    return CellResult({'qsd': rows, 'shifts': shifts}, summary)


def run_threshold_scan(params, rng):
    scan = scan_threshold(build_model(params), params['scales'], params['grid_size'])
    summary = {'bracket': scan.bracket, 'one_sided': scan.one_sided, 'iterations': scan.iterations}
    return CellResult({'scan': scan.to_rows()}, summary)


def run_sigma_scan(params, rng):
    scan = scan_sigma(build_model(params), params['sigmas'], params['grid_size'])
    summary = {'boundary_min': scan.boundary_min, 'increasing': scan.increasing, 'exceeds_at': scan.exceeds_at}
    return CellResult({'scan': scan.to_rows()}, summary)


def run_truncation(params, rng):
    model = build_model(params)
    mu0 = get_initial_measure(params['initial'], params['grid_size'])
    rows = [truncation_experiment(mu0, model, threshold, params['t'], params['dt']).to_dict()
            for threshold in params['thresholds']]
    return CellResult({'truncation': rows}, {'outcomes': [row['outcome'] for row in rows]})


def run_relaxation(params, rng):
    model = build_model(params)
    mu0 = get_initial_measure(params['initial'], params['grid_size'])
    report = interior_relaxation(model, mu0, params['times'])
    rows = [{'t': float(t), 'tv': float(v)} for t, v in zip(report.times, report.tv)]
    return CellResult({'relaxation': rows}, {'fitted_rate': report.fitted_rate, 'zeta': report.zeta,
                                             'relative_error': report.relative_error()})


EXPERIMENTS = {
    'limit': run_limit,
    'ibm_vs_limit': run_ibm_vs_limit,
    'feynman_kac': run_feynman_kac,
    'qsd': run_qsd,
    'threshold_scan': run_threshold_scan,
    'sigma_scan': run_sigma_scan,
    'truncation': run_truncation,
    'relaxation': run_relaxation,
}


def run_cell(experiment, params, seed, cell_index):
    params = dict(DEFAULTS, **params)
    return EXPERIMENTS[experiment](params, RngStream(seed, cell_index))
