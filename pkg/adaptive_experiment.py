"""
Adaptive-dynamics lab cells: the individual-based model, TSS, substitution
Fleming-Viot process, CEAD and their comparisons.
"""
import numpy as np
from scipy import stats

from get_instances import get_ecology, get_regime
from proj_models import adaptive_dynamics as ad
from proj_models.fleming_viot import simulate_sfvp, stationary_marker_law
from proj_models.kernel import RngStream
from utils import CellResult

DEFAULTS = {
    'ecology': {'name': 'linear', 'box': [0.0, 10.0]},
    'regime': {'K': 200, 'sigma_K': 1.0, 'p_K': 1e-3},
    'x0': 0.0,
    'u0': 0,
    'T': 5.0,
    'replicates': 20,
    'N_FV': 100,
    'sigma': 1.0,
    'sigmas': [0.1, 0.05],
    'record_dt': None,
    'n0': None,
    'cead_check': False,
    'grid': 41,
}


def run_ibm(params, rng):
    eco, regime = get_ecology(params['ecology']), get_regime(params['regime'])
    path = ad.simulate_ibm(eco, regime, params['x0'], params['u0'], params['T'], rng, n0=params['n0'],
                           record_dt=params['record_dt'])
    rows = [{'t': float(t), 'size': float(n), 'dominant': float(x)}
            for t, n, x in zip(path.times, path.sizes, path.dominant)]
    summary = {'time_average': path.time_average, 'extinct': path.extinct, 'events': path.n_events,
               'sweep_time': path.sweep_time, 'sweep_trait': path.sweep_trait, 'regime': regime.report()}
    if eco.strict:
        n_hat = eco.n_hat(params['x0'])
        summary['n_hat'] = n_hat
        summary['relative_error'] = abs(path.time_average - n_hat) / n_hat
    return CellResult({'ibm': rows}, summary)


def run_tss(params, rng):
    """
    jump logs of independent replicates; the first jump times are tested
    against the exponential law of the total TSS rate at x0
    """
    eco = get_ecology(params['ecology'])
    rows, first = [], []
    for r in range(params['replicates']):
        state = ad.simulate_tss(eco, params['x0'], params['T'], rng.child(r), params['sigma'])
        rows.extend(dict(row, replicate=r) for row in state.to_rows())
        if state.jumps:
            first.append(state.jumps[0][0])
    total = float(ad.tss_jump_rates(eco, params['x0'], params['sigma']).sum())
    summary = {'total_rate': total, 'horizon': params['T'], 'jumps': len(rows),
               'gate_holds': all(row['fitness'] > 0 for row in rows)}
    if total > 0 and first:
        censor = 1.0 - np.exp(-total * params['T'])
        ks = stats.kstest(first, lambda s: (1.0 - np.exp(-total * np.asarray(s))) / censor)
        summary['ks_first_jump'] = float(ks.statistic)
        summary['ks_pvalue'] = float(ks.pvalue)
    return CellResult({'jumps': rows}, summary)


def run_sfvp(params, rng):
    eco = get_ecology(params['ecology'])
    path = simulate_sfvp(eco, params['x0'], params['u0'], params['T'], params['N_FV'], rng, params['sigma'],
                         params['record_dt'])
    summary = {'collapses': [{'t': t, 'marker': int(u)} for t, u in path.collapses],
               'time_average': path.time_average().tolist(),
               'stationary': stationary_marker_law(eco.marker_generator).tolist(),
               'final_trait': path.tss.trait}
    return CellResult({'weights': path.to_rows(eco.markers), 'jumps': path.tss.to_rows()}, summary)


def run_cead(params, rng):
    eco = get_ecology(params['ecology'])
    path = ad.integrate_cead(eco, params['x0'], params['T'])
    rows = [{'t': float(t), 'trait': float(x)} for t, x in zip(path.times, path.traits)]
    summary = {'singular': path.singular, 'singular_time': path.singular_time, 'final_trait': float(path.traits[-1]),
               'nondecreasing': bool(np.all(np.diff(path.traits) >= -1e-12))}
    return CellResult({'cead': rows}, summary)


def run_multiscale(params, rng):
    eco, regime = get_ecology(params['ecology']), get_regime(params['regime'])
    report, times = ad.multiscale_compare(eco, regime, params['x0'], params['T'], params['replicates'], rng,
                                          params['u0'], cead=params['cead_check'])
    return CellResult({'first_sweeps': [{'t': float(t)} for t in times]}, report)


def run_tss_cead(params, rng):
    eco = get_ecology(params['ecology'])
    rows = ad.tss_cead_distance(eco, params['x0'], params['T'], params['sigmas'], params['replicates'], rng)
    distances = [row['distance'] for row in rows]
    return CellResult({'tss_cead': rows}, {'decreasing': bool(np.all(np.diff(distances) < 0))})


def run_fixation_scan(params, rng):
    eco = get_ecology(params['ecology'])
    pairs = ad.find_fixation_violations(eco, params['grid'])
    return CellResult({'violations': [{'x': x, 'y': y} for x, y in pairs]}, {'violations': len(pairs)})


EXPERIMENTS = {
    'ibm': run_ibm,
    'tss': run_tss,
    'sfvp': run_sfvp,
    'cead': run_cead,
    'multiscale': run_multiscale,
    'tss_cead': run_tss_cead,
    'fixation_scan': run_fixation_scan,
}


def run_cell(experiment, params, seed, cell_index):
    params = dict(DEFAULTS, **params)
    return EXPERIMENTS[experiment](params, RngStream(seed, cell_index))
