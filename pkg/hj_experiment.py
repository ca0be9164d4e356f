"""
Hamilton-Jacobi lab cells: discrete φ by events and by dynamic programming,
ε-sweeps of the discrete and continuous ε-systems, truncation.
"""
import numpy as np

from get_instances import get_continuous_model, get_discrete_model
from proj_models.hj_continuous import dominant_trait_path, phi_from_u, solve_u_eps_continuous, sup_distance_normalized
from proj_models.hj_discrete import (eps_distance, solve_phi_discrete, solve_u_eps_discrete, truncated_phi,
                                     variational_phi_discrete)
from proj_models.lotka_volterra import lv_equilibrium
from utils import CellResult, fit_linear_constant

DEFAULTS = {
    'model': {'name': 'three_state'},
    'T': 3.0,
    'n_points': 201,
    'check_times': [0.5, 1.0, 1.5, 2.5, 3.0],
    'eps': [0.1, 0.05, 0.02],
    'dt': None,
    'floors': [0.5, 1.0, 2.0],
    'record_every': 10,
}


def run_discrete_phi(params, rng):
    """
    event-driven φ against the dynamic programme under the same ψ̄ schedule
    and against the untruncated coupled programme
    """
    model = get_discrete_model(params['model'])
    solution = solve_phi_discrete(model, params['T'], params['n_points'])
    schedule = solution.schedule()
    dp_rows = []
    for t in params['check_times']:
        event = solution.phi_at(t) - solution.phi_at(t).max()
        dp = variational_phi_discrete(model, t, schedule=schedule, dt=params['dt'])
        finite = np.isfinite(event)
        dp_rows.append({'t': t, 'max_diff': float(np.max(np.abs(event[finite] - dp[finite])))})
    coupled = truncated_phi(model, params['T'], np.inf, params['dt'])
    coupled_final = coupled.phi[-1] - coupled.phi[-1].max()
    final = solution.phi_at(params['T'])
    finite = np.isfinite(final)
    states = list(model.states)
    initial = lv_equilibrium(model, np.flatnonzero(model.phi0() == 0))
    summary = dict(solution.events(states),
                   dp_max_diff=max(row['max_diff'] for row in dp_rows),
                   coupled_max_diff=float(np.max(np.abs(final[finite] - coupled_final[finite]))),
                   coupled_catastrophes=[float(t) for t in coupled.catastrophe_times],
                   initial_support=[states[k] for k in initial.support],
                   initial_resources=initial.resources.tolist())
    arrays = {'times': solution.times, 'phi': solution.phi, 'psi': solution.psi}
    return CellResult({'phi': solution.to_rows(states), 'dp_check': dp_rows}, summary, arrays)


def run_eps_sweep(params, rng):
    model = get_discrete_model(params['model'])
    solution = solve_phi_discrete(model, params['T'], params['n_points'])
    rows = []
    for eps in sorted(params['eps'], reverse=True):
        traj = solve_u_eps_discrete(model, eps, params['T'], params['dt'])
        rows.append({'eps': eps, 'distance': eps_distance(traj, solution), 'steps': len(traj.times) - 1,
                     'rejected_steps': traj.rejected_steps})
    distances = [row['distance'] for row in rows]
    constant, spread = fit_linear_constant([row['eps'] for row in rows], distances)
    summary = {'decreasing': bool(np.all(np.diff(distances) < 0)), 'fitted_constant': constant,
               'constant_spread': spread, 'catastrophe_times': [float(t) for t in solution.catastrophe_times]}
    return CellResult({'eps_sweep': rows}, summary)


def run_truncation(params, rng):
    model = get_discrete_model(params['model'])
    rows = []
    for floor in params['floors']:
        sol = truncated_phi(model, params['T'], floor, params['dt'])
        rows.append({'floor': floor, 'catastrophes': [float(t) for t in sol.catastrophe_times],
                     'final_support': list(sol.active_sets[-1][1]) if sol.active_sets else [],
                     'unreachable': sol.unreachable()})
    return CellResult({'truncation': rows}, {'floors': params['floors']})


def run_continuous(params, rng):
    """
    one run per ε on the same grid; distances between successive ε of the
    max-normalized exponents, and the dominant-trait front of every run
    """
    fields, rows, fronts = [], [], []
    for eps in sorted(params['eps'], reverse=True):
        model = get_continuous_model(params['model'], eps)
        field = solve_u_eps_continuous(model, params['T'], params['dt'] or 0.01, params['record_every'])
        front = dominant_trait_path(field)
        _, normalized = phi_from_u(field.u[-1:], eps)
        fields.append(field)
        fronts.extend({'eps': eps, 't': float(t), **{'x{}'.format(d): float(v) for d, v in enumerate(p)}}
                      for t, p in zip(field.times, front))
        rows.append({'eps': eps, 'final_psi': field.psi[-1].tolist(), 'final_front': front[-1].tolist(),
                     'phi_min': float(normalized.min())})
    for k in range(1, len(fields)):
        rows[k]['distance_to_previous'] = sup_distance_normalized(fields[k - 1], fields[k])
    arrays = {'eps_{}'.format(f.eps): f.u[-1] for f in fields}
    arrays['times'] = fields[-1].times
    return CellResult({'eps_runs': rows, 'fronts': fronts}, {'final_front': rows[-1]['final_front']}, arrays)


EXPERIMENTS = {
    'discrete_phi': run_discrete_phi,
    'eps_sweep': run_eps_sweep,
    'truncation': run_truncation,
    'continuous': run_continuous,
}


def run_cell(experiment, params, seed, cell_index):
    # deterministic lab; the seed only names the cell
    params = dict(DEFAULTS, **params)
    return EXPERIMENTS[experiment](params, None)
