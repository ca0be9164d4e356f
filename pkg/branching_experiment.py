"""
Branching lab cells: lineage trees, tree means, kernel estimators and the
division-rate MLE.
"""
import numpy as np
from scipy import integrate, stats

from get_instances import get_birth_family, get_fragmentation, get_keep_bias, get_optimizer
from proj_models.branching import BranchingSpec, simulate_tree, with_generations
from proj_models.estimators import KernelEstimatorConfig, estimate_nu, estimate_q, mle_birth_rate, tree_mean
from proj_models.kernel import DiffusionSpec, RngStream
from utils import CellResult, loglog_slope

DEFAULTS = {
    'generations': 10,
    'keep_rule': 'full',
    'keep_probability': 1.0,
    'keep_bias': None,
    'birth': {'name': 'affine', 'theta': [0.5, 1.0]},
    'birth_bound': 10.0,
    'drift': 1.0,
    'noise': 0.1,
    'fragmentation': {'kind': 'beta', 'a': 2.0, 'b': 2.0},
    'transition': 'fragmentation',
    'resample_law': [2.0, 2.0],
    'root_trait': 1.0,
    'dt': 0.01,
    'replicates': 20,
    'generations_list': [6, 8, 10],
    'holder': [1.0, 1.0],
    'kernel_order': 2,
    'window': [0.05, 0.95],
    'grid_size': 91,
    'optimizer': {'name': 'LBFGS', 'params': {}},
    'level': 0.95,
}


def build_spec(params, record_paths=False):
    family = get_birth_family(params['birth'])
    flow = DiffusionSpec.constant(params['drift'], params['noise'], (0.0, np.inf), 'reflect')
    return BranchingSpec(trait_flow=flow, birth_rate=family.rate_fn(family.theta0),
                         birth_rate_bound=params['birth_bound'],
                         fragmentation=get_fragmentation(params['fragmentation']),
                         generations=params['generations'], keep_rule=params['keep_rule'],
                         keep_probability=params['keep_probability'], root_trait=params['root_trait'],
                         transition=params['transition'], resample_law=tuple(params['resample_law']),
                         keep_bias=get_keep_bias(params['keep_bias']), dt=params['dt'], record_paths=record_paths)


def run_tree(params, rng):
    spec = build_spec(params)
    tree = simulate_tree(spec, rng)
    median = np.median(tree.trait_at_birth[tree.parent_ids >= 0]) if len(tree) > 1 else np.nan
    sizes, ratios = tree.generation_sizes(), tree.generation_ratios()
    summary = {
        'n_nodes': len(tree),
        'growth_exponent': tree.growth_exponent,
        'mean_lifetime': float(tree.lifetimes().mean()),
        'below_median_fraction': tree_mean(tree, lambda x, y: (y <= median).astype(float)) if len(tree) > 1 else None,
        'keep_bias': params['keep_bias'] is not None,
    }
    generations = [{'generation': g, 'size': int(n), 'ratio': float(r)} for g, (n, r) in enumerate(zip(sizes, ratios))]
    return CellResult({'nodes': tree.to_rows(), 'generations': generations}, summary)


def run_tree_mean_variance(params, rng):
    rows = []
    base = build_spec(params)
    for g in params['generations_list']:
        spec = with_generations(base, g)
        means, nodes = [], []
        for r in range(params['replicates']):
            tree = simulate_tree(spec, rng.child(g).child(r))
            means.append(tree_mean(tree, lambda x, y: y))
            nodes.append(len(tree))
        rows.append({'generations': g, 'nodes': float(np.mean(nodes)), 'variance': float(np.var(means, ddof=1))})
    slope, _ = loglog_slope([row['nodes'] for row in rows], [row['variance'] for row in rows])
    return CellResult({'rates': rows}, {'slope': slope, 'target_slope': -1.0})


def run_estimator_rates(params, rng):
    """
    RMSE of ν̂ and q̂ under independent Beta resampling, where ν and every row
    of q are the Beta density
    """
    params = dict(params, transition='resample')
    base = build_spec(params)
    law = stats.beta(*params['resample_law'])
    rows = []
    for g in params['generations_list']:
        spec = with_generations(base, g)
        err_nu, err_q, nodes = [], [], []
        for r in range(params['replicates']):
            tree = simulate_tree(spec, rng.child(g).child(r))
            cfg = KernelEstimatorConfig.default(len(tree), holder=tuple(params['holder']),
                                                kernel_order=params['kernel_order'], window=tuple(params['window']),
                                                grid_size=params['grid_size'])
            truth = law.pdf(cfg.grid())
            truth_nu = truth / integrate.trapezoid(truth, cfg.grid())
            nu = estimate_nu(tree, cfg)
            q = estimate_q(tree, cfg)
            err_nu.append(np.mean((nu.density - truth_nu) ** 2))
            err_q.append(np.mean((q.values - truth[None, :]) ** 2))
            nodes.append(len(tree))
        rows.append({'generations': g, 'nodes': float(np.mean(nodes)), 'rmse_nu': float(np.sqrt(np.mean(err_nu))),
                     'rmse_q': float(np.sqrt(np.mean(err_q)))})
    n = [row['nodes'] for row in rows]
    alpha, beta = params['holder']
    s = 1.0 / (1.0 / min(alpha, beta) + 1.0 / beta)
    summary = {'slope_nu': loglog_slope(n, [row['rmse_nu'] for row in rows])[0],
               'slope_q': loglog_slope(n, [row['rmse_q'] for row in rows])[0],
               'target_slope_nu': -beta / (2 * beta + 1), 'target_slope_q': -s / (2 * s + 1)}
    return CellResult({'rates': rows}, summary)


def run_mle(params, rng):
    """
    coverage of the Wald intervals and their width ratio between the first and
    last tree size of generations_list
    """
    base = build_spec(params, record_paths=True)
    family = get_birth_family(params['birth'])
    optim_name, optim_params = get_optimizer(params['optimizer']['name'], params['optimizer'].get('params'))
    truth = np.asarray(family.theta0)
    rows, fisher = [], []
    for g in params['generations_list']:
        spec = with_generations(base, g)
        for r in range(params['replicates']):
            tree = simulate_tree(spec, rng.child(g).child(r))
            fit = mle_birth_rate(tree, family, optim_name, optim_params)
            lo, hi = fit.confidence_interval(params['level'])
            row = {'generations': g, 'replicate': r, 'n_edges': fit.n_edges}
            for k in range(family.dim):
                row['theta_{}'.format(k)] = float(fit.theta[k])
                row['se_{}'.format(k)] = float(fit.standard_errors()[k])
                row['covered_{}'.format(k)] = int(lo[k] <= truth[k] <= hi[k])
                row['z_{}'.format(k)] = float((fit.theta[k] - truth[k]) / fit.standard_errors()[k])
            rows.append(row)
            fisher.append(fit.fisher_per_node)

    summary = {'level': params['level'], 'theta_true': truth.tolist(),
               'fisher_per_node': np.mean(fisher, axis=0).tolist()}
    first, last = params['generations_list'][0], params['generations_list'][-1]
    for k in range(family.dim):
        covered = [row['covered_{}'.format(k)] for row in rows]
        z = [row['z_{}'.format(k)] for row in rows]
        summary['coverage_{}'.format(k)] = float(np.mean(covered))
        summary['normality_pvalue_{}'.format(k)] = float(stats.shapiro(z).pvalue) if len(z) >= 3 else None
        width = {g: np.mean([row['se_{}'.format(k)] for row in rows if row['generations'] == g]) for g in (first, last)}
        summary['width_ratio_{}'.format(k)] = float(width[first] / width[last])
    return CellResult({'fits': rows}, summary)


EXPERIMENTS = {
    'tree': run_tree,
    'tree_mean_variance': run_tree_mean_variance,
    'estimator_rates': run_estimator_rates,
    'mle': run_mle,
}


def run_cell(experiment, params, seed, cell_index):
    params = dict(DEFAULTS, **params)
    return EXPERIMENTS[experiment](params, RngStream(seed, cell_index))
