import os, shutil
from functools import partial

import numpy as np

def get_dirs(workspace, config_name, remake=False):
    #if path already exists, remove and make it again.
    run_dir = os.path.join(workspace, config_name)
    if remake:
        if os.path.exists(run_dir): shutil.rmtree(run_dir)

    cells_dir = os.path.join(run_dir, 'cells')
    os.makedirs(cells_dir, exist_ok=True)

    log_dir = os.path.join(run_dir, 'log.txt')

    return run_dir, cells_dir, log_dir

def get_experiment(lab):
    if lab == 'branching':
        import branching_experiment as experiment
    elif lab == 'group_selection':
        import group_selection_experiment as experiment
    elif lab == 'hj':
        import hj_experiment as experiment
    elif lab == 'adaptive_dynamics':
        import adaptive_experiment as experiment
    else:
        raise ValueError('unknown lab {}'.format(lab))
    return experiment

#group selection ======================

def get_penalty(penalty_params):
    from proj_models.group_selection import Penalty
    params = dict(penalty_params or {})
    if params.get('values') is not None:
        params['values'] = tuple(params['values'])
    return Penalty(**params)

def get_initial_measure(initial_params, grid_size):
    from proj_models.group_selection import GridMeasure
    from scipy import stats
    params = dict(initial_params or {'kind': 'uniform'})
    kind = params.pop('kind')
    if kind == 'uniform':
        return GridMeasure.from_density(np.ones_like, grid_size)
    if kind == 'beta':
        return GridMeasure.from_density(partial(stats.beta.pdf, a=params['a'], b=params['b']), grid_size)
    if kind == 'atoms':
        return GridMeasure.atoms(params['u0'], params['u1'], grid_size)
    if kind == 'tabulated':
        table = np.asarray(params['values'], dtype=float)
        return GridMeasure.from_density(lambda x: np.interp(x, np.linspace(0, 1, len(table)), table), grid_size,
                                        params.get('atom0', 0.0), params.get('atom1', 0.0))
    raise ValueError('unknown initial measure {}'.format(kind))

#branching ======================

def get_birth_family(birth_params):
    from proj_models.estimators import ParametricBirthFamily
    theta = tuple(birth_params['theta'])
    lower = tuple(birth_params.get('lower', [1e-3] * len(theta)))
    upper = tuple(birth_params.get('upper', [1e3] * len(theta)))
    return ParametricBirthFamily(birth_params['name'], theta, lower, upper)

def get_fragmentation(fragmentation_params):
    from proj_models.branching import FragmentationKernel
    return FragmentationKernel(**(fragmentation_params or {}))

def get_keep_bias(bias_params):
    # keep probability p0 + slope * trait, clipped to [0, 1] by the simulator
    if not bias_params:
        return None
    from proj_models.adaptive_dynamics import affine_fn
    return partial(affine_fn, intercept=bias_params['p0'], slope=bias_params['slope'])

def get_optimizer(optim_name, optim_params):
    import torch.optim as optim
    getattr(optim, optim_name)  # fails early on an unknown optimizer name
    return optim_name, dict(optim_params or {})

#adaptive dynamics ======================

def _marker_generator(n_markers, marker_rate, marker_generator):
    if marker_generator is not None:
        return np.asarray(marker_generator, dtype=float)
    gen = np.full((n_markers, n_markers), marker_rate / max(n_markers - 1, 1))
    np.fill_diagonal(gen, -marker_rate)
    return gen

def get_ecology(ecology_params):
    """
    named ecologies:
        linear     b = 1 + x, d = 0, η = C = 1, so f(y, x) = y - x
        peak       b = top - curvature (x - center)^2, d = death, η = C = 1
        hump       b = 2 - x^2 on [-1, 1], C = 1 (non-monotone n̂)
        gaussian   b = top - curvature (x - center)^2, C gaussian of width
        yule       b constant, d = 0, η = 0 (unchecked)
        subcritical  b < d constants (unchecked)
    """
    from proj_models import adaptive_dynamics as ad
    params = dict(ecology_params)
    name = params.pop('name')
    n_markers = int(params.pop('n_markers', 2))
    common = dict(
        steps=tuple(params.pop('steps', (-1, 1))),
        step_probs=tuple(params.pop('step_probs', (0.5, 0.5))),
        markers=tuple(range(n_markers)),
        marker_generator=_marker_generator(n_markers, params.pop('marker_rate', 0.0),
                                           params.pop('marker_generator', None)),
        box=tuple(params.pop('box', (0.0, 1.0))),
    )
    if 'modulator' in params:
        common['modulator'] = partial(ad.constant_fn, value=params.pop('modulator'))
    one = partial(ad.constant_fn, value=1.0)
    zero = partial(ad.constant_fn, value=0.0)

    if name == 'linear':
        return ad.EcologySpec(partial(ad.affine_fn, intercept=1.0, slope=1.0), zero, one, one,
                              d1f=partial(ad.constant_fn, value=1.0), **common)
    if name == 'peak':
        birth = partial(ad.hump_fn, top=params['top'], curvature=params['curvature'], center=params['center'])
        return ad.EcologySpec(birth, partial(ad.constant_fn, value=params.get('death', 0.0)), one, one, **common)
    if name == 'hump':
        common['box'] = tuple(ecology_params.get('box', (-1.0, 1.0)))
        return ad.EcologySpec(partial(ad.hump_fn, top=2.0, curvature=1.0, center=0.0), zero, one, one, **common)
    if name == 'gaussian':
        birth = partial(ad.hump_fn, top=params['top'], curvature=params['curvature'], center=params['center'])
        return ad.EcologySpec(birth, zero, one, partial(ad.gaussian_kernel_fn, width=params['width']), **common)
    if name == 'yule':
        return ad.EcologySpec(partial(ad.constant_fn, value=params['birth']), zero, zero, one, strict=False,
                              **common)
    if name == 'subcritical':
        return ad.EcologySpec(partial(ad.constant_fn, value=params['birth']),
                              partial(ad.constant_fn, value=params['death']), one, one, strict=False, **common)
    raise ValueError('unknown ecology {}'.format(name))

def get_regime(regime_params):
    from proj_models.adaptive_dynamics import ScalingRegime
    return ScalingRegime(**regime_params)

#Hamilton-Jacobi ======================

def get_discrete_model(model_params):
    """
    'three_state': one resource, a = (1, 1.5, 2), h = (0, 0.5, 1.5), mutation
    cost 1.5 per step, catastrophes at t = 1 and t = 2; up to t = 3 every trait
    stays above its best mutation route, so no value is carried by mutations.
    'two_state': resident x1 at equilibrium, invader x0 with a = 1.5 and
    h0 = 0.5, catastrophe at h0 / g = 1. 'custom': arrays given in full
    """
    from proj_models.lotka_volterra import DiscreteTraitModel
    params = dict(model_params)
    name = params.pop('name')
    if name == 'three_state':
        idx = np.arange(3)
        return DiscreteTraitModel(states=('x0', 'x1', 'x2'),
                                  cost=params.get('step_cost', 1.5) * np.abs(idx[:, None] - idx[None, :]),
                                  growth_rate=np.array(params.get('growth_rate', [1.0, 1.5, 2.0])),
                                  slopes=np.ones((3, 1)), kernels=np.ones((1, 3)),
                                  h=np.array(params.get('h', [0.0, 0.5, 1.5])), name=name)
    if name == 'two_state':
        return DiscreteTraitModel(states=('x0', 'x1'), cost=params.get('step_cost', 5.0) * (1.0 - np.eye(2)),
                                  growth_rate=np.array(params.get('growth_rate', [1.5, 1.0])),
                                  slopes=np.ones((2, 1)), kernels=np.ones((1, 2)),
                                  h=np.array([params.get('h0', 0.5), 0.0]), name=name)
    if name == 'custom':
        cost = np.array([[np.inf if c is None else c for c in row] for row in params['cost']], dtype=float)
        return DiscreteTraitModel(states=tuple(params['states']), cost=cost, growth_rate=params['growth_rate'],
                                  slopes=params['slopes'], kernels=params['kernels'], h=params['h'],
                                  slope_bound=params.get('slope_bound', 10.0), name=name)
    raise ValueError('unknown discrete model {}'.format(name))

def get_continuous_model(model_params, eps):
    """
    'quadratic': a(x) = offset - curvature |x - center|^2, one resource with a
    constant kernel, h = |x - start|^2; 'heat': no reaction (unchecked)
    """
    from proj_models import hj_continuous as hc
    params = dict(model_params)
    name = params.pop('name')
    box = tuple(tuple(b) for b in params['box'])
    dim = len(box)
    start = params.get('start', [0.0] * dim)
    h = partial(hc.quadratic_fn, offset=0.0, curvature=-params.get('h_curvature', 1.0), center=start)
    common = dict(eps=eps, box=box, n_points=params.get('n_points', 101), h=h,
                  boundary=params.get('boundary', 'periodic'),
                  psi_box=tuple(params['psi_box']) if params.get('psi_box') else None)
    if name == 'quadratic':
        growth = partial(hc.quadratic_fn, offset=params.get('offset', 1.0), curvature=params.get('curvature', 1.0),
                         center=params.get('center', [0.0] * dim))
        return hc.ContinuousHJModel(growth_rate=growth, slopes=(1.0,), kernels=(partial(hc.constant_fn, value=1.0),),
                                    **common)
    if name == 'heat':
        return hc.ContinuousHJModel(growth_rate=partial(hc.constant_fn, value=0.0), slopes=(0.0,),
                                    kernels=(partial(hc.constant_fn, value=1.0),), strict=False, **common)
    raise ValueError('unknown continuous model {}'.format(name))

#report ======================

def get_summary_fs(experiment_names):
    summary_fs = {}
    for experiment_name in experiment_names:
        if experiment_name in ('tree_mean_variance', 'estimator_rates', 'eps_sweep', 'tss_cead', 'ibm_vs_limit'):
            from report import slope_rows
            summary_f = slope_rows
        elif experiment_name in ('multiscale', 'tss'):
            from report import ks_rows
            summary_f = ks_rows
        elif experiment_name in ('qsd', 'threshold_scan'):
            from report import regime_rows
            summary_f = regime_rows
        else:
            from report import summary_row
            summary_f = summary_row

        summary_fs[experiment_name] = summary_f
    return summary_fs
