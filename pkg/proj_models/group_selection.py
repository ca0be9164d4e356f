"""
Two-level selection: a nested Moran process (individuals of type C or D inside
m groups of size n, groups replacing each other) and its large-population
limit, a Wright-Fisher diffusion of the C-proportion penalized by a group-level
rate r.

Measures on [0, 1] are GridMeasures: atoms at 0 and 1 plus a density on a
uniform grid of the interior. The limit equation is advanced with a
Chang-Cooper finite-volume scheme whose boundary fluxes feed the atoms.
"""
import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from proj_models.errors import ParameterError
from proj_models.kernel import (DiffusionSpec, EventRateTable, RngStream, calibrate_time_step, gillespie_step,
                                sample_index, sde_step)

log = logging.getLogger(__name__)

MASS_TOL = 1e-8


#penalties ======================
@dataclass(frozen=True)
class Penalty:
    """
    group-level rate r on [0, 1], multiplied by `scale` and shifted by `offset`

    :kind: 'zero', 'constant', 'favour_c' (r = -(1-x)), 'favour_d' (r = -x),
        'bump' (r = 4x(1-x) + tilt*x, strict interior maximum) or 'tabulated'
        (values on a uniform grid of [0, 1], linear interpolation)
    """
    kind: str = 'zero'
    scale: float = 1.0
    offset: float = 0.0
    tilt: float = 0.0
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ('zero', 'constant', 'favour_c', 'favour_d', 'bump', 'tabulated'):
            raise ParameterError('unknown penalty {}'.format(self.kind))
        if self.kind == 'tabulated' and (self.values is None or len(self.values) < 2):
            raise ParameterError('tabulated penalty needs at least two values')

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ('zero', 'constant'):
            base = np.ones_like(x) if self.kind == 'constant' else np.zeros_like(x)
        elif self.kind == 'favour_c':
            base = -(1.0 - x)
        elif self.kind == 'favour_d':
            base = -x
        elif self.kind == 'bump':
            base = 4.0 * x * (1.0 - x) + self.tilt * x
        else:
            table = np.asarray(self.values, dtype=float)
            base = np.interp(x, np.linspace(0.0, 1.0, len(table)), table)
        return self.scale * base + self.offset

    def scaled(self, factor):
        return replace(self, scale=self.scale * factor)

    def shifted(self, c):
        return replace(self, offset=self.offset + c)


@dataclass(frozen=True)
class PenalizedWFModel:
    """
    dX = -s X(1-X) dt + σ sqrt(X(1-X)) dW killed at rate -r(X)

    r is shifted down by max(0, max r) so that it is nonpositive; reported
    rates ρ_0 = -r(0), ρ_1 = -r(1) are taken after the shift.
    """
    s: float
    sigma: float
    penalty: Callable = field(default_factory=Penalty)
    shift: float = field(init=False)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterError('sigma must be positive')
        values = np.asarray(self.penalty(np.linspace(0.0, 1.0, 4001)), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ParameterError('penalty must be finite on [0, 1]')
        object.__setattr__(self, 'shift', max(0.0, float(values.max())))

    def r(self, x):
        return np.asarray(self.penalty(x), dtype=float) - self.shift

    @property
    def rho0(self):
        return float(-self.r(0.0))

    @property
    def rho1(self):
        return float(-self.r(1.0))

    def diffusion(self):
        return DiffusionSpec.wright_fisher(self.s, self.sigma)

    def scaled(self, factor):
        return replace(self, penalty=self.penalty.scaled(factor))

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)


#grid measures ======================
@dataclass(frozen=True)
class GridMeasure:
    """
    μ = atom0 δ_0 + atom1 δ_1 + density(x) dx, density given at the centers of
    grid_size equal cells of (0, 1)
    """
    atom0: float
    atom1: float
    interior_density: np.ndarray

    def __post_init__(self):
        density = np.asarray(self.interior_density, dtype=float)
        object.__setattr__(self, 'interior_density', density)
        if density.ndim != 1 or density.size < 1:
            raise ParameterError('interior density must be a nonempty vector')
        if self.atom0 < 0 or self.atom1 < 0 or np.any(density < 0):
            raise ParameterError('measure has negative components')
        if abs(self.total_mass() - 1.0) > MASS_TOL:
            raise ParameterError('measure has mass {}'.format(self.total_mass()))

    @property
    def grid_size(self):
        return self.interior_density.size

    @property
    def h(self):
        return 1.0 / self.grid_size

    def centers(self):
        return (np.arange(self.grid_size) + 0.5) * self.h

    def interior_mass(self):
        return float(self.interior_density.sum() * self.h)

    def total_mass(self):
        return self.atom0 + self.atom1 + self.interior_mass()

    def integrate(self, f):
        return float(self.atom0 * f(0.0) + self.atom1 * f(1.0)
                     + self.h * np.sum(self.interior_density * f(self.centers())))

    def moments(self):
        mean = self.integrate(lambda x: x)
        return mean, self.integrate(lambda x: x**2) - mean**2

    def conditioned_interior(self):
        mass = self.interior_mass()
        return self.interior_density / mass if mass > 0 else np.zeros(self.grid_size)

    def cdf(self, x):
        edges = np.arange(self.grid_size + 1) * self.h
        values = self.atom0 + np.concatenate([[0.0], np.cumsum(self.interior_density) * self.h])
        return np.interp(x, edges, values)

    def wasserstein1(self, other: 'GridMeasure', resolution=20000):
        # ∫ |F - G| over [0, 1]; atoms at 1 sit beyond every interior point
        x = (np.arange(resolution) + 0.5) / resolution
        return float(np.mean(np.abs(self.cdf(x) - other.cdf(x))))

    def to_row(self, t):
        mean, var = self.moments()
        return {'t': t, 'x0': self.atom0, 'x1': self.atom1, 'x_interior': self.interior_mass(),
                'mean': mean, 'var': var}

    #constructors
    @classmethod
    def from_masses(cls, atom0, atom1, cell_masses):
        cell_masses = np.asarray(cell_masses, dtype=float)
        total = atom0 + atom1 + cell_masses.sum()
        return cls(atom0 / total, atom1 / total, cell_masses / total * cell_masses.size)

    @classmethod
    def atoms(cls, u0, u1, grid_size):
        return cls.from_masses(u0, u1, np.zeros(grid_size))

    @classmethod
    def from_density(cls, f, grid_size, atom0=0.0, atom1=0.0):
        centers = (np.arange(grid_size) + 0.5) / grid_size
        cells = np.maximum(np.asarray(f(centers), dtype=float), 0.0)
        cells = cells / cells.sum() * (1.0 - atom0 - atom1)
        return cls.from_masses(atom0, atom1, cells)

    @classmethod
    def from_samples(cls, x, grid_size):
        x = np.asarray(x, dtype=float)
        n = x.size
        at0 = np.count_nonzero(x <= 0.0)
        at1 = np.count_nonzero(x >= 1.0)
        inner = x[(x > 0.0) & (x < 1.0)]
        cells = np.bincount(np.minimum((inner * grid_size).astype(int), grid_size - 1), minlength=grid_size)
        return cls.from_masses(at0 / n, at1 / n, cells / n)


#nested Moran process ======================
@dataclass(frozen=True)
class NestedMoranState:
    """
    :group_counts: number of C individuals in each of the m groups
    :r: group-level selection on the C-proportion, 1 + r must stay >= 0
    """
    group_counts: np.ndarray
    n: int
    w_I: float
    w_G: float
    s: float
    r: Callable = field(default_factory=Penalty)

    def __post_init__(self):
        counts = np.asarray(self.group_counts, dtype=int)
        object.__setattr__(self, 'group_counts', counts)
        if self.n < 1 or counts.size < 1:
            raise ParameterError('need m, n >= 1')
        if np.any(counts < 0) or np.any(counts > self.n):
            raise ParameterError('group counts must lie in [0, n]')
        if min(self.w_I, self.w_G, self.s) < 0:
            raise ParameterError('w_I, w_G and s must be nonnegative')
        if np.any(1.0 + np.asarray(self.r(np.arange(self.n + 1) / self.n)) < 0):
            raise ParameterError('group replacement rates 1 + r must be nonnegative')

    @property
    def m(self):
        return self.group_counts.size

    def occupancy(self):
        return np.bincount(self.group_counts, minlength=self.n + 1)

    @classmethod
    def from_limit(cls, model: PenalizedWFModel, group_counts, n):
        """
        individual and group rates whose large (m, n) limit is `model`:
        σ² = w_I (2 + s_I) / n, drift coefficient w_I s_I, penalty w_G r_G
        """
        s_lim, sigma2 = model.s, model.sigma**2
        w_I = 0.5 * (n * sigma2 - s_lim)
        if w_I <= 0:
            raise ParameterError('n = {} too small for sigma = {} and s = {}'.format(n, model.sigma, s_lim))
        depth = max(1.0, float(-model.r(np.linspace(0.0, 1.0, 4001)).min()))
        return cls(group_counts, n, w_I, depth, s_lim / w_I, partial(_scaled_penalty, model=model, factor=1.0 / depth))


def _scaled_penalty(x, model, factor):
    return factor * model.r(x)


def propensity_tables(state: NestedMoranState):
    """
    full rate tables over levels i, j in {0..n}:
    (down[i], up[i], group[i, j]) with group[i, j] the rate at which some group at
    level i is replaced by a copy of a group at level j
    """
    n, m = state.n, state.m
    c = state.occupancy().astype(float)
    levels = np.arange(n + 1)
    flux = state.w_I * levels * (1.0 - levels / n)
    down = c * flux * (1.0 + state.s)
    up = c * flux
    v = c / m
    fitness = 1.0 + np.asarray(state.r(levels / n), dtype=float)
    group = state.w_G * m * np.outer(v, v * fitness)
    return down, up, group


@dataclass
class MoranPath:
    times: list
    measures: list
    final_counts: np.ndarray
    n_events: int


def simulate_nested_moran(state: NestedMoranState, horizon, rng: RngStream, snapshot_times=None,
                          grid_size=None) -> MoranPath:
    """
    exact simulation on level occupancies; group events i -> j with i != j are
    drawn by level (receiving level, then donor level), events i -> i change
    nothing and are skipped
    """
    if horizon <= 0:
        raise ParameterError('horizon must be positive')
    n, m = state.n, state.m
    grid_size = grid_size or n
    snapshot_times = sorted(snapshot_times) if snapshot_times is not None else [0.0, horizon]
    levels = np.arange(n + 1)
    flux = state.w_I * levels * (1.0 - levels / n)
    fitness = 1.0 + np.asarray(state.r(levels / n), dtype=float)
    c = state.occupancy().astype(np.int64)

    def snapshot():
        return GridMeasure.from_samples(np.repeat(levels / n, c), grid_size)

    times, measures = [], []
    pending = list(snapshot_times)
    t, n_events = 0.0, 0
    while pending:
        down = c * flux * (1.0 + state.s)
        up = c * flux
        weighted = c * fitness
        total_weighted = weighted.sum()
        receive = c * (total_weighted - weighted)
        group_total = state.w_G * receive.sum() / m
        table = EventRateTable(np.array([down.sum(), up.sum(), group_total]))
        if table.total <= 0:
            wait = np.inf
        else:
            kind, wait = gillespie_step(table, rng)
        while pending and pending[0] <= min(t + wait, horizon):
            times.append(pending.pop(0))
            measures.append(snapshot())
        t += wait
        if t > horizon or not pending:
            break
        n_events += 1
        if kind == 0:
            i = sample_index(down, rng)
            c[i] -= 1
            c[i - 1] += 1
        elif kind == 1:
            i = sample_index(up, rng)
            c[i] -= 1
            c[i + 1] += 1
        else:
            i = sample_index(receive, rng)
            donors = weighted.copy()
            donors[i] = 0.0
            j = sample_index(donors, rng)
            c[i] -= 1
            c[j] += 1
    return MoranPath(times, measures, np.repeat(levels, c), n_events)


def ancestry_count(state: NestedMoranState, horizon):
    """
    expected number of times a given group is replaced over the horizon; a
    validity diagnostic of the group-level limit (around 20 is comfortable)
    """
    levels = np.arange(state.n + 1)
    fitness = 1.0 + np.asarray(state.r(levels / state.n), dtype=float)
    v = state.occupancy() / state.m
    return float(state.w_G * horizon * np.sum(v * fitness))


#limit equation ======================
def _bernoulli(w):
    # w / (e^w - 1), equal to 1 at w = 0
    w = np.asarray(w, dtype=float)
    small = np.abs(w) < 1e-8
    safe = np.where(small, 1.0, w)
    return np.where(small, 1.0 - w / 2, safe / np.expm1(safe))


def fokker_planck_operator(model: PenalizedWFModel, grid_size):
    """
    tridiagonal Chang-Cooper discretization of the adjoint WF generator on the
    interior cells; returns (lower, diag, upper, outflow) with
    dp_k/dt = lower_k p_{k-1} + diag_k p_k + upper_k p_{k+1}
    and outflow the flux per unit density from the first (last) cell into the
    atom at 0 (1)
    """
    h = 1.0 / grid_size
    half_sigma2 = 0.5 * model.sigma**2
    faces = np.arange(1, grid_size) * h
    diffusion = half_sigma2 * faces * (1.0 - faces)
    advection = half_sigma2 * (1.0 - 2.0 * faces) + model.s * faces * (1.0 - faces)
    # the flux is -(D p)' - s x(1-x) p; advection is minus its velocity
    w = h * advection / diffusion
    # rates across face k+1/2 per unit density of the source cell
    rightward = diffusion / h * _bernoulli(w)
    leftward = diffusion / h * _bernoulli(-w)

    lower = np.zeros(grid_size)
    diag = np.zeros(grid_size)
    upper = np.zeros(grid_size)
    upper[:-1] = leftward / h
    diag[:-1] -= rightward / h
    diag[1:] -= leftward / h
    lower[1:] = rightward / h
    outflow = half_sigma2
    diag[0] -= outflow / h
    diag[-1] -= outflow / h
    return lower, diag, upper, outflow


def admissible_dt(model: PenalizedWFModel, grid_size):
    _, diag, _, _ = fokker_planck_operator(model, grid_size)
    return 1.0 / np.abs(diag).max()


def _resolve_dt(model, grid_size, dt):
    limit = admissible_dt(model, grid_size)
    if dt is None:
        return 0.9 * limit
    if dt <= 0:
        raise ParameterError('dt must be positive')
    if dt > limit:
        raise ParameterError('dt = {} violates the CFL bound; admissible dt <= {:.6g}'.format(dt, limit))
    return dt


def _limit_steps(mu0: GridMeasure, model: PenalizedWFModel, times, dt):
    """
    yields (t, GridMeasure) at each requested time
    """
    grid_size = mu0.grid_size
    dt = _resolve_dt(model, grid_size, dt)
    lower, diag, upper, outflow = fokker_planck_operator(model, grid_size)
    r_cells = model.r(mu0.centers())
    r0, r1 = float(model.r(0.0)), float(model.r(1.0))
    p = mu0.interior_density.copy()
    a0, a1 = mu0.atom0, mu0.atom1
    h = mu0.h
    t = 0.0
    for target in times:
        n_steps = int(np.ceil((target - t) / dt - 1e-12))
        step = (target - t) / n_steps if n_steps > 0 else 0.0
        growth = np.exp(step * r_cells)
        for _ in range(n_steps):
            flux = lower * np.roll(p, 1) + diag * p + upper * np.roll(p, -1)
            a0 += step * outflow * p[0]
            a1 += step * outflow * p[-1]
            p = np.maximum(p + step * flux, 0.0) * growth
            a0 *= np.exp(step * r0)
            a1 *= np.exp(step * r1)
            total = a0 + a1 + p.sum() * h
            p, a0, a1 = p / total, a0 / total, a1 / total
        t = target
        yield t, GridMeasure(a0, a1, p)


def evolve_limit_measure(mu0: GridMeasure, model: PenalizedWFModel, t, dt=None) -> GridMeasure:
    if t < 0:
        raise ParameterError('t must be nonnegative')
    if t == 0:
        return mu0
    for _, mu in _limit_steps(mu0, model, [t], dt):
        return mu


def limit_trajectory(mu0: GridMeasure, model: PenalizedWFModel, times, dt=None):
    times = sorted(times)
    if times and times[0] < 0:
        raise ParameterError('times must be nonnegative')
    return list(_limit_steps(mu0, model, [t for t in times], dt))


#Feynman-Kac ======================
@dataclass(frozen=True)
class FeynmanKacResult:
    estimate: float
    stderr: float
    ess: float
    low_ess: bool
    n_paths: int


def sample_measure(mu: GridMeasure, size, rng: RngStream):
    masses = np.concatenate([[mu.atom0], mu.interior_density * mu.h, [mu.atom1]])
    cell = rng.choice(masses.size, size=size, p=masses / masses.sum())
    x = (cell - 0.5 + rng.random(size)) * mu.h
    x = np.where(cell == 0, 0.0, x)
    return np.where(cell == masses.size - 1, 1.0, x)


def _penalized_paths(x, model, t, dt, rng, on_step=None):
    """
    runs WF paths to time t accumulating log Z = ∫ r(X_s) ds (trapezoid);
    returns (X_t, log Z)
    """
    spec = model.diffusion()
    n_steps = max(1, int(np.ceil(t / dt - 1e-12)))
    step = t / n_steps
    log_z = np.zeros_like(x)
    r_prev = model.r(x)
    for k in range(n_steps):
        x = sde_step(x, spec, step, rng)
        r_next = model.r(x)
        log_z += 0.5 * step * (r_prev + r_next)
        r_prev = r_next
        if on_step is not None:
            on_step((k + 1) * step, x, log_z)
    return x, log_z


def _default_path_dt(mu0, model, t, n_paths, rng):
    pilot = rng.child(0)
    size = min(n_paths, 2000)

    def absorbed_fraction(dt):
        x0 = sample_measure(mu0, size, pilot)
        x, _ = _penalized_paths(x0, model, t, dt, pilot)
        return float(np.mean((x <= 0.0) | (x >= 1.0)))

    return calibrate_time_step(absorbed_fraction, t)


def feynman_kac_estimate(mu0: GridMeasure, model: PenalizedWFModel, t, f, n_paths, rng: RngStream,
                         dt=None) -> FeynmanKacResult:
    """
    ratio estimator E[f(X_t) Z_t] / E[Z_t] with Z_t = exp ∫ r(X_s) ds and the
    delta-method standard error
    """
    if n_paths < 100:
        raise ParameterError('need at least 100 paths')
    if dt is None:
        dt = _default_path_dt(mu0, model, t, n_paths, rng)
    x0 = sample_measure(mu0, n_paths, rng)
    x, log_z = _penalized_paths(x0, model, t, dt, rng)
    weights = np.exp(log_z - log_z.max())
    weights = weights / weights.sum()
    values = np.asarray(f(x), dtype=float)
    estimate = float(np.sum(weights * values))
    stderr = float(np.sqrt(np.sum(weights**2 * (values - estimate) ** 2)))
    ess = float(1.0 / np.sum(weights**2))
    if ess < 10:
        log.warning('Feynman-Kac effective sample size {:.1f} below 10'.format(ess))
    return FeynmanKacResult(estimate, stderr, ess, ess < 10, n_paths)


def conditioned_interior_law(mu0: GridMeasure, model: PenalizedWFModel, times, n_paths, rng: RngStream,
                             dt=1e-3, grid_size=50):
    """
    Z-weighted histogram of X_t among paths not yet absorbed at 0 or 1, for
    each requested time
    """
    times = sorted(times)
    x0 = sample_measure(mu0, n_paths, rng)
    out = []
    pending = list(times)

    def record(t, x, log_z):
        while pending and t >= pending[0] - 1e-12:
            alive = (x > 0.0) & (x < 1.0)
            if not alive.any():
                out.append((pending.pop(0), np.zeros(grid_size)))
                continue
            w = np.exp(log_z[alive] - log_z[alive].max())
            cells = np.minimum((x[alive] * grid_size).astype(int), grid_size - 1)
            hist = np.bincount(cells, weights=w, minlength=grid_size)
            out.append((pending.pop(0), hist / hist.sum() * grid_size))

    _penalized_paths(x0, model, times[-1], dt, rng, on_step=record)
    return out


#truncation ======================
@dataclass
class TruncationReport:
    outcome: str
    upheaval_time: Optional[float]
    support: Optional[tuple]
    final: Optional[GridMeasure]
    threshold: float

    def to_dict(self):
        return {'outcome': self.outcome, 'upheaval_time': self.upheaval_time, 'threshold': self.threshold,
                'support': list(self.support) if self.support is not None else None,
                'x0': self.final.atom0 if self.final is not None else None,
                'x1': self.final.atom1 if self.final is not None else None}


def truncation_experiment(mu0: GridMeasure, model: PenalizedWFModel, threshold, t, dt=None) -> TruncationReport:
    """
    the limit equation in log-mass form; after every step every grid cell
    holding less than `threshold` of the mass is set to zero before
    renormalizing. The atoms at 0 and 1 are never truncated; a run whose grid
    cells are all removed ends as 'total_truncation'. Upheaval is the first
    time the mass at 1 exceeds the mass at 0.
    """
    if threshold < 0:
        raise ParameterError('threshold must be nonnegative')
    grid_size = mu0.grid_size
    dt = _resolve_dt(model, grid_size, dt)
    lower, diag, upper, outflow = fokker_planck_operator(model, grid_size)
    h = mu0.h
    n_steps = max(1, int(np.ceil(t / dt - 1e-12)))
    step = t / n_steps
    with np.errstate(divide='ignore'):
        log_lower = np.log(step * lower)
        log_stay = np.log(1.0 + step * diag)
        log_upper = np.log(step * upper)
        log_out = np.log(step * outflow / h)
        log_m = np.log(mu0.interior_density * h)
        log_a0, log_a1 = np.log(mu0.atom0), np.log(mu0.atom1)
        log_threshold = np.log(threshold) if threshold > 0 else -np.inf
    r_cells = model.r(mu0.centers())
    r0, r1 = float(model.r(0.0)), float(model.r(1.0))

    upheaval = None
    for k in range(n_steps):
        from_left = np.concatenate([[-np.inf], log_m[:-1]]) + log_lower
        from_right = np.concatenate([log_m[1:], [-np.inf]]) + log_upper
        new_m = np.logaddexp(np.logaddexp(from_left, log_m + log_stay), from_right)
        log_a0 = np.logaddexp(log_a0, log_out + log_m[0]) + step * r0
        log_a1 = np.logaddexp(log_a1, log_out + log_m[-1]) + step * r1
        log_m = new_m + step * r_cells
        norm = logsumexp(np.concatenate([[log_a0, log_a1], log_m]))
        log_m, log_a0, log_a1 = log_m - norm, log_a0 - norm, log_a1 - norm

        log_m = np.where(log_m < log_threshold, -np.inf, log_m)
        if np.all(np.isneginf(log_m)):
            return TruncationReport('total_truncation', upheaval, None, None, threshold)
        norm = logsumexp(np.concatenate([[log_a0, log_a1], log_m]))
        log_m, log_a0, log_a1 = log_m - norm, log_a0 - norm, log_a1 - norm
        if upheaval is None and log_a1 > log_a0:
            upheaval = (k + 1) * step

    final = GridMeasure(float(np.exp(log_a0)), float(np.exp(log_a1)), np.exp(log_m) / h)
    alive = np.flatnonzero(np.isfinite(log_m))
    centers = mu0.centers()
    support = (float(centers[alive[0]]), float(centers[alive[-1]])) if alive.size else None
    return TruncationReport('upheaval' if upheaval is not None else 'no_upheaval', upheaval, support, final, threshold)
