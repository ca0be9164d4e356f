"""
Logistic birth-death populations with rare mutations on a selected trait and a
neutral marker, across three time scales: the individual-based model, the
trait substitution sequence (TSS) and the canonical equation (CEAD).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from proj_models.errors import DiagnosticError, ParameterError
from proj_models.kernel import RngStream, sample_index

log = logging.getLogger(__name__)


#trait functions ======================
def affine_fn(x, intercept, slope):
    return intercept + slope * np.asarray(x, dtype=float)

def hump_fn(x, top, curvature, center):
    return top - curvature * (np.asarray(x, dtype=float) - center) ** 2

def constant_fn(x, value):
    return np.full_like(np.asarray(x, dtype=float), float(value))

def gaussian_kernel_fn(z, width):
    return np.exp(-np.asarray(z, dtype=float) ** 2 / (2 * width**2))


#ecology ======================
@dataclass(frozen=True)
class EcologySpec:
    """
    :competition: C as a function of the trait difference x - y
    :steps: integer mutation steps k in [-A, A], drawn with probabilities
        step_probs
    :marker_generator: generator matrix of the neutral marker chain
    :modulator: M(x), multiplies the trait mutation probability
    :box: trait range; mutants outside are not produced
    :d1f: optional analytic x -> ∂_1 f(x, x)
    :strict: check η C >= η_ > 0 and b > d on the box
    """
    birth: Callable
    death: Callable
    eta: Callable
    competition: Callable
    steps: tuple = (-1, 1)
    step_probs: tuple = (0.5, 0.5)
    markers: tuple = (0, 1)
    marker_generator: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    modulator: Callable = None
    box: tuple = (0.0, 1.0)
    d1f: Optional[Callable] = None
    strict: bool = True

    def __post_init__(self):
        gen = np.asarray(self.marker_generator, dtype=float)
        object.__setattr__(self, 'marker_generator', gen)
        if len(self.steps) != len(self.step_probs) or abs(sum(self.step_probs) - 1.0) > 1e-9:
            raise ParameterError('step probabilities must match the steps and sum to 1')
        if any(int(k) != k for k in self.steps) or min(self.step_probs) < 0:
            raise ParameterError('mutation steps must be integers with nonnegative probabilities')
        u = len(self.markers)
        if gen.shape != (u, u):
            raise ParameterError('marker generator must be {0}x{0}'.format(u))
        off = gen[~np.eye(u, dtype=bool)]
        if np.any(off < 0) or np.any(np.abs(gen.sum(axis=1)) > 1e-9):
            raise ParameterError('marker generator needs nonnegative off-diagonal rates and zero row sums')
        lo, hi = self.box
        if not lo < hi:
            raise ParameterError('empty trait box')
        if self.strict:
            x = np.linspace(lo, hi, 101)
            pressure = self.eta(x)[:, None] * self.competition(x[:, None] - x[None, :])
            if np.min(pressure) <= 0:
                raise ParameterError('eta * C must be bounded below by a positive constant')
            if np.any(self.birth(x) <= self.death(x)):
                raise ParameterError('birth must exceed death on the trait box')

    @property
    def diameter(self):
        return self.box[1] - self.box[0]

    def mutation_rate(self, x):
        return 1.0 if self.modulator is None else float(self.modulator(x))

    def n_hat(self, x):
        return float((self.birth(x) - self.death(x)) / (self.eta(x) * self.competition(0.0)))

    def in_box(self, x):
        return self.box[0] - 1e-12 <= x <= self.box[1] + 1e-12


def invasion_fitness(y, x, eco: EcologySpec):
    """
    f(y, x) = b(y) - d(y) - η(y) C(y - x) n̂_x
    """
    n_hat = eco.n_hat(x)
    if n_hat <= 0:
        raise ParameterError('resident {} has no positive equilibrium'.format(x))
    return float(eco.birth(y) - eco.death(y) - eco.eta(y) * eco.competition(y - x) * n_hat)


def fitness_gradient(x, eco: EcologySpec):
    """
    ∂_1 f(x, x), analytic if the ecology registers one, else a centered
    difference with step 1e-5 of the box diameter
    """
    if eco.d1f is not None:
        return float(eco.d1f(x))
    step = 1e-5 * eco.diameter
    return (invasion_fitness(x + step, x, eco) - invasion_fitness(x - step, x, eco)) / (2 * step)


def check_invasion_implies_fixation(x, y, eco: EcologySpec):
    """
    :returns: (holds, label) with label 'no_invasion', 'invasion_fixation' or
        'coexistence_risk'
    """
    ratio_y = (eco.birth(y) - eco.death(y)) / (eco.eta(y) * eco.competition(y - x))
    ratio_x = (eco.birth(x) - eco.death(x)) / (eco.eta(x) * eco.competition(x - y))
    if ratio_y < eco.n_hat(x):
        return True, 'no_invasion'
    if ratio_y > eco.n_hat(x) and ratio_x < eco.n_hat(y):
        return True, 'invasion_fixation'
    return False, 'coexistence_risk'


def find_fixation_violations(eco: EcologySpec, n_grid=41):
    grid = np.linspace(eco.box[0], eco.box[1], n_grid)
    return [(float(x), float(y)) for x in grid for y in grid
            if x != y and not check_invasion_implies_fixation(x, y, eco)[0]]


#scaling ======================
@dataclass(frozen=True)
class ScalingRegime:
    """
    :p_K: trait mutation probability per birth
    :q_K: marker mutation probability per birth, q_K = p_K r_K
    :alpha: exponent of the CEAD window
    """
    K: int
    sigma_K: float = 1.0
    p_K: float = None
    q_K: float = None
    r_K: float = None
    alpha: float = 0.1

    def __post_init__(self):
        if self.K < 2:
            raise ParameterError('K must be at least 2')
        p = self.p_K if self.p_K is not None else 1.0 / self.K**2
        if self.r_K is not None:
            r = self.r_K
        else:
            r = self.q_K / p if self.q_K is not None and p > 0 else float(np.sqrt(self.K))
        q = self.q_K if self.q_K is not None else p * r
        object.__setattr__(self, 'p_K', p)
        object.__setattr__(self, 'r_K', r)
        object.__setattr__(self, 'q_K', q)
        if min(p, q, r, self.sigma_K, self.alpha) <= 0 or p > 1 or q > 1:
            raise ParameterError('scaling parameters must be positive with probabilities at most 1')

    @property
    def tss_time(self):
        # IBM time per unit of TSS time
        return 1.0 / (self.K * self.p_K)

    @property
    def cead_time(self):
        return 1.0 / (self.K * self.p_K * self.sigma_K**2)

    def report(self, slack=10.0):
        K, s, p, a = self.K, self.sigma_K, self.p_K, self.alpha
        return {
            'K': K, 'sigma_K': s, 'p_K': p, 'q_K': self.q_K, 'r_K': self.r_K, 'alpha': a, 'slack': slack,
            'inverse_square_mutation': bool(np.isclose(p, K**-2.0, rtol=1e-9) and np.isclose(self.q_K, p * self.r_K)),
            'sigma_window': bool(slack * K ** (-0.5 + a) < s and slack * s < 1.0),
            'mutation_window': bool(slack * np.exp(-K**a) < p and slack * p < s ** (1 + a) / (K * np.log(K))),
            'tss_time_factor': self.tss_time,
            'cead_time_factor': self.cead_time,
        }


#individual-based model ======================
@dataclass
class WeightedPopulation:
    """
    ν = (1/K) Σ_types count δ_(trait, marker)
    """
    traits: np.ndarray
    markers: np.ndarray
    counts: np.ndarray
    K: int

    def total_mass(self):
        return float(self.counts.sum() / self.K)

    def trait_marginal(self):
        traits = np.unique(self.traits)
        return traits, np.array([self.counts[self.traits == x].sum() for x in traits]) / self.K

    def dominant_trait(self):
        traits, mass = self.trait_marginal()
        return float(traits[np.argmax(mass)]) if mass.size and mass.max() > 0 else np.nan

    def marker_weights(self, x, n_markers):
        sel = (self.traits == x)
        w = np.bincount(self.markers[sel], weights=self.counts[sel], minlength=n_markers)
        return w / w.sum() if w.sum() > 0 else w


@dataclass
class IbmPath:
    times: np.ndarray
    sizes: np.ndarray
    dominant: np.ndarray
    time_average: float
    extinct: bool
    sweep_time: Optional[float]
    sweep_trait: Optional[float]
    final: WeightedPopulation
    n_events: int


def simulate_ibm(eco: EcologySpec, regime: ScalingRegime, x0, u0, T, rng: RngStream, n0=None, record_dt=None,
                 stop_on_sweep=False, cap=None) -> IbmPath:
    """
    exact simulation on (trait, marker) types. A birth mutates the trait with
    probability p_K M(x) by σ_K k (k ~ m) and independently the marker with
    probability q_K, the new marker following G_K = I + (K / r_K) A. Per birth
    u -> v then has probability q_K K A[u, v] / r_K = K p_K A[u, v]
    """
    if regime.K < 10:
        raise ParameterError('K must be at least 10')
    if T <= 0:
        raise ParameterError('horizon must be positive')
    K = regime.K
    lo, hi = eco.box
    n_markers = len(eco.markers)
    marker_jump = regime.q_K * K / regime.r_K * eco.marker_generator * (1 - np.eye(n_markers))
    if np.any(marker_jump.sum(axis=1) > 1.0):
        raise ParameterError('marker mutation kernel q_K K A / r_K exceeds probability 1')
    grid = np.linspace(lo, hi, 101)
    cap = cap or 100 * K * max(1.0, max(eco.n_hat(x) for x in grid) if eco.strict else 1.0)
    record_dt = record_dt or T / 200

    traits = np.array([float(x0)])
    markers = np.array([int(u0)])
    counts = np.array([int(round(K * eco.n_hat(x0))) if n0 is None else int(n0)])

    def type_rates(traits, counts):
        b = eco.birth(traits)
        pressure = eco.eta(traits) * (eco.competition(traits[:, None] - traits[None, :]) @ counts) / K
        return b * counts, (eco.death(traits) + pressure) * counts

    t, n_events, area = 0.0, 0, 0.0
    rec_t, rec_n, rec_dom = [], [], []
    next_record = 0.0
    sweep_time = sweep_trait = None
    births, deaths = type_rates(traits, counts)
    while True:
        total = births.sum() + deaths.sum()
        wait = rng.exponential(1.0 / total) if total > 0 else np.inf
        while next_record <= min(t + wait, T):
            pop = WeightedPopulation(traits, markers, counts, K)
            rec_t.append(next_record)
            rec_n.append(pop.total_mass())
            rec_dom.append(pop.dominant_trait())
            next_record += record_dt
        area += counts.sum() * (min(t + wait, T) - t)
        if t + wait > T or total == 0:
            t = T
            break
        t += wait
        n_events += 1
        idx = sample_index(np.concatenate([births, deaths]), rng)
        if idx < traits.size:
            x, u = traits[idx], markers[idx]
            if rng.random() < regime.p_K * eco.mutation_rate(x):
                k = eco.steps[sample_index(eco.step_probs, rng)]
                y = x + regime.sigma_K * k
                x = y if lo - 1e-12 <= y <= hi + 1e-12 else x
            if marker_jump[u].sum() > 0 and rng.random() < marker_jump[u].sum():
                u = sample_index(marker_jump[u], rng)
            match = np.flatnonzero((traits == x) & (markers == u))
            if match.size:
                counts[match[0]] += 1
            else:
                traits = np.append(traits, x)
                markers = np.append(markers, u)
                counts = np.append(counts, 1)
        else:
            counts[idx - traits.size] -= 1
            if counts[idx - traits.size] == 0:
                keep = counts > 0
                traits, markers, counts = traits[keep], markers[keep], counts[keep]
        if counts.sum() > cap:
            raise DiagnosticError('population exceeded the cap {} at t={:.4g}'.format(cap, t), [int(counts.sum())])
        if counts.sum() == 0:
            births, deaths = np.zeros(0), np.zeros(0)
            continue
        if sweep_time is None:
            resident = counts[traits == x0].sum()
            if resident * 2 < counts.sum():
                pop = WeightedPopulation(traits, markers, counts, K)
                sweep_time, sweep_trait = t, pop.dominant_trait()
                if stop_on_sweep:
                    break
        births, deaths = type_rates(traits, counts)

    final = WeightedPopulation(traits, markers, counts, K)
    return IbmPath(np.array(rec_t), np.array(rec_n), np.array(rec_dom), area / (K * t) if t > 0 else 0.0,
                   counts.sum() == 0, sweep_time, sweep_trait, final, n_events)


#trait substitution sequence ======================
def tss_jump_rates(eco: EcologySpec, x, sigma=1.0):
    """
    rates of x -> x + σk: M(x) b(x) n̂_x [f(x + σk, x)]_+ / b(x + σk) m(k),
    zero for mutants outside the box
    """
    rates = np.zeros(len(eco.steps))
    for i, (k, prob) in enumerate(zip(eco.steps, eco.step_probs)):
        y = x + sigma * k
        if not eco.in_box(y):
            continue
        f = invasion_fitness(y, x, eco)
        if f > 0:
            rates[i] = eco.mutation_rate(x) * eco.birth(x) * eco.n_hat(x) * f / eco.birth(y) * prob
    return rates


@dataclass
class TssState:
    """
    :jumps: (time, old trait, new trait, fitness of the new trait, marker
        sampled at the jump or None)
    """
    trait: float
    n_hat: float
    jumps: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    marker: Optional[object] = None
    horizon: float = 0.0

    def times(self):
        return np.array([j[0] for j in self.jumps])

    def trait_at(self, t, x0):
        # right-continuous step function
        x = x0
        for jump in self.jumps:
            if jump[0] > t:
                break
            x = jump[2]
        return x

    def to_rows(self):
        return [{'t': j[0], 'old_trait': j[1], 'new_trait': j[2], 'fitness': j[3],
                 'marker': j[4] if j[4] is not None else ''} for j in self.jumps]


def simulate_tss(eco: EcologySpec, x0, horizon, rng: RngStream, sigma=1.0, on_jump=None) -> TssState:
    """
    :on_jump: optional callback(t, old, new) -> marker label recorded in the
        jump log; it is called after the trait stream has been advanced
    """
    x, t = float(x0), 0.0
    state = TssState(x, eco.n_hat(x), horizon=horizon)
    checked = set()
    while True:
        rates = tss_jump_rates(eco, x, sigma)
        total = rates.sum()
        if total <= 0:
            break
        wait = rng.exponential(1.0 / total)
        if t + wait > horizon:
            break
        t += wait
        y = x + sigma * eco.steps[sample_index(rates, rng)]
        f = invasion_fitness(y, x, eco)
        assert f > 0, 'TSS jump with nonpositive invasion fitness'
        if (x, y) not in checked:
            checked.add((x, y))
            holds, label = check_invasion_implies_fixation(x, y, eco)
            if not holds:
                state.violations.append((x, y))
                log.warning('invasion implies fixation fails for {:.6g} -> {:.6g} ({})'.format(x, y, label))
        marker = on_jump(t, x, y) if on_jump is not None else None
        state.jumps.append((t, x, y, f, marker))
        x = y
    state.trait, state.n_hat = x, eco.n_hat(x)
    return state


#canonical equation ======================
@dataclass
class CeadPath:
    times: np.ndarray
    traits: np.ndarray
    singular: bool
    singular_time: Optional[float]

    def at(self, t):
        return np.interp(t, self.times, self.traits)


def cead_speed(x, eco: EcologySpec):
    """
    Σ_k k [k M(x) n̂(x) ∂_1 f(x, x)]_+ m(k)
    """
    g = eco.mutation_rate(x) * eco.n_hat(x) * fitness_gradient(x, eco)
    return float(sum(k * max(k * g, 0.0) * p for k, p in zip(eco.steps, eco.step_probs)))


def integrate_cead(eco: EcologySpec, x0, T, tol=1e-8, n_points=201) -> CeadPath:
    """
    RK45 with a terminal event where |∂_1 f(x, x)| drops below tol; the box
    edges also stop the integration
    """
    if abs(fitness_gradient(x0, eco)) < tol:
        log.warning('evolutionary singularity at the initial trait {}'.format(x0))
        return CeadPath(np.array([0.0]), np.array([float(x0)]), True, 0.0)

    def singular(t, x):
        return abs(fitness_gradient(x[0], eco)) - tol
    singular.terminal = True

    def edge(t, x):
        # margin so a start on the boundary does not count as a crossing
        return min(x[0] - eco.box[0], eco.box[1] - x[0]) + 1e-9
    edge.terminal = True

    sol = integrate.solve_ivp(lambda t, x: [cead_speed(x[0], eco)], (0.0, T), [float(x0)], method='RK45',
                              t_eval=np.linspace(0.0, T, n_points), events=(singular, edge), rtol=1e-8, atol=1e-10)
    times, traits = sol.t, sol.y[0]
    hit = sol.t_events[0]
    if hit.size:
        times = np.append(times[times < hit[0]], hit[0])
        traits = np.append(traits[:times.size - 1], sol.y_events[0][0][0])
        log.warning('CEAD truncated at the singularity reached at t={:.6g}'.format(hit[0]))
    return CeadPath(times, traits, bool(hit.size), float(hit[0]) if hit.size else None)


#comparisons ======================
def multiscale_compare(eco: EcologySpec, regime: ScalingRegime, x0, T_macro, replicates, rng: RngStream, u0=0,
                       cead=False, n_points=51):
    """
    first sweep of the IBM (time rescaled by K p_K) against the first TSS jump:
    KS distance to the exponential law truncated at T_macro and total variation
    between destination laws. With `cead`, the IBM also runs for T_macro in
    CEAD time and the dominant-trait path is compared to the CEAD trajectory in
    sup-distance
    """
    rates = tss_jump_rates(eco, x0, regime.sigma_K)
    total = rates.sum()
    times, destinations = [], []
    for r in range(replicates):
        path = simulate_ibm(eco, regime, x0, u0, T_macro * regime.tss_time, rng.child(r), stop_on_sweep=True,
                            record_dt=T_macro * regime.tss_time)
        if path.sweep_time is not None:
            times.append(path.sweep_time / regime.tss_time)
            destinations.append(path.sweep_trait)
    report = {'replicates': replicates, 'sweeps': len(times), 'tss_rate': float(total), 'T_macro': T_macro,
              'regime': regime.report()}
    if total > 0 and times:
        censor = 1.0 - np.exp(-total * T_macro)
        ks = stats.kstest(times, lambda s: (1.0 - np.exp(-total * np.asarray(s))) / censor)
        report['ks_first_jump'] = float(ks.statistic)
        report['ks_pvalue'] = float(ks.pvalue)
        expected = rates / total
        observed = np.array([np.mean(np.isclose(destinations, x0 + regime.sigma_K * k)) for k in eco.steps])
        report['destination_tv'] = float(0.5 * np.abs(observed - expected).sum())
        report['sweep_fraction'] = len(times) / replicates
        report['expected_sweep_fraction'] = float(censor)
    if cead:
        target = integrate_cead(eco, x0, T_macro)
        report['cead_singular'] = target.singular
    if cead and target.times[-1] > 0:
        grid = np.linspace(0.0, target.times[-1], n_points)
        distances = []
        for r in range(replicates):
            path = simulate_ibm(eco, regime, x0, u0, grid[-1] * regime.cead_time, rng.child(replicates + r),
                                record_dt=(grid[1] - grid[0]) * regime.cead_time)
            dominant = path.dominant[:grid.size]
            distances.append(float(np.nanmax(np.abs(dominant - target.at(grid[:dominant.size])))))
        report['cead_distance'] = float(np.mean(distances))
        report['cead_stderr'] = float(np.std(distances) / np.sqrt(replicates))
    return report, np.array(times)


def tss_cead_distance(eco: EcologySpec, x0, T, sigmas, replicates, rng: RngStream, n_points=101):
    """
    mean over replicates of sup_t |X^σ_{t/σ²} - x(t)| for the TSS with step σ
    against the CEAD trajectory x
    """
    cead = integrate_cead(eco, x0, T)
    grid = np.linspace(0.0, cead.times[-1], n_points)
    target = cead.at(grid)
    rows = []
    for sigma in sigmas:
        # paired streams across sigma
        distances = []
        for r in range(replicates):
            tss = simulate_tss(eco, x0, T / sigma**2, rng.child(r), sigma=sigma)
            path = np.array([tss.trait_at(t / sigma**2, x0) for t in grid])
            distances.append(np.max(np.abs(path - target)))
        rows.append({'sigma': float(sigma), 'distance': float(np.mean(distances)),
                     'stderr': float(np.std(distances) / np.sqrt(replicates))})
    return rows
