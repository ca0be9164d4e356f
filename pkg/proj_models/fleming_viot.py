"""
Moran particle approximation of the neutral marker distribution carried by the
resident trait, and the substitution Fleming-Viot process built on the TSS.

Between trait substitutions each ordered pair of particles with different
markers resamples (the second takes the marker of the first) at rate b(x)/n̂_x,
which gives every marker weight the quadratic variation 2 b(x)/n̂_x w(1 - w);
each particle mutates u -> v at rate b(x) A[u, v]. At a substitution one marker
is drawn from the current weights and the ensemble restarts from a point mass.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from proj_models.adaptive_dynamics import EcologySpec, TssState, simulate_tss
from proj_models.errors import ParameterError
from proj_models.kernel import RngStream, sample_index

log = logging.getLogger(__name__)

MIN_PARTICLES = 100


@dataclass(frozen=True)
class MarkerDistribution:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0) or counts.sum() == 0:
            raise ParameterError('marker counts must be a nonnegative vector with positive total')
        object.__setattr__(self, 'counts', counts)

    @property
    def n_particles(self):
        return int(self.counts.sum())

    @property
    def n_markers(self):
        return self.counts.size

    @property
    def weights(self):
        return self.counts / self.counts.sum()

    @classmethod
    def from_weights(cls, weights, n_particles):
        """
        largest-remainder rounding of n_particles * weights
        """
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ParameterError('marker weights must be a probability vector')
        raw = weights * n_particles
        counts = np.floor(raw).astype(np.int64)
        short = n_particles - counts.sum()
        counts[np.argsort(counts - raw, kind='stable')[:short]] += 1
        return cls(counts)

    @classmethod
    def point_mass(cls, marker, n_markers, n_particles):
        counts = np.zeros(n_markers, dtype=np.int64)
        counts[marker] = n_particles
        return cls(counts)

    def sample(self, rng: RngStream):
        return sample_index(self.counts, rng)

    def is_fixed(self):
        return int(np.count_nonzero(self.counts)) == 1


class _Uniforms():
    # block draws keep the per-event loop in plain python floats
    def __init__(self, rng: RngStream, block=1024):
        self.rng = rng
        self.block = block
        self.buffer, self.pos = rng.random(block), 0

    def __call__(self):
        if self.pos == self.block:
            self.buffer, self.pos = self.rng.random(self.block), 0
        self.pos += 1
        return float(self.buffer[self.pos - 1])


def _pick(weights, total, u):
    acc = 0.0
    for k, w in enumerate(weights):
        acc += w
        if u * total < acc:
            return k
    return max(k for k, w in enumerate(weights) if w > 0)


def _evolve_counts(counts, gamma, mutation, dt, uniform):
    """
    :counts: list of ints, updated in place
    :mutation: b(x) A with a zero diagonal
    """
    n = sum(counts)
    n_markers = len(counts)
    out = [sum(row) for row in mutation]
    t = 0.0
    while True:
        resample = gamma * (n * n - sum(c * c for c in counts))
        mutate = [out[u] * counts[u] for u in range(n_markers)]
        total = resample + sum(mutate)
        if total <= 0:
            return
        t -= np.log(1.0 - uniform()) / total
        if t > dt:
            return
        if uniform() * total < resample:
            # ordered pair (u, v), u != v, with probability ∝ n_u n_v
            donor_weights = [c * (n - c) for c in counts]
            u = _pick(donor_weights, sum(donor_weights), uniform())
            receiver_weights = [0 if v == u else c for v, c in enumerate(counts)]
            v = _pick(receiver_weights, n - counts[u], uniform())
            counts[u] += 1
            counts[v] -= 1
        else:
            u = _pick(mutate, total - resample, uniform())
            v = _pick(mutation[u], out[u], uniform())
            counts[u] -= 1
            counts[v] += 1


def evolve_marker(dist: MarkerDistribution, x, eco: EcologySpec, dt, rng: RngStream) -> MarkerDistribution:
    if dist.n_particles < MIN_PARTICLES:
        raise ParameterError('at least {} marker particles are needed, got {}'.format(MIN_PARTICLES, dist.n_particles))
    if dt < 0:
        raise ParameterError('dt must be nonnegative')
    if dist.n_markers != len(eco.markers):
        raise ParameterError('marker distribution has {} markers, ecology {}'.format(dist.n_markers, len(eco.markers)))
    b = float(eco.birth(x))
    gamma = b / eco.n_hat(x)
    mutation = (b * eco.marker_generator * (1 - np.eye(dist.n_markers))).tolist()
    counts = dist.counts.tolist()
    _evolve_counts(counts, gamma, mutation, dt, _Uniforms(rng))
    return MarkerDistribution(np.array(counts))


def stationary_marker_law(generator):
    """
    left null vector of the marker generator, normalised
    """
    gen = np.asarray(generator, dtype=float)
    system = np.vstack([gen.T, np.ones(gen.shape[0])])
    rhs = np.zeros(gen.shape[0] + 1)
    rhs[-1] = 1.0
    return np.linalg.lstsq(system, rhs, rcond=None)[0]


@dataclass
class SfvpPath:
    """
    :weights: marker weights at `times` (right after any collapse at that time)
    :collapses: (time, sampled marker) at every trait substitution
    """
    tss: TssState
    times: np.ndarray
    traits: np.ndarray
    weights: np.ndarray
    collapses: list = field(default_factory=list)

    def time_average(self):
        # occupation measure of the marker weights over the recorded grid
        return self.weights.mean(axis=0)

    def to_rows(self, markers):
        return [dict({'t': t, 'trait': x}, **{'w_{}'.format(m): w[k] for k, m in enumerate(markers)})
                for t, x, w in zip(self.times, self.traits, self.weights)]


def simulate_sfvp(eco: EcologySpec, x0, u0, horizon, N_FV, rng: RngStream, sigma=1.0, record_dt=None) -> SfvpPath:
    """
    trait substitutions come from simulate_tss on `rng` itself, so the trait
    jump log matches simulate_tss with the same stream; the markers use
    rng.child(1)
    """
    if N_FV < MIN_PARTICLES:
        raise ParameterError('at least {} marker particles are needed, got {}'.format(MIN_PARTICLES, N_FV))
    n_markers = len(eco.markers)
    marker_rng = rng.child(1)
    uniform = _Uniforms(marker_rng)
    record_dt = record_dt or horizon / 200
    grid = np.arange(0.0, horizon + 0.5 * record_dt, record_dt)

    state = {'t': 0.0, 'x': float(x0), 'counts': MarkerDistribution.point_mass(u0, n_markers, N_FV).counts.tolist(),
             'next': 0}
    times, traits, weights, collapses = [], [], [], []

    def advance(until):
        # evolve the ensemble at the resident trait up to `until`, recording on the grid
        x = state['x']
        b = float(eco.birth(x))
        gamma = b / eco.n_hat(x)
        mutation = (b * eco.marker_generator * (1 - np.eye(n_markers))).tolist()
        while state['next'] < grid.size and grid[state['next']] <= until:
            target = grid[state['next']]
            _evolve_counts(state['counts'], gamma, mutation, target - state['t'], uniform)
            state['t'] = target
            times.append(target)
            traits.append(x)
            weights.append(np.array(state['counts']) / N_FV)
            state['next'] += 1
        _evolve_counts(state['counts'], gamma, mutation, until - state['t'], uniform)
        state['t'] = until

    def on_jump(t, old, new):
        advance(t)
        marker = MarkerDistribution(np.array(state['counts'])).sample(marker_rng)
        state['counts'] = MarkerDistribution.point_mass(marker, n_markers, N_FV).counts.tolist()
        state['x'] = new
        collapses.append((t, marker))
        return eco.markers[marker]

    tss = simulate_tss(eco, x0, horizon, rng, sigma=sigma, on_jump=on_jump)
    advance(horizon)
    tss.marker = MarkerDistribution(np.array(state['counts']))
    return SfvpPath(tss, np.array(times), np.array(traits), np.array(weights), collapses)
