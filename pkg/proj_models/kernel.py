"""
Seeded randomness, exact event simulation and Euler-Maruyama steps shared by
every lab.
"""
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from proj_models.errors import FrozenStateError, ParameterError


#random streams ======================
class RngStream():
    """
    counter-based stream keyed by (seed, stream_id[, spawn_key])

    Two streams with the same key draw bit-identical sequences, distinct keys
    are independent by construction of SeedSequence. Every numpy Generator
    method is forwarded.
    """
    def __init__(self, seed, stream_id=0, spawn_key=()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seed_seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(seed_seq))

    def child(self, k):
        # derived from the key only, never from the current generator state
        return RngStream(self.seed, self.stream_id, self.spawn_key + (k,))

    def __getattr__(self, name):
        if name == 'generator':
            raise AttributeError(name)
        return getattr(self.generator, name)

    def __repr__(self):
        return 'RngStream(seed={}, stream_id={}, spawn_key={})'.format(self.seed, self.stream_id, self.spawn_key)


#event tables ======================
@dataclass(frozen=True)
class EventRateTable:
    rates: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).ravel()
        if rates.size == 0:
            raise ParameterError('event table is empty')
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ParameterError('event rates must be finite and nonnegative, got {}'.format(rates))
        object.__setattr__(self, 'rates', rates)
        object.__setattr__(self, 'total', float(rates.sum()))


def gillespie_step(table: EventRateTable, rng: RngStream):
    """
    Parameters
    ----------
    table : propensities of the competing events.
    rng : stream consumed for exactly two draws (waiting time, then index).

    Returns
    -------
    (event_index, waiting_time)
    """
    if table.total <= 0:
        raise FrozenStateError('all event rates are zero')
    waiting_time = rng.exponential(1.0 / table.total)
    return sample_index(table.rates, rng), waiting_time


def sample_index(weights, rng: RngStream):
    """
    index drawn proportionally to nonnegative weights (one uniform draw);
    zero-weight entries are never returned
    """
    cumulative = np.cumsum(weights)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'))
    if index >= len(cumulative):
        # u * total rounded up to total
        index = int(np.flatnonzero(np.asarray(weights) > 0)[-1])
    return index


#diffusions ======================
def _constant(x, value):
    return np.full_like(np.asarray(x, dtype=float), value)

def _wf_drift(x, s):
    return -s * x * (1.0 - x)

def _wf_noise(x, sigma):
    return sigma * np.sqrt(np.maximum(x * (1.0 - x), 0.0))


@dataclass(frozen=True)
class DiffusionSpec:
    """
    dX = drift(X) dt + noise(X) dW on a closed domain

    :noise: diffusion coefficient, not squared
    :boundary_behavior: 'absorb', 'reflect' or 'none'
    """
    drift: Callable
    noise: Callable
    domain: tuple = (-np.inf, np.inf)
    boundary_behavior: str = 'none'
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.boundary_behavior not in ('absorb', 'reflect', 'none'):
            raise ParameterError('unknown boundary behavior {}'.format(self.boundary_behavior))
        lo, hi = self.domain
        if not lo < hi:
            raise ParameterError('empty domain {}'.format(self.domain))

    @classmethod
    def wright_fisher(cls, s, sigma):
        if sigma < 0:
            raise ParameterError('sigma must be nonnegative')
        return cls(partial(_wf_drift, s=s), partial(_wf_noise, sigma=sigma), (0.0, 1.0), 'absorb')

    @classmethod
    def constant(cls, drift=0.0, noise=0.0, domain=(-np.inf, np.inf), boundary_behavior='none'):
        if noise < 0:
            raise ParameterError('noise must be nonnegative')
        return cls(partial(_constant, value=drift), partial(_constant, value=noise), domain, boundary_behavior)

    def absorbed(self, x):
        lo, hi = self.domain
        x = np.asarray(x, dtype=float)
        if self.boundary_behavior != 'absorb':
            return np.zeros(x.shape, dtype=bool)
        return (x <= lo + self.tolerance) | (x >= hi - self.tolerance)


def sde_step(x, spec: DiffusionSpec, dt, rng: RngStream):
    """
    one Euler-Maruyama step, vectorized over x (and dt if an array is given)

    one standard normal is drawn per entry of x whether or not it is absorbed
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise ParameterError('time step must be positive, got {}'.format(dt))
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    lo, hi = spec.domain

    dw = rng.standard_normal(x.shape) * np.sqrt(dt)
    x_new = x + spec.drift(x) * dt + spec.noise(x) * dw

    if spec.boundary_behavior == 'reflect':
        if np.isfinite(lo):
            x_new = lo + np.abs(x_new - lo)
        if np.isfinite(hi):
            x_new = hi - np.abs(hi - x_new)
    x_new = np.clip(x_new, lo, hi)
    if spec.boundary_behavior == 'absorb':
        x_new = np.where(x_new <= lo + spec.tolerance, lo, x_new)
        x_new = np.where(x_new >= hi - spec.tolerance, hi, x_new)
        x_new = np.where(spec.absorbed(x), x, x_new)

    return float(x_new) if scalar else x_new


def euler_maruyama_path(x0, spec: DiffusionSpec, dt, n_steps, rng: RngStream):
    """
    :returns: array (n_steps + 1, *x0.shape)
    """
    x = np.asarray(x0, dtype=float)
    path = np.empty((n_steps + 1,) + x.shape)
    path[0] = x
    for i in range(n_steps):
        x = sde_step(x, spec, dt, rng)
        path[i + 1] = x
    return path


def calibrate_time_step(absorption_probability: Callable, horizon, rtol=0.01, max_halvings=4):
    """
    start at dt = 1e-4 * horizon and halve while absorption_probability(dt)
    still moves by more than rtol (relative)
    """
    dt = 1e-4 * horizon
    p_prev = absorption_probability(dt)
    for _ in range(max_halvings):
        p = absorption_probability(dt / 2)
        if abs(p - p_prev) <= rtol * max(abs(p_prev), 1e-12):
            return dt / 2
        dt, p_prev = dt / 2, p
    return dt


#point processes ======================
def inhomogeneous_poisson(rate_fn: Callable, horizon, rate_bound, rng: RngStream, t0=0.0):
    """
    event times of a Poisson process with intensity rate_fn on (t0, horizon] by
    thinning a homogeneous process of intensity rate_bound
    """
    if rate_bound < 0:
        raise ParameterError('rate bound must be nonnegative')
    times = []
    if rate_bound == 0:
        return times
    t = t0
    while True:
        t += rng.exponential(1.0 / rate_bound)
        if t > horizon:
            break
        rate = rate_fn(t)
        if rate < 0 or rate > rate_bound * (1 + 1e-12):
            raise ParameterError('intensity {} at t={} outside [0, {}]'.format(rate, t, rate_bound))
        if rng.random() * rate_bound < rate:
            times.append(t)
    return times
