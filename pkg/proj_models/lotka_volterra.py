"""
Finite-trait competition model shared by the discrete Hamilton-Jacobi solvers,
and the Lotka-Volterra equilibrium of its ε-free density dynamics

    du_k/dt = u_k R(k, ψ),   ψ^i = Σ_k Ψ^i(k) u_k,   R(k, ψ) = a_k - Σ_i B[k, i] ψ^i
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from proj_models.errors import AssumptionHViolated, ParameterError

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9
MAX_ENUMERATED = 8


@dataclass(frozen=True)
class DiscreteTraitModel:
    """
    :cost: cost[j, i] of a lineage mutating from j to i, 0 on the diagonal,
        np.inf for forbidden mutations
    :growth_rate: a_k
    :slopes: B (n_states x n_resources), entries in [1/slope_bound, slope_bound]
    :kernels: Ψ (n_resources x n_states), positive
    :h: initial exponent, u(0, k) = exp(-h(k)/ε)
    """
    states: tuple
    cost: np.ndarray
    growth_rate: np.ndarray
    slopes: np.ndarray
    kernels: np.ndarray
    h: np.ndarray
    slope_bound: float = 10.0
    name: str = 'discrete'

    def __post_init__(self):
        n = len(self.states)
        for key in ('cost', 'growth_rate', 'slopes', 'kernels', 'h'):
            object.__setattr__(self, key, np.atleast_1d(np.asarray(getattr(self, key), dtype=float)))
        if self.slopes.ndim == 1:
            object.__setattr__(self, 'slopes', self.slopes[:, None])
        if self.kernels.ndim == 1:
            object.__setattr__(self, 'kernels', self.kernels[None, :])
        if self.cost.shape != (n, n) or self.growth_rate.shape != (n,) or self.h.shape != (n,):
            raise ParameterError('model arrays do not match {} states'.format(n))
        if self.slopes.shape[0] != n or self.kernels.shape != (self.slopes.shape[1], n):
            raise ParameterError('slopes must be (states x resources) and kernels (resources x states)')
        if np.any(np.diag(self.cost) != 0):
            raise ParameterError('cost must vanish on the diagonal')
        if np.any(self.cost[~np.eye(n, dtype=bool)] <= 0):
            raise ParameterError('off-diagonal mutation costs must be positive')
        if np.any(self.slopes < 1.0 / self.slope_bound) or np.any(self.slopes > self.slope_bound):
            raise ParameterError('resource slopes must lie in [1/{0}, {0}]'.format(self.slope_bound))
        if np.any(self.kernels <= 0):
            raise ParameterError('resource kernels must be positive')

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_resources(self):
        return self.kernels.shape[0]

    def resources(self, u):
        return self.kernels @ np.asarray(u, dtype=float)

    def growth(self, psi):
        """
        R(k, ψ) for every state k
        """
        return self.growth_rate - self.slopes @ np.asarray(psi, dtype=float)

    def phi0(self):
        return -(self.h - self.h.min())


@dataclass(frozen=True)
class LVEquilibrium:
    """
    :densities: u* over all states, zero outside the support
    :resources: F(A), the resource vector of the equilibrium
    :degenerate: several stable equilibria sharing the same resource vector
    """
    active: tuple
    support: tuple
    densities: np.ndarray
    resources: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False
    alternatives: list = field(default_factory=list)


def _relax(model: DiscreteTraitModel, active, horizon=200.0):
    # log-density relaxation from u = 1 on the active set
    idx = np.asarray(active)

    def rhs(_, v):
        u = np.zeros(model.n_states)
        u[idx] = np.exp(v)
        return model.growth(model.resources(u))[idx]

    sol = integrate.solve_ivp(rhs, (0.0, horizon), np.zeros(idx.size), method='LSODA', rtol=1e-8, atol=1e-10)
    return np.exp(sol.y[:, -1])


def _solve_on_support(model: DiscreteTraitModel, support, guess):
    idx = np.asarray(support)

    def residual(v):
        u = np.zeros(model.n_states)
        u[idx] = np.exp(v)
        return model.growth(model.resources(u))[idx]

    sol = optimize.root(residual, np.log(np.maximum(guess, 1e-12)), method='hybr', tol=1e-13)
    if not sol.success or np.max(np.abs(residual(sol.x))) > 1e-9:
        return None
    u = np.zeros(model.n_states)
    u[idx] = np.exp(sol.x)
    return u


def _check(model: DiscreteTraitModel, active, u):
    """
    (saturated, eigenvalues) of a candidate equilibrium; saturation means
    R <= 0 on the active states outside the support
    """
    support = np.flatnonzero(u > SUPPORT_TOL)
    outside = np.setdiff1d(np.asarray(active), support)
    g = model.growth(model.resources(u))
    saturated = bool(np.all(g[outside] <= SUPPORT_TOL))
    jac = -np.diag(u[support]) @ model.slopes[support] @ model.kernels[:, support]
    return saturated, np.linalg.eigvals(jac)


def lv_equilibrium(model: DiscreteTraitModel, active) -> LVEquilibrium:
    """
    unique saturated, locally attractive equilibrium of the dynamics restricted
    to `active`; every support inside the active set is tried (up to 8 states)
    so that several attractors are detected
    """
    active = tuple(sorted(int(k) for k in active))
    if not active:
        raise ParameterError('active set must be nonempty')
    relaxed = _relax(model, active)
    guess = np.zeros(model.n_states)
    guess[list(active)] = relaxed

    if len(active) <= MAX_ENUMERATED:
        supports = [s for size in range(1, len(active) + 1) for s in itertools.combinations(active, size)]
    else:
        supports = [tuple(k for k in active if guess[k] > 1e-6 * guess.max())]

    found = []
    for support in supports:
        u = _solve_on_support(model, support, guess[list(support)] + 1e-3)
        if u is None:
            continue
        saturated, eig = _check(model, active, u)
        if saturated and np.all(eig.real < -SUPPORT_TOL):
            found.append((support, u, eig))
    if not found:
        raise AssumptionHViolated(active, 'no saturated stable equilibrium')

    resources = [model.resources(u) for _, u, _ in found]
    same = all(np.allclose(r, resources[0], rtol=1e-8, atol=1e-10) for r in resources)
    if len(found) > 1 and not same:
        raise AssumptionHViolated(active, '{} stable equilibria with distinct resources'.format(len(found)))
    # prefer the candidate the relaxation converged to
    best = min(range(len(found)), key=lambda k: np.abs(found[k][1] - guess).sum())
    support, u, eig = found[best]
    if len(found) > 1:
        log.warning('degenerate equilibrium on {}: {} splits share the resource vector'.format(active, len(found)))
    return LVEquilibrium(active, support, u, model.resources(u), eig, len(found) > 1,
                         [f[0] for f in found if f[0] != support])
