"""
Estimators on a lineage tree: empirical tree mean, kernel estimators of the
invariant law and of the transition density, maximum likelihood for a
parametric division rate.
"""
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import integrate, stats

from proj_models.branching import LineageTree
from proj_models.errors import DiagnosticError, DomainError, ParameterError


#kernels ======================
def polynomial_kernel(u, order=2):
    """
    compactly supported polynomial kernel on [-1, 1] with vanishing moments up
    to order - 1 (order 4 takes negative values)
    """
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if order == 2:
        k = 0.75 * (1.0 - u**2)
    elif order == 4:
        k = 15.0 / 32.0 * (3.0 - 10.0 * u**2 + 7.0 * u**4)
    else:
        raise ParameterError('kernel order must be 2 or 4, got {}'.format(order))
    return np.where(inside, k, 0.0)


@dataclass(frozen=True)
class KernelEstimatorConfig:
    """
    :bandwidth_q: (h_x, h_y) for the parent and child coordinates
    :threshold: ϖ, floor of the denominator of the transition estimator
    :holder: (α, β) smoothness of (q in x, q in y and ν)
    :window: estimation window, also the grid range
    """
    bandwidth_nu: float
    bandwidth_q: tuple
    threshold: float
    kernel_order: int = 2
    holder: tuple = (1.0, 1.0)
    window: tuple = (0.0, 1.0)
    grid_size: int = 101

    @classmethod
    def default(cls, n_nodes, holder=(1.0, 1.0), kernel_order=2, window=(0.0, 1.0), grid_size=101):
        """
        rate-optimal bandwidths for the given smoothness:
        h_ν = N^{-1/(2β+1)} and (h_x, h_y) balancing N^{-s/(2s+1)} with
        1/s = 1/(α∧β) + 1/β; ϖ = 1/log N
        """
        alpha, beta = holder
        s = 1.0 / (1.0 / min(alpha, beta) + 1.0 / beta)
        rate = s / (2 * s + 1)
        h_x = n_nodes ** (-rate / min(alpha, beta))
        h_y = n_nodes ** (-rate / beta)
        return cls(bandwidth_nu=n_nodes ** (-1.0 / (2 * beta + 1)), bandwidth_q=(h_x, h_y),
                   threshold=1.0 / np.log(n_nodes), kernel_order=kernel_order, holder=tuple(holder),
                   window=tuple(window), grid_size=grid_size)

    def grid(self):
        return np.linspace(self.window[0], self.window[1], self.grid_size)


@dataclass(frozen=True)
class DensityGrid:
    grid: np.ndarray
    density: np.ndarray

    def mass(self):
        return float(integrate.trapezoid(self.density, self.grid))

    def mode(self):
        return float(self.grid[np.argmax(self.density)])


@dataclass(frozen=True)
class TransitionGrid:
    xgrid: np.ndarray
    ygrid: np.ndarray
    values: np.ndarray

    def row_masses(self):
        return integrate.trapezoid(self.values, self.ygrid, axis=1)

    def normalized_rows(self):
        mass = self.row_masses()
        safe = np.where(mass > 0, mass, 1.0)
        return np.where(mass[:, None] > 0, self.values / safe[:, None], 0.0)


#tree mean ======================
def tree_mean(tree: LineageTree, psi):
    """
    |U*|^{-1} Σ_u ψ(X_{u-}, X_u) over the non-root nodes

    :psi: vectorized (parent trait, trait) -> value
    """
    parent, child = tree.pairs()
    if child.size == 0:
        raise DomainError('tree has no non-root node')
    return float(np.mean(psi(parent, child)))


#kernel estimators ======================
def _check_bandwidth(h):
    if np.any(np.asarray(h, dtype=float) <= 0):
        raise ParameterError('bandwidth must be positive, got {}'.format(h))


def _smooth(points, data, h, order):
    # (len(points), len(data)) kernel weights, scaled by 1/h
    return polynomial_kernel((points[:, None] - data[None, :]) / h, order) / h


def estimate_nu(tree: LineageTree, cfg: KernelEstimatorConfig) -> DensityGrid:
    _check_bandwidth(cfg.bandwidth_nu)
    if len(tree) < 100:
        raise ParameterError('need at least 100 nodes, got {}'.format(len(tree)))
    grid = cfg.grid()
    weights = _smooth(grid, tree.trait_at_birth, cfg.bandwidth_nu, cfg.kernel_order)
    density = np.maximum(weights.mean(axis=1), 0.0)
    mass = integrate.trapezoid(density, grid)
    if mass > 0:
        density = density / mass
    return DensityGrid(grid, density)


def estimate_q(tree: LineageTree, cfg: KernelEstimatorConfig) -> TransitionGrid:
    """
    quotient of the joint kernel estimate of (X_{u-}, X_u) by the kernel
    estimate of the parent marginal, floored at ϖ
    """
    _check_bandwidth(cfg.bandwidth_q)
    if cfg.threshold <= 0:
        raise ParameterError('threshold must be positive, got {}'.format(cfg.threshold))
    parent, child = tree.pairs()
    if child.size < 100:
        raise ParameterError('need at least 100 parent-child pairs, got {}'.format(child.size))
    h_x, h_y = cfg.bandwidth_q
    grid = cfg.grid()
    k_x = _smooth(grid, parent, h_x, cfg.kernel_order)
    k_y = _smooth(grid, child, h_y, cfg.kernel_order)
    joint = k_x @ k_y.T / child.size
    marginal = k_x.mean(axis=1)
    values = np.maximum(joint / np.maximum(marginal, cfg.threshold)[:, None], 0.0)
    return TransitionGrid(grid, grid, values)


#parametric division rate ======================
def _affine(theta, x):
    return theta[0] + theta[1] * x

def _constant(theta, x):
    return theta[0] + 0.0 * x

RATE_FORMS = {'constant': _constant, 'affine': _affine}


@dataclass(frozen=True)
class ParametricBirthFamily:
    """
    B_ϑ(x) on the box Θ = [lower, upper]; both forms are nondecreasing in each
    coordinate of ϑ for nonnegative traits. Works on numpy arrays and torch
    tensors alike.
    """
    name: str
    theta0: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if self.name not in RATE_FORMS:
            raise ParameterError('unknown birth-rate family {}'.format(self.name))
        dim = {'constant': 1, 'affine': 2}[self.name]
        if not len(self.theta0) == len(self.lower) == len(self.upper) == dim:
            raise ParameterError('{} family takes {} parameters'.format(self.name, dim))
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ParameterError('empty parameter box')

    @property
    def dim(self):
        return len(self.theta0)

    def rate(self, theta, x):
        return RATE_FORMS[self.name](theta, x)

    def rate_fn(self, theta):
        theta = np.asarray(theta, dtype=float)
        return lambda x: self.rate(theta, np.asarray(x, dtype=float))

    def bound(self, theta, trait_max):
        return float(self.rate(np.asarray(theta, dtype=float), trait_max))


@dataclass(frozen=True)
class MleResult:
    theta: np.ndarray
    covariance: np.ndarray
    fisher_per_node: np.ndarray
    n_edges: int
    loglik: float
    trace: list = field(default_factory=list)

    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance))

    def confidence_interval(self, level=0.95):
        z = stats.norm.ppf(0.5 + level / 2)
        se = self.standard_errors()
        return self.theta - z * se, self.theta + z * se


def _segments(tree: LineageTree):
    """
    trapezoid segments of every recorded lifetime path and the traits at
    division
    """
    if tree.paths is None:
        raise ParameterError('tree carries no path data; simulate with record_paths=True')
    left, right, width = [], [], []
    for ages, values in tree.paths.values():
        left.append(values[:-1])
        right.append(values[1:])
        width.append(np.diff(ages))
    return np.concatenate(left), np.concatenate(right), np.concatenate(width), tree.trait_at_division


def mle_birth_rate(tree: LineageTree, family: ParametricBirthFamily, optim_name='LBFGS', optim_params=None,
                   max_steps=50, tol=1e-8) -> MleResult:
    """
    maximizes Σ log B_ϑ(X_division) - ∫ B_ϑ(X_s) ds over all observed lifetimes;
    the covariance is the inverse observed Fisher information
    """
    x_left, x_right, width, x_division = (torch.as_tensor(a, dtype=torch.float64) for a in _segments(tree))
    n_edges = int(x_division.numel())
    lower = torch.as_tensor(family.lower, dtype=torch.float64)
    upper = torch.as_tensor(family.upper, dtype=torch.float64)

    def neg_loglik(theta):
        exposure = 0.5 * width * (family.rate(theta, x_left) + family.rate(theta, x_right))
        return exposure.sum() - torch.log(family.rate(theta, x_division)).sum()

    theta = torch.tensor(family.theta0, dtype=torch.float64, requires_grad=True)
    optim_params = dict({'line_search_fn': 'strong_wolfe', 'max_iter': 50, 'tolerance_grad': 1e-12,
                                                    'tolerance_change': 1e-14} if optim_name == 'LBFGS' else {'lr': 0.01},
                        **(optim_params or {}))
    optimizer = getattr(torch.optim, optim_name)([theta], **optim_params)

    def closure():
        optimizer.zero_grad()
        loss = neg_loglik(theta)
        loss.backward()
        return loss

    trace = []
    converged = False
    for _ in range(max_steps):
        optimizer.step(closure)
        with torch.no_grad():
            theta.clamp_(lower, upper)
        loss = closure()
        trace.append(float(loss))
        grad = theta.grad.detach().clone()
        # gradient components pushing against an active bound do not count
        at_lower = (theta.detach() <= lower) & (grad > 0)
        at_upper = (theta.detach() >= upper) & (grad < 0)
        grad[at_lower | at_upper] = 0.0
        if float(grad.abs().max()) <= tol * max(1.0, n_edges):
            converged = True
            break
    if not converged:
        raise DiagnosticError('birth-rate MLE did not converge in {} steps'.format(max_steps), trace)

    theta_hat = theta.detach().clone()
    hessian = torch.autograd.functional.hessian(neg_loglik, theta_hat).numpy()
    hessian = 0.5 * (hessian + hessian.T)
    try:
        np.linalg.cholesky(hessian)
    except np.linalg.LinAlgError:
        raise DiagnosticError('observed information is not positive definite at {}'.format(theta_hat.numpy()), trace)
    return MleResult(theta_hat.numpy(), np.linalg.inv(hessian), hessian / n_edges, n_edges,
                     -float(neg_loglik(theta_hat)), trace)
