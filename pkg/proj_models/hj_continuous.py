"""
ε-system on a continuous trait grid (d = 1 or 2)

    ∂_t u = (ε/2) Δu + u R(x, ψ)/ε,   ψ^i = ∫ Ψ^i(x) u(x) dx

advanced by splitting: exact reaction u exp(dt R/ε) with ψ from the current
iterate, then an implicit heat step (I - dt ε/2 Δ) u_new = u solved by
conjugate gradient on torch tensors.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn

from proj_models.errors import DiagnosticError, ParameterError

log = logging.getLogger(__name__)


#trait functions ======================
def constant_fn(x, value):
    return np.full(x.shape[:-1], float(value))

def quadratic_fn(x, offset, curvature, center):
    # offset - curvature |x - center|^2
    return offset - curvature * np.sum((x - np.asarray(center)) ** 2, axis=-1)

def gaussian_fn(x, height, center, width, floor=0.0):
    return floor + height * np.exp(-np.sum((x - np.asarray(center)) ** 2, axis=-1) / (2 * width**2))


@dataclass(frozen=True)
class ContinuousHJModel:
    """
    :box: ((lo, hi), ...) one interval per dimension
    :growth_rate: a(x), R(x, ψ) = a(x) - Σ_i slopes[i] ψ^i
    :kernels: Ψ^i, bounded below by a positive constant
    :h: initial exponent, u(0, x) = exp(-h(x)/ε)
    :psi_box: (v_min, v_max) confinement of ψ, None to skip the check
    :strict: enforce slope bounds and kernel positivity (off only for pure heat
        checks)
    """
    eps: float
    box: tuple
    n_points: int
    growth_rate: Callable
    slopes: tuple
    kernels: tuple
    h: Callable
    boundary: str = 'periodic'
    psi_box: Optional[tuple] = None
    slope_bound: float = 10.0
    strict: bool = True

    def __post_init__(self):
        if self.eps <= 0:
            raise ParameterError('eps must be positive')
        if len(self.box) not in (1, 2):
            raise ParameterError('only 1-d and 2-d trait grids are supported')
        if self.boundary not in ('periodic', 'neumann'):
            raise ParameterError('unknown boundary {}'.format(self.boundary))
        if len(self.slopes) != len(self.kernels):
            raise ParameterError('one slope per resource kernel')
        if self.strict:
            slopes = np.asarray(self.slopes, dtype=float)
            if np.any(slopes < 1.0 / self.slope_bound) or np.any(slopes > self.slope_bound):
                raise ParameterError('resource slopes must lie in [1/{0}, {0}]'.format(self.slope_bound))
            points, _ = self.grid()
            if any(np.min(k(points)) <= 0 for k in self.kernels):
                raise ParameterError('resource kernels must be bounded below by a positive constant')

    @property
    def dim(self):
        return len(self.box)

    def spacing(self):
        return [(hi - lo) / self.n_points for lo, hi in self.box]

    def axes(self):
        offset = 0.0 if self.boundary == 'periodic' else 0.5
        return [lo + (np.arange(self.n_points) + offset) * d for (lo, _), d in zip(self.box, self.spacing())]

    def grid(self):
        """
        (points of shape (n, [n,] d), cell volume)
        """
        mesh = np.meshgrid(*self.axes(), indexing='ij')
        return np.stack(mesh, axis=-1), float(np.prod(self.spacing()))

    def growth(self, points, psi):
        return self.growth_rate(points) - float(np.dot(self.slopes, psi))


#heat operator ======================
def laplacian(u, spacing, boundary):
    out = torch.zeros_like(u)
    for axis, d in enumerate(spacing):
        if boundary == 'periodic':
            plus, minus = torch.roll(u, -1, dims=axis), torch.roll(u, 1, dims=axis)
        else:
            # mirrored ghost cells
            first, last = u.narrow(axis, 0, 1), u.narrow(axis, u.shape[axis] - 1, 1)
            plus = torch.cat([u.narrow(axis, 1, u.shape[axis] - 1), last], dim=axis)
            minus = torch.cat([first, u.narrow(axis, 0, u.shape[axis] - 1)], dim=axis)
        out = out + (plus - 2 * u + minus) / d**2
    return out


class HeatOperator(nn.Module):
    """
    u -> u - coef Δu, symmetric positive definite on the grid
    """
    def __init__(self, spacing, boundary, coef):
        super(HeatOperator, self).__init__()
        self.spacing = spacing
        self.boundary = boundary
        self.coef = coef

    def forward(self, u):
        return u - self.coef * laplacian(u, self.spacing, self.boundary)


def conjugate_gradient(op, rhs, max_iter=500, tol=1e-12):
    """
    solves op(x) = rhs, starting from rhs; stops when |r| <= tol |rhs|
    """
    x = rhs.clone()
    i, r = 0, rhs - op(x)
    p = r.clone()
    rTr = torch.sum(r * r)
    target = tol**2 * torch.sum(rhs * rhs)
    while i < max_iter and rTr > target:
        Ap = op(p)
        alpha = rTr / torch.sum(p * Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rTrNew = torch.sum(r * r)
        beta = rTrNew / rTr
        p = r + beta * p
        i += 1
        rTr = rTrNew
    if rTr > target:
        raise DiagnosticError('conjugate gradient stalled after {} iterations'.format(i), [float(rTr)])
    return x


#solver ======================
@dataclass
class EpsField:
    times: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    eps: float
    axes: list


def solve_u_eps_continuous(model: ContinuousHJModel, T, dt=0.01, record_every=10, burn_in=0.1,
                           validate=True) -> EpsField:
    """
    :burn_in: fraction of T after which ψ must stay in [v_min/2, 2 v_max]
    """
    if T <= 0 or dt <= 0:
        raise ParameterError('T and dt must be positive')
    points, volume = model.grid()
    kernels = torch.as_tensor(np.stack([k(points) for k in model.kernels]), dtype=torch.float64)
    a = torch.as_tensor(model.growth_rate(points), dtype=torch.float64)
    slopes = torch.as_tensor(model.slopes, dtype=torch.float64)
    u = torch.exp(-torch.as_tensor(model.h(points), dtype=torch.float64) / model.eps)
    heat = HeatOperator(model.spacing(), model.boundary, dt * model.eps / 2)

    def resources(u):
        return (kernels * u).flatten(1).sum(dim=1) * volume

    n_steps = int(np.ceil(T / dt - 1e-12))
    times, fields, psis = [0.0], [u.numpy().copy()], [resources(u).numpy()]
    for k in range(1, n_steps + 1):
        psi = resources(u)
        u = u * torch.exp(dt * (a - torch.dot(slopes, psi)) / model.eps)
        u = torch.clamp(conjugate_gradient(heat, u), min=0.0)
        t = k * dt
        if validate and model.psi_box is not None and t >= burn_in * T:
            v_min, v_max = model.psi_box
            current = resources(u)
            if torch.any(current < v_min / 2) or torch.any(current > 2 * v_max):
                raise DiagnosticError('resources {} left the confinement box at t={:.4g}'
                                      .format(current.numpy(), t), [float(x) for x in current])
        if k % record_every == 0 or k == n_steps:
            times.append(t)
            fields.append(u.numpy().copy())
            psis.append(resources(u).numpy())
    return EpsField(np.array(times), np.array(fields), np.array(psis), model.eps, model.axes())


def phi_from_u(u, eps):
    """
    (ε log u, ε log u - max over the trait grid), u floored at the smallest
    positive double
    """
    u = np.asarray(u, dtype=float)
    phi = eps * np.log(np.maximum(u, np.finfo(float).tiny))
    trait_axes = tuple(range(1, phi.ndim)) if phi.ndim > 1 else None
    return phi, phi - phi.max(axis=trait_axes, keepdims=True)


def dominant_trait_path(field: EpsField):
    """
    argmax of φ_ε(t, .) at each recorded time, as trait coordinates
    """
    path = []
    for u in field.u:
        index = np.unravel_index(np.argmax(u), u.shape)
        path.append([axis[i] for axis, i in zip(field.axes, index)])
    return np.array(path)


def sup_distance_normalized(field_a: EpsField, field_b: EpsField):
    """
    sup-norm distance between the max-normalized exponents of two runs on the
    same grid and time points
    """
    _, phi_a = phi_from_u(field_a.u, field_a.eps)
    _, phi_b = phi_from_u(field_b.u, field_b.eps)
    return float(np.max(np.abs(phi_a - phi_b)))
