"""
Quasi-stationary analysis of the penalized Wright-Fisher diffusion on a grid:
principal eigenpair of the killed generator, regime classification against the
boundary rates and threshold scans over the penalty scale or the noise.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from proj_models.errors import DiagnosticError, ParameterError
from proj_models.group_selection import GridMeasure, PenalizedWFModel, fokker_planck_operator, sample_measure
from proj_models.kernel import RngStream, sde_step

log = logging.getLogger(__name__)

REGIMES = ('polymorphic_persists', 'fixation_C', 'fixation_D', 'degenerate')


@dataclass(frozen=True)
class KilledGenerator:
    """
    tridiagonal matrix M of the adjoint WF generator on the interior cells
    (absorbing ends) plus the penalty r, with its symmetrizing diagonal
    similarity: S = T M T^{-1}, T = diag(exp(log_t))
    """
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    outflow: float
    log_t: np.ndarray
    grid_size: int

    @classmethod
    def build(cls, model: PenalizedWFModel, grid_size):
        lower, diag, upper, outflow = fokker_planck_operator(model, grid_size)
        centers = (np.arange(grid_size) + 0.5) / grid_size
        diag = diag + model.r(centers)
        # (t_{k+1} / t_k)^2 = M[k, k+1] / M[k+1, k]
        steps = 0.5 * (np.log(upper[:-1]) - np.log(lower[1:]))
        log_t = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(lower, diag, upper, outflow, log_t - log_t.mean(), grid_size)

    def symmetric(self):
        return self.diag, np.sqrt(self.upper[:-1] * self.lower[1:])

    def apply(self, p):
        out = self.diag * p
        out[1:] += self.lower[1:] * p[:-1]
        out[:-1] += self.upper[:-1] * p[1:]
        return out

    def eigh(self, select=None):
        d, e = self.symmetric()
        try:
            if select is None:
                return linalg.eigh_tridiagonal(d, e)
            return linalg.eigh_tridiagonal(d, e, select='i', select_range=select)
        except (linalg.LinAlgError, ValueError) as err:
            raise DiagnosticError('eigen-solver failed on the killed generator: {}'.format(err), [str(err)])


@dataclass(frozen=True)
class QsdResult:
    """
    :alpha: quasi-stationary law (no atoms)
    :eta: survival capacity on the cell centers, normalized by <alpha, eta> = 1
    :zeta: spectral gap to the second eigenvalue
    :alpha_tilde: second eigenvector (signed, max |.| = 1), candidate
        metastable profile
    :exit_flux: (to 0, to 1) boundary flux of alpha per unit time
    :residual: max |M alpha + rho alpha| / (max |diag M| max alpha)
    """
    alpha: GridMeasure
    rho_alpha: float
    eta: np.ndarray
    zeta: float
    second_eigenvalue: float
    alpha_tilde: np.ndarray
    exit_flux: tuple
    residual: float
    grid_size: int

    def killing_rate(self):
        # part of rho_alpha not explained by exits through 0 and 1
        return self.rho_alpha - sum(self.exit_flux)

    def to_dict(self):
        return {'rho_alpha': self.rho_alpha, 'zeta': self.zeta, 'second_eigenvalue': self.second_eigenvalue,
                'exit_flux_0': self.exit_flux[0], 'exit_flux_1': self.exit_flux[1], 'residual': self.residual,
                'grid_size': self.grid_size}


def compute_qsd(model: PenalizedWFModel, grid_size=400) -> QsdResult:
    if grid_size < 50:
        raise ParameterError('grid_size must be at least 50, got {}'.format(grid_size))
    gen = KilledGenerator.build(model, grid_size)
    values, vectors = gen.eigh(select=(grid_size - 2, grid_size - 1))
    lam1, lam0 = values
    v0, v1 = vectors[:, 1], vectors[:, 0]
    h = 1.0 / grid_size

    v0 = v0 * np.sign(v0.sum())
    alpha = np.maximum(v0 * np.exp(-gen.log_t), 0.0)
    alpha = alpha / (alpha.sum() * h)
    eta = np.maximum(v0 * np.exp(gen.log_t), 0.0)
    eta = eta / (h * np.sum(alpha * eta))

    tilde = v1 * np.exp(-gen.log_t)
    tilde = tilde / tilde[np.argmax(np.abs(tilde))]

    rho = float(-lam0)
    residual = float(np.abs(gen.apply(alpha) + rho * alpha).max() / (np.abs(gen.diag).max() * alpha.max()))
    if residual > 1e-6:
        raise DiagnosticError('QSD residual {:.3g} above 1e-6'.format(residual), [residual])
    flux = (gen.outflow * alpha[0], gen.outflow * alpha[-1])
    return QsdResult(GridMeasure(0.0, 0.0, alpha), rho, eta, float(lam0 - lam1), float(-lam1), tilde,
                     (float(flux[0]), float(flux[1])), residual, grid_size)


#exit split ======================
@dataclass(frozen=True)
class ExitSplit:
    p0: float
    p1: float
    p_killed: float
    stderr: float
    n_paths: int


def exit_split_monte_carlo(model: PenalizedWFModel, qsd: QsdResult, rng: RngStream, n_paths=10000, dt=1e-3,
                           max_time=None) -> ExitSplit:
    """
    P_α(first exit through 0), P_α(through 1) and P_α(killed first) for the
    diffusion started from α and killed at rate -r, by simulating paths with an
    exponential killing clock
    """
    x = sample_measure(qsd.alpha, n_paths, rng)
    spec = model.diffusion()
    clock = rng.exponential(1.0, n_paths)
    hazard = np.zeros(n_paths)
    outcome = np.full(n_paths, -1)
    max_time = max_time or 50.0 / max(qsd.rho_alpha, 1e-6)
    t = 0.0
    while t < max_time and np.any(outcome < 0):
        alive = np.flatnonzero(outcome < 0)
        x[alive] = sde_step(x[alive], spec, dt, rng)
        hazard[alive] -= model.r(x[alive]) * dt
        outcome[alive[x[alive] <= 0.0]] = 0
        outcome[alive[x[alive] >= 1.0]] = 1
        killed = alive[(outcome[alive] < 0) & (hazard[alive] >= clock[alive])]
        outcome[killed] = 2
        t += dt
    counts = np.array([np.count_nonzero(outcome == k) for k in range(3)], dtype=float) / n_paths
    stderr = float(np.sqrt(counts[0] * (1 - counts[0]) / n_paths))
    return ExitSplit(float(counts[0]), float(counts[1]), float(counts[2]), stderr, n_paths)


#regimes ======================
@dataclass
class RegimeReport:
    regime: str
    rho_alpha: float
    rho0: float
    rho1: float
    tolerance: float
    weights: Optional[dict] = None
    candidates: Optional[tuple] = None
    exit_probabilities: Optional[dict] = None
    monte_carlo: Optional[ExitSplit] = None
    qsd: Optional[QsdResult] = field(default=None, repr=False)

    def to_dict(self):
        out = {'regime': self.regime, 'rho_alpha': self.rho_alpha, 'rho0': self.rho0, 'rho1': self.rho1,
               'tolerance': self.tolerance, 'weights': self.weights,
               'candidates': list(self.candidates) if self.candidates else None,
               'exit_probabilities': self.exit_probabilities}
        if self.monte_carlo is not None:
            out['exit_probabilities_mc'] = {'p0': self.monte_carlo.p0, 'p1': self.monte_carlo.p1,
                                            'stderr': self.monte_carlo.stderr, 'n_paths': self.monte_carlo.n_paths}
        if self.qsd is not None:
            out['zeta'] = self.qsd.zeta
            out['residual'] = self.qsd.residual
        return out


def grid_tolerance(model: PenalizedWFModel, grid_size=400):
    coarse = compute_qsd(model, grid_size // 2)
    fine = compute_qsd(model, grid_size)
    return max(10.0 * abs(fine.rho_alpha - coarse.rho_alpha), 1e-9 * max(1.0, abs(fine.rho_alpha))), fine


def classify_regime(model: PenalizedWFModel, grid_size=400, rng: RngStream = None, n_paths=10000) -> RegimeReport:
    """
    polymorphic_persists when ρ_α < ρ_0 ∧ ρ_1, otherwise fixation at the boundary
    with the smaller rate. Mixture weights of the long-time limit follow from the
    exit split of α: y_0 / y_α = ρ_α P_α(τ_0 first) / (ρ_0 - ρ_α), same at 1.
    The exit split is read from the boundary flux of α on the grid; with an rng
    the Monte Carlo estimate is attached as a cross-check.
    """
    tol, qsd = grid_tolerance(model, grid_size)
    rho, rho0, rho1 = qsd.rho_alpha, model.rho0, model.rho1
    boundary = min(rho0, rho1)
    exits = {'p0': qsd.exit_flux[0] / rho, 'p1': qsd.exit_flux[1] / rho} if rho > 0 else None
    report = RegimeReport('degenerate', rho, rho0, rho1, tol, exit_probabilities=exits, qsd=qsd)
    if rng is not None:
        report.monte_carlo = exit_split_monte_carlo(model, qsd, rng, n_paths)

    if abs(rho - boundary) < tol:
        report.candidates = ('polymorphic_persists', 'fixation_C' if rho1 <= rho0 else 'fixation_D')
    elif rho < boundary:
        report.regime = 'polymorphic_persists'
        ratio0 = qsd.exit_flux[0] / (rho0 - rho)
        ratio1 = qsd.exit_flux[1] / (rho1 - rho)
        y_alpha = 1.0 / (1.0 + ratio0 + ratio1)
        y0 = ratio0 * y_alpha
        report.weights = {'y0': y0, 'y1': 1.0 - y0 - y_alpha, 'y_alpha': y_alpha}
    elif abs(rho0 - rho1) < tol:
        report.candidates = ('fixation_C', 'fixation_D')
    else:
        report.regime = 'fixation_C' if rho1 < rho0 else 'fixation_D'
    log.info('regime {} (rho_alpha={:.6g}, rho0={:.6g}, rho1={:.6g})'.format(report.regime, rho, rho0, rho1))
    return report


#scans ======================
@dataclass
class ThresholdScan:
    """
    :bracket: (R_wedge, R_vee), fixation side and polymorphic side of the
        first sign change of ρ_α - ρ_0 ∧ ρ_1, None when the scan is one-sided
    :one_sided: 'fixation' or 'polymorphic' when the margin never changes sign
    """
    scales: np.ndarray
    margins: np.ndarray
    bracket: Optional[tuple]
    iterations: int
    one_sided: Optional[str] = None

    def to_rows(self):
        return [{'R': float(R), 'margin': float(m)} for R, m in zip(self.scales, self.margins)]


def _margin(model, grid_size):
    q = compute_qsd(model, grid_size)
    return q.rho_alpha - min(model.rho0, model.rho1)


def scan_threshold(model: PenalizedWFModel, scales, grid_size=200, max_iter=20) -> ThresholdScan:
    """
    margin ρ_α - ρ_0 ∧ ρ_1 of model.scaled(R) over the scan, then bisection on
    the first sign change until the bracket is below 1e-3 of the scan range
    """
    scales = np.sort(np.asarray(scales, dtype=float))
    if scales.size < 8:
        raise ParameterError('threshold scan needs at least 8 points, got {}'.format(scales.size))
    margins = np.array([_margin(model.scaled(R), grid_size) for R in scales])
    change = np.flatnonzero(np.sign(margins[:-1]) != np.sign(margins[1:]))
    if change.size == 0:
        side = 'fixation' if margins[0] >= 0 else 'polymorphic'
        return ThresholdScan(scales, margins, None, 0, side)

    lo, hi = scales[change[0]], scales[change[0] + 1]
    sign_lo = np.sign(margins[change[0]])
    width = 1e-3 * (scales[-1] - scales[0])
    iterations = 0
    while hi - lo > width and iterations < max_iter:
        mid = 0.5 * (lo + hi)
        if np.sign(_margin(model.scaled(mid), grid_size)) == sign_lo:
            lo = mid
        else:
            hi = mid
        iterations += 1
    bracket = (lo, hi) if sign_lo > 0 else (hi, lo)
    return ThresholdScan(scales, margins, (float(bracket[0]), float(bracket[1])), iterations)


@dataclass
class SigmaScan:
    sigmas: np.ndarray
    rho_alpha: np.ndarray
    boundary_min: float
    increasing: bool
    exceeds_at: Optional[float]

    def to_rows(self):
        return [{'sigma': float(s), 'rho_alpha': float(r)} for s, r in zip(self.sigmas, self.rho_alpha)]


def scan_sigma(model: PenalizedWFModel, sigmas, grid_size=200) -> SigmaScan:
    sigmas = np.sort(np.asarray(sigmas, dtype=float))
    rho = np.array([compute_qsd(model.with_sigma(s), grid_size).rho_alpha for s in sigmas])
    boundary = min(model.rho0, model.rho1)
    above = np.flatnonzero(rho > boundary)
    return SigmaScan(sigmas, rho, boundary, bool(np.all(np.diff(rho) > 0)),
                     float(sigmas[above[0]]) if above.size else None)


#relaxation ======================
@dataclass
class RelaxationReport:
    times: np.ndarray
    tv: np.ndarray
    fitted_rate: float
    zeta: float

    def relative_error(self):
        return abs(self.fitted_rate - self.zeta) / self.zeta


def interior_relaxation(model: PenalizedWFModel, mu0: GridMeasure, times, fit_after=None) -> RelaxationReport:
    """
    total variation between the law conditioned on survival and α over time,
    from the full eigendecomposition of the killed generator; the decay rate is
    a log-linear fit over times >= fit_after
    """
    grid_size = mu0.grid_size
    gen = KilledGenerator.build(model, grid_size)
    values, vectors = gen.eigh()
    qsd = compute_qsd(model, grid_size)
    h = 1.0 / grid_size
    coeffs = vectors.T @ (np.exp(gen.log_t) * mu0.interior_density)
    times = np.asarray(sorted(times), dtype=float)
    tv = np.empty(times.size)
    for k, t in enumerate(times):
        p = np.exp(-gen.log_t) * (vectors @ (coeffs * np.exp((values - values[-1]) * t)))
        p = np.maximum(p, 0.0)
        p = p / (p.sum() * h)
        tv[k] = 0.5 * h * np.abs(p - qsd.alpha.interior_density).sum()
    fit_after = times[len(times) // 3] if fit_after is None else fit_after
    use = (times >= fit_after) & (tv > 1e-10)
    if np.count_nonzero(use) < 2:
        raise DiagnosticError('too few resolvable times to fit a decay rate', list(tv))
    slope = np.polyfit(times[use], np.log(tv[use]), 1)[0]
    return RelaxationReport(times, tv, float(-slope), qsd.zeta)
