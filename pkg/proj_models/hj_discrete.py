"""
Small-mutation limit on a finite trait set.

φ(t, i) is the exponential order of the density of trait i. Between
catastrophes the resources ψ̄ are frozen at the Lotka-Volterra equilibrium of
the traits at φ = 0, every trait grows at rate g_j = R(j, ψ̄) and

    φ(t, i) = max_j [φ(t0, j) + g_j (t - t0) - C(j, i)]

with C the min-plus closure of the mutation costs. A catastrophe is the first
time a trait with φ < 0 reaches 0.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from proj_models.errors import DiagnosticError, ParameterError
from proj_models.lotka_volterra import DiscreteTraitModel, lv_equilibrium

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


#costs ======================
def cost_closure(cost):
    """
    cheapest chain of mutations from j to i (Floyd-Warshall in the min-plus
    semiring)
    """
    closure = np.array(cost, dtype=float)
    for k in range(closure.shape[0]):
        closure = np.minimum(closure, closure[:, k:k + 1] + closure[k:k + 1, :])
    return closure


#schedules and solutions ======================
@dataclass(frozen=True)
class PsiSchedule:
    """
    right-continuous step function: ψ̄(t) = psis[k] on [times[k], times[k+1])
    """
    times: np.ndarray
    psis: np.ndarray

    def __call__(self, t):
        k = int(np.searchsorted(self.times, t, side='right')) - 1
        return self.psis[max(k, 0)]

    @classmethod
    def constant(cls, psi):
        return cls(np.array([0.0]), np.atleast_2d(np.asarray(psi, dtype=float)))


@dataclass
class Segment:
    start: float
    end: float
    phi_start: np.ndarray
    growth: np.ndarray
    psi: np.ndarray
    active: tuple


@dataclass
class PhiSolution:
    """
    :phi: (len(times), n_states), -inf for unreachable states
    :psi: (len(times), n_resources), right-continuous
    :active_sets: (start time, support of the equilibrium) per segment
    :chain_events: (time, state, new argmax state) where the maximizing
        ancestor of a state changes
    """
    times: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    catastrophe_times: list
    active_sets: list
    chain_events: list = field(default_factory=list)
    segments: list = field(default_factory=list, repr=False)
    closure: Optional[np.ndarray] = field(default=None, repr=False)
    floor: float = np.inf

    def schedule(self):
        starts = np.array([s.start for s in self.segments])
        return PsiSchedule(starts, np.array([s.psi for s in self.segments]))

    def phi_at(self, t):
        for seg in self.segments:
            if seg.start <= t < seg.end:
                break
        else:
            seg = self.segments[-1]
        return _propagate(seg.phi_start, seg.growth, t - seg.start, self.closure)

    def unreachable(self):
        return [int(k) for k in np.flatnonzero(np.isneginf(self.phi[-1]))]

    def to_rows(self, states):
        rows = []
        for t, phi, psi in zip(self.times, self.phi, self.psi):
            row = {'t': float(t)}
            row.update({'phi_{}'.format(s): float(v) for s, v in zip(states, phi)})
            row.update({'psi_{}'.format(i): float(v) for i, v in enumerate(psi)})
            rows.append(row)
        return rows

    def events(self, states):
        return {'catastrophe_times': [float(t) for t in self.catastrophe_times],
                'active_sets': [{'t': float(t), 'support': [states[k] for k in a]} for t, a in self.active_sets],
                'chain_events': [{'t': float(t), 'state': states[i], 'ancestor': states[j]}
                                 for t, i, j in self.chain_events],
                'unreachable': [states[k] for k in self.unreachable()]}


def _propagate(phi, growth, tau, closure):
    with np.errstate(invalid='ignore'):
        candidates = phi[:, None] + growth[:, None] * tau - closure
    candidates = np.where(np.isnan(candidates), -np.inf, candidates)
    return candidates.max(axis=0)


def _equilibrium_on(model, phi, cache):
    zero = tuple(int(k) for k in np.flatnonzero(phi >= -TIE_TOL))
    if zero not in cache:
        cache[zero] = lv_equilibrium(model, zero)
    return cache[zero]


def _argmax_breaks(phi, growth, closure, start, end):
    """
    times in (start, end) where the maximizing j of φ(t, i) changes, for every i
    """
    events = []
    n = phi.size
    tau_end = end - start
    for i in range(n):
        intercept = phi - closure[:, i]
        finite = np.flatnonzero(np.isfinite(intercept))
        if finite.size < 2:
            continue
        tau = 0.0
        current = finite[np.argmax(intercept[finite] + growth[finite] * 1e-12)]
        while True:
            faster = finite[growth[finite] > growth[current]]
            if faster.size == 0:
                break
            cross = (intercept[current] - intercept[faster]) / (growth[faster] - growth[current])
            ok = cross > tau + TIE_TOL
            if not ok.any():
                break
            k = np.argmin(np.where(ok, cross, np.inf))
            if cross[k] >= tau_end:
                break
            tau, current = cross[k], faster[k]
            events.append((start + tau, i, int(current)))
    return events


#event-driven solver ======================
def solve_phi_discrete(model: DiscreteTraitModel, T, n_points=201) -> PhiSolution:
    """
    exact piecewise-linear solution; catastrophes are located in closed form,
    φ is sampled on a uniform grid merged with the event times
    """
    if T <= 0:
        raise ParameterError('horizon must be positive')
    closure = cost_closure(model.cost)
    cache = {}
    phi = _propagate(model.phi0(), np.zeros(model.n_states), 0.0, closure)
    t = 0.0
    segments, catastrophes, active_sets, chains = [], [], [], []
    while True:
        phi = np.where(phi >= -TIE_TOL, 0.0, phi)
        eq = _equilibrium_on(model, phi, cache)
        # zero-set traits left out of the support start to decline
        growth = model.growth(eq.resources)
        invaders = np.flatnonzero((growth > 0) & (phi < 0))
        hit = np.min(-phi[invaders] / growth[invaders]) if invaders.size else np.inf
        end = min(T, t + hit)
        segments.append(Segment(t, end if end < T else np.inf, phi.copy(), growth, eq.resources, eq.support))
        active_sets.append((t, eq.support))
        chains.extend(_argmax_breaks(phi, growth, closure, t, end))
        if end >= T:
            break
        phi = _propagate(phi, growth, end - t, closure)
        t = end
        catastrophes.append(t)
        log.info('catastrophe at t={:.6g}'.format(t))

    times = np.union1d(np.linspace(0.0, T, n_points), np.array(catastrophes))
    sol = PhiSolution(times, None, None, catastrophes, active_sets, chains, segments, closure)
    sol.phi = np.array([sol.phi_at(s) for s in times])
    sched = sol.schedule()
    sol.psi = np.array([sched(s) for s in times])
    return sol


#dynamic programming oracle ======================
def dp_time_step(model: DiscreteTraitModel):
    # min(0.01, min cost / (4 max |R|)), |R| bounded by the resource-free rates
    n = model.n_states
    off = model.cost[~np.eye(n, dtype=bool)]
    min_cost = off.min() if off.size else np.inf
    return min(0.01, min_cost / (4.0 * max(np.abs(model.growth_rate).max(), 1e-12)))


def _relax_jumps(values, cost, floor):
    """
    instantaneous mutation chains by Bellman-Ford rounds on the raw costs;
    a jump landing below the floor is not admissible
    """
    for _ in range(max(values.size - 1, 1)):
        with np.errstate(invalid='ignore'):
            jumped = (values[:, None] - cost).max(axis=0)
        jumped = np.where(jumped < -floor, -np.inf, jumped)
        updated = np.maximum(values, jumped)
        if np.array_equal(updated, values):
            break
        values = updated
    return values


def _dynamic_program(model: DiscreteTraitModel, T, schedule: PsiSchedule = None, floor=np.inf, dt=None):
    """
    Bellman recursion over a time grid: stay during a step (collecting
    g_j dt), then chain any number of mutations. With a schedule ψ̄ is imposed;
    without, ψ̄ follows the equilibrium of the current zero set and
    catastrophes are relocated exactly inside a step.
    """
    dt = dt or dp_time_step(model)
    values = model.phi0().astype(float)
    values = np.where(values < -floor, -np.inf, values)
    values = _relax_jumps(values, model.cost, floor)
    breaks = list(schedule.times[schedule.times > 0]) if schedule is not None else []
    grid = np.union1d(np.linspace(0.0, T, int(np.ceil(T / dt)) + 1), [b for b in breaks if b < T])
    cache = {}
    times, history, psis, catastrophes, active_sets = [0.0], [values.copy()], [], [], []

    def current_psi(t, vals):
        if schedule is not None:
            return schedule(t), None
        eq = _equilibrium_on(model, np.where(vals >= -TIE_TOL, 0.0, vals), cache)
        return eq.resources, eq.support

    t = 0.0
    psi, support = current_psi(t, values)
    psis.append(psi)
    if support is not None:
        active_sets.append((0.0, support))
    for t_next in grid[1:]:
        while t < t_next - 1e-15:
            step = t_next - t
            growth = model.growth(psi)
            if schedule is None:
                climbing = np.flatnonzero((growth > 0) & np.isfinite(values) & (values < -TIE_TOL))
                if climbing.size:
                    hit = np.min(-values[climbing] / growth[climbing])
                    step = min(step, hit)
            with np.errstate(invalid='ignore'):
                stayed = values + growth * step
            stayed = np.where(np.isnan(stayed), -np.inf, stayed)
            stayed = np.where(stayed < -floor, -np.inf, stayed)
            values = _relax_jumps(stayed, model.cost, floor)
            t = t + step
            if schedule is None:
                values = np.where(np.abs(values) <= TIE_TOL, 0.0, values)
                new_psi, new_support = current_psi(t, values)
                if new_support != support:
                    catastrophes.append(t)
                    active_sets.append((t, new_support))
                    if t < t_next - 1e-15:
                        times.append(t)
                        history.append(values.copy())
                        psis.append(new_psi)
                psi, support = new_psi, new_support
            else:
                psi = schedule(t)
        times.append(t_next)
        history.append(values.copy())
        psis.append(psi)
    return np.array(times), np.array(history), np.array(psis), catastrophes, active_sets


def variational_phi_discrete(model: DiscreteTraitModel, t, i=None, schedule: PsiSchedule = None, dt=None):
    """
    sup over mutation paths ending at i of φ(0, y_0) + ∫ R(y_s, ψ̄_s) ds minus
    the costs of the jumps, normalized to max 0; without a schedule ψ̄ is taken
    from solve_phi_discrete
    """
    if t < 0:
        raise ParameterError('t must be nonnegative')
    if t == 0:
        values = model.phi0()
    else:
        if schedule is None:
            schedule = solve_phi_discrete(model, t).schedule()
        _, history, _, _, _ = _dynamic_program(model, t, schedule=schedule, dt=dt)
        values = history[-1]
    values = values - values.max()
    return values if i is None else float(values[i])


def truncated_phi(model: DiscreteTraitModel, T, floor, dt=None) -> PhiSolution:
    """
    φ with every path discarded once its running value drops below -floor;
    ψ̄ follows the equilibrium of the truncated zero set
    """
    if not floor > 0:
        raise ParameterError('truncation level must be positive')
    times, history, psis, catastrophes, active_sets = _dynamic_program(model, T, floor=floor, dt=dt)
    return PhiSolution(times, history, psis, catastrophes, active_sets, closure=cost_closure(model.cost),
                       floor=floor)


#ε-system ======================
@dataclass
class EpsTrajectory:
    times: np.ndarray
    log_u: np.ndarray
    psi: np.ndarray
    eps: float
    rejected_steps: int = 0

    def phi(self):
        return self.eps * self.log_u

    def phi_normalized(self):
        phi = self.phi()
        return phi - phi.max(axis=1, keepdims=True)


def solve_u_eps_discrete(model: DiscreteTraitModel, eps, T, dt=None, max_psi_change=0.05, min_dt=None):
    """
    du_k = Σ_j e^{-C(j,k)/ε} (u_j - u_k) dt + u_k R(k, ψ)/ε dt in log form;
    the reaction is an integrating factor with Heun-averaged growth, the
    mutation gain is added exactly in log space. A step is rejected and halved
    when ψ moves by more than max_psi_change (relative).
    """
    if eps <= 0:
        raise ParameterError('eps must be positive')
    dt0 = dt or eps / 100.0
    min_dt = min_dt or dt0 * 2.0**-20
    with np.errstate(divide='ignore', over='ignore'):
        log_rate = -model.cost / eps
    np.fill_diagonal(log_rate, -np.inf)
    loss = np.exp(logsumexp(log_rate, axis=0))

    v = -(model.h - model.h.min()) / eps
    t, step = 0.0, dt0
    times, values, psis = [0.0], [v.copy()], [model.resources(np.exp(v))]
    rejected = 0

    while t < T - 1e-12:
        step = min(step, T - t)
        psi = model.resources(np.exp(v))
        g = model.growth(psi) / eps - loss
        v_pred = v + step * g
        g_pred = model.growth(model.resources(np.exp(v_pred))) / eps - loss
        v_new = v + 0.5 * step * (g + g_pred)
        gain = logsumexp(log_rate + v[:, None], axis=0)
        v_new = np.logaddexp(v_new, np.log(step) + gain)
        psi_new = model.resources(np.exp(v_new))
        change = np.max(np.abs(psi_new - psi) / np.maximum(np.abs(psi), 1e-12))
        if change > max_psi_change:
            rejected += 1
            step /= 2
            if step < min_dt:
                raise DiagnosticError('step rejection cascade at t={:.6g}; retry with dt below {:.3g}'
                                      .format(t, min_dt), [rejected])
            continue
        v, t = v_new, t + step
        times.append(t)
        values.append(v.copy())
        psis.append(psi_new)
        step = min(dt0, 1.5 * step)
    return EpsTrajectory(np.array(times), np.array(values), np.array(psis), eps, rejected)


def eps_distance(traj: EpsTrajectory, solution: PhiSolution):
    """
    sup over recorded (t, i) of |ε log u^ε(t, i) - φ(t, i)|
    """
    phi = np.array([solution.phi_at(t) for t in traj.times])
    reachable = np.isfinite(phi)
    return float(np.max(np.abs(traj.phi()[reachable] - phi[reachable])))
