"""
Trait-structured cell division on regular incomplete binary trees.

Each kept individual carries a trait that follows a diffusion from its trait at
birth; it divides at the first event of a Poisson clock of intensity B(X_s).
The trait at division is shared between the two offspring (fragmentation) or,
for the estimator test models, offspring traits are redrawn from a fixed law.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from proj_models.errors import ParameterError
from proj_models.kernel import DiffusionSpec, RngStream, sde_step

log = logging.getLogger(__name__)

KEEP_RULES = ('mother_machine', 'full', 'bernoulli')


#fragmentation ======================
@dataclass(frozen=True)
class FragmentationKernel:
    """
    law of the share θ of the dividing trait given to the first offspring

    :kind: 'beta' (density Beta(a, b) on [0, 1]) or 'half' (θ = 1/2 exactly)
    """
    kind: str = 'beta'
    a: float = 2.0
    b: float = 2.0

    def __post_init__(self):
        if self.kind not in ('beta', 'half'):
            raise ParameterError('unknown fragmentation kernel {}'.format(self.kind))
        if self.kind == 'beta':
            if self.a <= 0 or self.b <= 0:
                raise ParameterError('beta parameters must be positive')
            mass, _ = integrate.quad(self.pdf, 0.0, 1.0)
            if abs(mass - 1.0) > 1e-9:
                raise ParameterError('fragmentation density integrates to {}'.format(mass))

    def pdf(self, theta):
        return stats.beta.pdf(theta, self.a, self.b)

    def sample(self, rng: RngStream, size):
        if self.kind == 'half':
            return np.full(size, 0.5)
        return rng.beta(self.a, self.b, size)

    def lower_bound(self, margin=0.05):
        """
        inf of the density on [margin, 1 - margin]
        """
        if self.kind == 'half':
            return 0.0
        theta = np.linspace(margin, 1 - margin, 201)
        return float(self.pdf(theta).min())


@dataclass(frozen=True)
class BranchingSpec:
    """
    :birth_rate: vectorized B(x), must stay in (0, birth_rate_bound]
    :transition: 'fragmentation' (θy, (1-θ)y) or 'resample' (offspring traits
        i.i.d. Beta(resample_law) whatever the parent)
    :keep_bias: optional trait -> keep probability; replaces keep_probability
        under the bernoulli rule and makes the genealogy trait dependent
    :dt: Euler-Maruyama step of the trait flow
    """
    trait_flow: DiffusionSpec
    birth_rate: Callable
    birth_rate_bound: float
    fragmentation: FragmentationKernel = field(default_factory=FragmentationKernel)
    generations: int = 10
    keep_rule: str = 'full'
    keep_probability: float = 1.0
    root_trait: float = 1.0
    transition: str = 'fragmentation'
    resample_law: tuple = (2.0, 2.0)
    keep_bias: Optional[Callable] = None
    dt: float = 0.01
    record_paths: bool = False

    def __post_init__(self):
        if self.generations < 0:
            raise ParameterError('generations must be nonnegative')
        if self.keep_rule not in KEEP_RULES:
            raise ParameterError('unknown keep rule {}'.format(self.keep_rule))
        if self.keep_rule == 'bernoulli' and not 0.5 <= self.keep_probability <= 1.0:
            raise ParameterError('bernoulli keep probability must lie in [1/2, 1]')
        if not (np.isfinite(self.birth_rate_bound) and self.birth_rate_bound > 0):
            raise ParameterError('birth rate bound must be positive and finite')
        if self.transition not in ('fragmentation', 'resample'):
            raise ParameterError('unknown transition {}'.format(self.transition))
        if self.dt <= 0:
            raise ParameterError('dt must be positive')
        grid = np.linspace(0.0, 2 * max(abs(self.root_trait), 1.0), 64)
        rates = np.asarray(self.birth_rate(grid), dtype=float)
        if np.any(rates <= 0) or np.any(rates > self.birth_rate_bound * (1 + 1e-12)):
            raise ParameterError('birth rate must lie in (0, {}] on compacts'.format(self.birth_rate_bound))
        if self.keep_bias is not None:
            log.warning('trait-dependent keep rule enabled: the genealogy is no longer prescribed')

    @property
    def growth_exponent(self):
        if self.keep_rule == 'mother_machine':
            return 0.0
        if self.keep_rule == 'full':
            return 1.0
        return float(np.clip(np.log2(2 * self.keep_probability), 0.0, 1.0))


#tree ======================
@dataclass
class LineageTree:
    """
    genealogy stored column-wise, one row per kept individual

    :parent_ids: -1 for the root
    :division_time: absolute time of division (observed for every node)
    :paths: optional id -> (ages, trait values) along the lifetime
    """
    ids: np.ndarray
    parent_ids: np.ndarray
    generation: np.ndarray
    trait_at_birth: np.ndarray
    birth_time: np.ndarray
    division_time: np.ndarray
    trait_at_division: np.ndarray
    growth_exponent: float
    paths: Optional[dict] = None

    def __len__(self):
        return len(self.ids)

    def _index(self):
        return {int(node_id): i for i, node_id in enumerate(self.ids)}

    def pairs(self):
        """
        (X_{u-}, X_u) for every non-root node: trait at birth of the parent and
        of the node
        """
        index = self._index()
        child = np.flatnonzero(self.parent_ids >= 0)
        parent = np.array([index[int(p)] for p in self.parent_ids[child]], dtype=int)
        return self.trait_at_birth[parent], self.trait_at_birth[child]

    def lifetimes(self):
        return self.division_time - self.birth_time

    def generation_sizes(self):
        return np.bincount(self.generation)

    def generation_ratios(self):
        sizes = self.generation_sizes()
        return sizes * 2.0 ** (-self.growth_exponent * np.arange(len(sizes)))

    def permuted(self, order, new_ids):
        """
        same genealogy with rows reordered by `order` and ids relabeled through
        the mapping old id -> new_ids[old position]
        """
        mapping = {int(old): int(new) for old, new in zip(self.ids, new_ids)}
        mapping[-1] = -1
        relabel = np.vectorize(lambda i: mapping[int(i)], otypes=[int])
        paths = None
        if self.paths is not None:
            paths = {mapping[k]: v for k, v in self.paths.items()}
        return LineageTree(relabel(self.ids)[order], relabel(self.parent_ids)[order], self.generation[order],
                           self.trait_at_birth[order], self.birth_time[order], self.division_time[order],
                           self.trait_at_division[order], self.growth_exponent, paths)

    def to_rows(self):
        return [{'id': int(self.ids[i]), 'parent_id': int(self.parent_ids[i]), 'generation': int(self.generation[i]),
                 'birth_time': float(self.birth_time[i]), 'division_time': float(self.division_time[i]),
                 'trait': float(self.trait_at_birth[i])} for i in range(len(self))]


#simulation ======================
def _run_lifetimes(x_birth, spec: BranchingSpec, rng: RngStream):
    """
    runs the trait flow of every lineage in parallel until its division clock
    rings; candidate ring times come from a homogeneous clock at the rate bound
    and are accepted with probability B(X)/bound (thinning)
    """
    m = len(x_birth)
    bound = spec.birth_rate_bound
    x = np.array(x_birth, dtype=float)
    age = np.zeros(m)
    candidate = rng.exponential(1.0 / bound, m)
    alive = np.ones(m, dtype=bool)
    division_age = np.full(m, np.nan)
    trait_division = np.full(m, np.nan)
    records = [(np.arange(m), age.copy(), x.copy())] if spec.record_paths else None

    while alive.any():
        idx = np.flatnonzero(alive)
        remaining = candidate[idx] - age[idx]
        hit = remaining <= spec.dt
        h = np.maximum(np.where(hit, remaining, spec.dt), np.finfo(float).tiny)
        x[idx] = sde_step(x[idx], spec.trait_flow, h, rng)
        age[idx] = np.where(hit, candidate[idx], age[idx] + spec.dt)
        if records is not None:
            records.append((idx, age[idx].copy(), x[idx].copy()))

        ring = idx[hit]
        if ring.size == 0:
            continue
        rate = np.asarray(spec.birth_rate(x[ring]), dtype=float)
        if np.any(rate > bound * (1 + 1e-12)) or np.any(rate < 0):
            raise ParameterError('birth rate {} exceeds its bound {} along a path'.format(rate.max(), bound))
        accept = rng.random(ring.size) * bound < rate
        divided = ring[accept]
        alive[divided] = False
        division_age[divided] = age[divided]
        trait_division[divided] = x[divided]
        rejected = ring[~accept]
        candidate[rejected] += rng.exponential(1.0 / bound, rejected.size)

    paths = None
    if records is not None:
        who = np.concatenate([r[0] for r in records])
        ages = np.concatenate([r[1] for r in records])
        values = np.concatenate([r[2] for r in records])
        order = np.argsort(who, kind='stable')
        splits = np.cumsum(np.bincount(who, minlength=m))[:-1]
        paths = list(zip(np.split(ages[order], splits), np.split(values[order], splits)))
    return division_age, trait_division, paths


def _offspring_traits(y, spec: BranchingSpec, rng: RngStream):
    if spec.transition == 'resample':
        a, b = spec.resample_law
        return rng.beta(a, b, (len(y), 2))
    theta = spec.fragmentation.sample(rng, len(y))
    return np.stack([theta * y, (1.0 - theta) * y], axis=1)


def _keep_mask(children, spec: BranchingSpec, rng: RngStream):
    n_parents = children.shape[0]
    if spec.keep_rule == 'full':
        return np.ones((n_parents, 2), dtype=bool)
    if spec.keep_rule == 'mother_machine':
        keep = np.zeros((n_parents, 2), dtype=bool)
        keep[:, 0] = True
        return keep
    if spec.keep_bias is not None:
        p = np.clip(np.asarray(spec.keep_bias(children), dtype=float), 0.0, 1.0)
    else:
        p = spec.keep_probability
    keep = rng.random((n_parents, 2)) < p
    if not keep.any():
        # a generation never dies out entirely
        keep.flat[rng.integers(keep.size)] = True
    return keep


def simulate_tree(spec: BranchingSpec, rng: RngStream) -> LineageTree:
    ids, parents, gens, x_birth, t_birth, t_div, x_div = [], [], [], [], [], [], []
    paths = {} if spec.record_paths else None

    current_ids = np.array([0])
    current_parents = np.array([-1])
    current_x = np.array([spec.root_trait], dtype=float)
    current_t = np.zeros(1)
    next_id = 1

    for g in range(spec.generations + 1):
        division_age, trait_division, lifetime_paths = _run_lifetimes(current_x, spec, rng)
        ids.append(current_ids)
        parents.append(current_parents)
        gens.append(np.full(len(current_ids), g))
        x_birth.append(current_x)
        t_birth.append(current_t)
        t_div.append(current_t + division_age)
        x_div.append(trait_division)
        if paths is not None:
            for node_id, path in zip(current_ids, lifetime_paths):
                paths[int(node_id)] = path
        if g == spec.generations:
            break

        children = _offspring_traits(trait_division, spec, rng)
        keep = _keep_mask(children, spec, rng)
        parent_rows, slot = np.nonzero(keep)
        current_parents = current_ids[parent_rows]
        current_x = children[parent_rows, slot]
        current_t = (current_t + division_age)[parent_rows]
        current_ids = np.arange(next_id, next_id + len(parent_rows))
        next_id += len(parent_rows)

    return LineageTree(np.concatenate(ids), np.concatenate(parents), np.concatenate(gens),
                       np.concatenate(x_birth), np.concatenate(t_birth), np.concatenate(t_div),
                       np.concatenate(x_div), spec.growth_exponent, paths)


def with_generations(spec: BranchingSpec, generations):
    return replace(spec, generations=generations)
