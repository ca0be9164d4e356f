from functools import partial

import numpy as np
import pytest
from scipy import stats

from proj_models.branching import BranchingSpec, FragmentationKernel, simulate_tree, with_generations
from proj_models.errors import ParameterError
from proj_models.kernel import DiffusionSpec, RngStream


def constant_rate(x, value):
    return np.full_like(np.asarray(x, dtype=float), value)


def make_spec(**kwargs):
    params = dict(trait_flow=DiffusionSpec.constant(0.5, 0.1, (0.0, np.inf), 'reflect'),
                  birth_rate=partial(constant_rate, value=1.0), birth_rate_bound=2.0, generations=6)
    params.update(kwargs)
    return BranchingSpec(**params)


def test_full_tree_size():
    tree = simulate_tree(make_spec(keep_rule='full'), RngStream(1))
    assert len(tree) == 2 ** 7 - 1
    assert np.array_equal(tree.generation_sizes(), 2 ** np.arange(7))
    assert np.allclose(tree.generation_ratios(), 1.0)


def test_mother_machine_is_a_line():
    tree = simulate_tree(make_spec(keep_rule='mother_machine'), RngStream(1))
    assert len(tree) == 7
    assert tree.growth_exponent == 0.0


def test_bernoulli_never_empties_a_generation():
    tree = simulate_tree(make_spec(keep_rule='bernoulli', keep_probability=0.5, generations=8), RngStream(2))
    assert np.all(tree.generation_sizes() >= 1)


def test_fragmentation_conserves_trait():
    spec = make_spec(fragmentation=FragmentationKernel('beta', 2.0, 3.0))
    tree = simulate_tree(spec, RngStream(3))
    index = {int(i): k for k, i in enumerate(tree.ids)}
    for parent_id in np.unique(tree.parent_ids[tree.parent_ids >= 0]):
        kids = np.flatnonzero(tree.parent_ids == parent_id)
        assert len(kids) == 2
        assert tree.trait_at_birth[kids].sum() == pytest.approx(tree.trait_at_division[index[int(parent_id)]])


def test_birth_and_division_times_are_consistent():
    tree = simulate_tree(make_spec(), RngStream(4))
    assert np.all(tree.lifetimes() > 0)
    index = {int(i): k for k, i in enumerate(tree.ids)}
    for k in np.flatnonzero(tree.parent_ids >= 0):
        assert tree.birth_time[k] == pytest.approx(tree.division_time[index[int(tree.parent_ids[k])]])


def test_mean_lifetime_matches_constant_rate():
    tree = simulate_tree(make_spec(generations=10), RngStream(5))
    assert abs(tree.lifetimes().mean() - 1.0) < 0.1


def test_same_stream_same_tree():
    a = simulate_tree(make_spec(), RngStream(9, 2))
    b = simulate_tree(make_spec(), RngStream(9, 2))
    assert np.array_equal(a.trait_at_birth, b.trait_at_birth)
    assert np.array_equal(a.division_time, b.division_time)


def test_recorded_paths_cover_every_node():
    tree = simulate_tree(make_spec(record_paths=True, generations=4), RngStream(6))
    assert set(tree.paths) == {int(i) for i in tree.ids}
    ages, values = tree.paths[0]
    assert ages[0] == 0.0 and values[0] == pytest.approx(1.0)


def test_permuted_tree_keeps_pairs():
    tree = simulate_tree(make_spec(generations=4), RngStream(7))
    order = RngStream(8).permutation(len(tree))
    new_ids = np.arange(100, 100 + len(tree))
    shuffled = tree.permuted(order, new_ids)
    assert sorted(zip(*tree.pairs())) == sorted(zip(*shuffled.pairs()))


def test_invalid_specs():
    with pytest.raises(ParameterError):
        make_spec(keep_rule='random')
    with pytest.raises(ParameterError):
        make_spec(keep_rule='bernoulli', keep_probability=0.3)
    with pytest.raises(ParameterError):
        make_spec(birth_rate_bound=0.5)
    with pytest.raises(ParameterError):
        FragmentationKernel('beta', -1.0, 2.0)


def test_with_generations():
    assert with_generations(make_spec(), 3).generations == 3


def halving_spec(generations=8):
    return make_spec(trait_flow=DiffusionSpec.constant(0.0, 0.0, (0.0, np.inf), 'reflect'),
                     fragmentation=FragmentationKernel('half'), generations=generations)


def test_deterministic_halving_divides_the_root_trait():
    tree = simulate_tree(halving_spec(), RngStream(10))
    assert np.allclose(tree.trait_at_birth, 2.0 ** (-tree.generation.astype(float)))
    assert np.allclose(tree.trait_at_division, tree.trait_at_birth)


def test_lifetimes_are_exponential_under_a_constant_rate():
    tree = simulate_tree(make_spec(generations=10), RngStream(11))
    lifetimes = tree.lifetimes()
    assert len(lifetimes) == 2 ** 11 - 1
    assert stats.kstest(lifetimes, 'expon').pvalue > 1e-3
