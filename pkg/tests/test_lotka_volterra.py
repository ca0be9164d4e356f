import itertools

import numpy as np
import pytest

from get_instances import get_discrete_model
from proj_models.errors import AssumptionHViolated, ParameterError
from proj_models.lotka_volterra import DiscreteTraitModel, lv_equilibrium


def one_resource(growth_rate, h=None):
    n = len(growth_rate)
    idx = np.arange(n)
    return DiscreteTraitModel(states=tuple('x{}'.format(k) for k in idx), cost=0.5 * np.abs(idx[:, None] - idx),
                              growth_rate=np.asarray(growth_rate, dtype=float), slopes=np.ones((n, 1)),
                              kernels=np.ones((1, n)), h=np.zeros(n) if h is None else np.asarray(h))


def test_single_resource_keeps_the_fittest():
    eq = lv_equilibrium(one_resource([1.0, 1.5, 2.0]), (0, 1))
    assert eq.support == (1,)
    assert eq.resources == pytest.approx([1.5])
    assert eq.densities[0] == 0.0
    assert np.all(eq.eigenvalues.real < 0)
    assert not eq.degenerate


def test_two_resources_allow_coexistence():
    model = DiscreteTraitModel(states=('a', 'b'), cost=np.array([[0.0, 1.0], [1.0, 0.0]]),
                               growth_rate=np.array([1.0, 1.0]), slopes=np.eye(2) * 0.9 + 0.1,
                               kernels=np.eye(2) * 0.9 + 0.1, h=np.zeros(2))
    eq = lv_equilibrium(model, (0, 1))
    assert eq.support == (0, 1)
    growth = model.growth(eq.resources)
    assert np.allclose(growth, 0.0, atol=1e-8)


def test_equal_rates_are_degenerate():
    eq = lv_equilibrium(one_resource([1.0, 1.0]), (0, 1))
    assert eq.degenerate
    assert eq.resources == pytest.approx([1.0])
    assert len(eq.alternatives) >= 1


def test_bistable_competition_violates_uniqueness():
    model = DiscreteTraitModel(states=('a', 'b'), cost=np.array([[0.0, 1.0], [1.0, 0.0]]),
                               growth_rate=np.array([1.0, 1.0]), slopes=np.array([[0.1, 10.0], [10.0, 0.1]]),
                               kernels=np.array([[1.0, 0.1], [0.1, 1.0]]), h=np.zeros(2))
    with pytest.raises(AssumptionHViolated) as info:
        lv_equilibrium(model, (0, 1))
    assert info.value.active == (0, 1)


def test_model_validation():
    with pytest.raises(ParameterError):
        one_resource([1.0, 2.0], h=[0.0])
    with pytest.raises(ParameterError):
        DiscreteTraitModel(states=('a', 'b'), cost=np.zeros((2, 2)), growth_rate=[1.0, 1.0],
                           slopes=np.ones((2, 1)), kernels=np.ones((1, 2)), h=[0.0, 0.0])
    with pytest.raises(ParameterError):
        lv_equilibrium(one_resource([1.0]), ())


def test_phi0_is_normalized():
    model = one_resource([1.0, 1.5, 2.0], h=[0.2, 0.5, 1.2])
    assert model.phi0().max() == 0.0
    assert model.phi0() == pytest.approx([0.0, -0.3, -1.0])


def test_logistic_single_state():
    eq = lv_equilibrium(one_resource([1.0]), (0,))
    assert eq.support == (0,)
    assert eq.densities == pytest.approx([1.0])
    assert eq.resources == pytest.approx([1.0])
    assert eq.eigenvalues.real == pytest.approx([-1.0])


@pytest.mark.parametrize('name', ['three_state', 'two_state'])
def test_equilibrium_restricts_to_its_support(name):
    model = get_discrete_model({'name': name})
    states = range(model.n_states)
    actives = [a for size in range(1, model.n_states + 1) for a in itertools.combinations(states, size)]
    for active in actives:
        eq = lv_equilibrium(model, active)
        restricted = lv_equilibrium(model, eq.support)
        assert restricted.support == eq.support
        assert restricted.densities == pytest.approx(eq.densities, abs=1e-8)
        assert restricted.resources == pytest.approx(eq.resources, rel=1e-8)
