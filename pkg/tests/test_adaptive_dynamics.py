import numpy as np
import pytest
from scipy import stats

from get_instances import get_ecology
from proj_models import adaptive_dynamics as ad
from proj_models.errors import DiagnosticError, ParameterError
from proj_models.kernel import RngStream


@pytest.fixture
def linear():
    # b = 1 + x, d = 0, η = C = 1: n̂ = 1 + x and f(y, x) = y - x
    return get_ecology({'name': 'linear', 'box': [0.0, 10.0]})


@pytest.fixture
def peak():
    return get_ecology({'name': 'peak', 'top': 2.0, 'curvature': 1.0, 'center': 0.5})


def test_invasion_fitness_and_equilibrium(linear):
    assert linear.n_hat(2.0) == pytest.approx(3.0)
    assert ad.invasion_fitness(1.0, 0.0, linear) == pytest.approx(1.0)
    assert ad.invasion_fitness(0.0, 0.0, linear) == pytest.approx(0.0)


def test_numeric_gradient_matches_analytic(peak):
    for x in (0.1, 0.3, 0.8):
        assert ad.fitness_gradient(x, peak) == pytest.approx(-2.0 * (x - 0.5), abs=1e-6)


def test_invasion_implies_fixation_labels(linear):
    assert ad.check_invasion_implies_fixation(0.0, 1.0, linear) == (True, 'invasion_fixation')
    assert ad.check_invasion_implies_fixation(1.0, 0.0, linear) == (True, 'no_invasion')


def test_hump_fails_only_on_mirror_pairs():
    hump = get_ecology({'name': 'hump'})
    assert ad.check_invasion_implies_fixation(0.5, -0.5, hump) == (False, 'coexistence_risk')
    violations = ad.find_fixation_violations(hump, 5)
    assert sorted(violations) == [(-1.0, 1.0), (-0.5, 0.5), (0.5, -0.5), (1.0, -1.0)]


def test_ecology_validation():
    with pytest.raises(ParameterError):
        get_ecology({'name': 'linear', 'step_probs': [0.3, 0.3]})
    with pytest.raises(ParameterError):
        get_ecology({'name': 'subcritical', 'birth': 1.0, 'death': 2.0, 'box': [1.0, 0.0]})
    with pytest.raises(ParameterError):
        ad.EcologySpec(ad.constant_fn, ad.constant_fn, ad.constant_fn, ad.constant_fn,
                       marker_generator=np.array([[1.0, -1.0], [0.0, 0.0]]), strict=False)


def test_scaling_defaults():
    regime = ad.ScalingRegime(100)
    assert regime.p_K == pytest.approx(1e-4)
    assert regime.r_K == pytest.approx(10.0)
    assert regime.q_K == pytest.approx(1e-3)
    assert regime.tss_time == pytest.approx(100.0)
    assert regime.cead_time == pytest.approx(100.0)
    report = regime.report()
    assert report['inverse_square_mutation']
    assert not ad.ScalingRegime(100, p_K=1e-3).report()['inverse_square_mutation']
    with pytest.raises(ParameterError):
        ad.ScalingRegime(1)
    with pytest.raises(ParameterError):
        ad.ScalingRegime(100, p_K=2.0)


def test_ibm_relaxes_to_equilibrium(linear):
    regime = ad.ScalingRegime(200, p_K=1e-12)
    path = ad.simulate_ibm(linear, regime, 0.0, 0, 20.0, RngStream(1), n0=100)
    assert not path.extinct
    assert path.sweep_time is None
    assert path.time_average == pytest.approx(linear.n_hat(0.0), rel=0.1)
    assert path.sizes[0] == pytest.approx(0.5)
    assert np.all(path.dominant == 0.0)


def test_ibm_checks_inputs(linear):
    with pytest.raises(ParameterError):
        ad.simulate_ibm(linear, ad.ScalingRegime(5), 0.0, 0, 1.0, RngStream(0))
    with pytest.raises(ParameterError):
        ad.simulate_ibm(linear, ad.ScalingRegime(50), 0.0, 0, 0.0, RngStream(0))


def test_pure_birth_hits_the_cap():
    yule = get_ecology({'name': 'yule', 'birth': 1.0})
    with pytest.raises(DiagnosticError):
        ad.simulate_ibm(yule, ad.ScalingRegime(10), 0.5, 0, 100.0, RngStream(2), n0=10)


def test_subcritical_population_dies_out():
    eco = get_ecology({'name': 'subcritical', 'birth': 1.0, 'death': 2.0})
    path = ad.simulate_ibm(eco, ad.ScalingRegime(10), 0.5, 0, 50.0, RngStream(3), n0=20)
    assert path.extinct
    assert path.final.total_mass() == 0.0


def test_ibm_marker_mutations_change_markers():
    # traits cannot leave [0, 0.5] with unit steps, so only markers move
    eco = get_ecology({'name': 'linear', 'box': [0.0, 0.5], 'marker_rate': 0.5})
    regime = ad.ScalingRegime(100, p_K=1e-3)
    # K p_K A[0, 1] = 0.05 per birth
    path = ad.simulate_ibm(eco, regime, 0.0, 0, 10.0, RngStream(4))
    weights = path.final.marker_weights(0.0, 2)
    assert weights[1] > 0
    assert weights.sum() == pytest.approx(1.0)


def test_marker_kernel_follows_the_mutation_scaling():
    eco = get_ecology({'name': 'linear', 'box': [0.0, 0.5], 'marker_rate': 0.5})
    # default scaling at K = 1000: q_K K A / r_K = A / K per birth
    path = ad.simulate_ibm(eco, ad.ScalingRegime(1000), 0.0, 0, 0.05, RngStream(5))
    assert path.final.total_mass() > 0
    regime = ad.ScalingRegime(10, p_K=0.1, q_K=0.5)
    assert regime.r_K == pytest.approx(5.0)
    assert regime.q_K * regime.K / regime.r_K == pytest.approx(regime.K * regime.p_K)
    with pytest.raises(ParameterError):
        ad.simulate_ibm(eco, ad.ScalingRegime(10, p_K=0.5, q_K=1.0), 0.0, 0, 1.0, RngStream(5))


def test_tss_rates(linear):
    rates = ad.tss_jump_rates(linear, 0.0)
    # downward mutant leaves the box; upward: b n̂ f / b(y) m = 1 * 1 * 1 / 2 * 1/2
    assert rates == pytest.approx([0.0, 0.25])


def test_tss_jumps_climb_the_gradient(linear):
    state = ad.simulate_tss(linear, 0.0, 5.0, RngStream(5))
    rows = state.to_rows()
    assert all(row['fitness'] > 0 for row in rows)
    assert all(row['new_trait'] == row['old_trait'] + 1.0 for row in rows)
    times = state.times()
    assert np.all(np.diff(times) > 0)
    assert state.trait == 0.0 + len(rows)
    if rows:
        assert state.trait_at(times[0], 0.0) == 1.0
        assert state.trait_at(times[0] / 2, 0.0) == 0.0
    assert state.violations == []


@pytest.mark.slow
def test_tss_first_jump_is_exponential(linear):
    first = []
    for r in range(300):
        state = ad.simulate_tss(linear, 0.0, 60.0, RngStream(6).child(r))
        first.append(state.jumps[0][0])
    assert stats.kstest(first, 'expon', args=(0, 1 / 0.25)).pvalue > 1e-3


def test_tss_is_reproducible(linear):
    a = ad.simulate_tss(linear, 0.0, 10.0, RngStream(7, 2))
    b = ad.simulate_tss(linear, 0.0, 10.0, RngStream(7, 2))
    assert a.jumps == b.jumps


def test_cead_linear_solution(linear):
    # speed (1 + x)/2, so x(t) = exp(t/2) - 1
    assert ad.cead_speed(1.0, linear) == pytest.approx(1.0)
    path = ad.integrate_cead(linear, 0.0, 2.0)
    assert not path.singular
    assert path.at(2.0) == pytest.approx(np.e - 1.0, rel=1e-5)
    assert np.all(np.diff(path.traits) >= 0)


def test_cead_stops_at_the_singularity(peak):
    path = ad.integrate_cead(peak, 0.2, 20.0)
    assert path.singular
    assert path.traits[-1] == pytest.approx(0.5, abs=1e-6)
    start = ad.integrate_cead(peak, 0.5, 1.0)
    assert start.singular and start.singular_time == 0.0


def test_tss_approaches_cead_as_steps_shrink(linear):
    rows = ad.tss_cead_distance(linear, 0.0, 1.0, [0.2, 0.05], 20, RngStream(8))
    assert [row['sigma'] for row in rows] == [0.2, 0.05]
    assert rows[1]['distance'] < rows[0]['distance']


def test_multiscale_report(linear):
    regime = ad.ScalingRegime(100, p_K=2e-3)
    report, times = ad.multiscale_compare(linear, regime, 0.0, 2.0, 5, RngStream(9))
    assert report['tss_rate'] == pytest.approx(0.25)
    assert report['sweeps'] == times.size <= 5
    assert np.all((times >= 0) & (times <= 2.0))
    assert report['regime']['K'] == 100


def test_yule_mean_grows_exponentially():
    yule = get_ecology({'name': 'yule', 'birth': 1.0})
    regime = ad.ScalingRegime(10, p_K=1e-12)
    root = RngStream(10)
    sizes = np.array([ad.simulate_ibm(yule, regime, 0.5, 0, 1.0, root.child(r), n0=10).final.total_mass() * 10
                      for r in range(400)])
    stderr = sizes.std(ddof=1) / np.sqrt(sizes.size)
    assert sizes.mean() == pytest.approx(10 * np.e, abs=3 * stderr)


def test_subcritical_extinction_probability():
    b, d, T = 1.0, 2.0, 2.0
    eco = get_ecology({'name': 'subcritical', 'birth': b, 'death': d})
    regime = ad.ScalingRegime(10, p_K=1e-12)
    root = RngStream(11)
    extinct = np.array([ad.simulate_ibm(eco, regime, 0.5, 0, T, root.child(r), n0=1).extinct for r in range(400)])
    # linear birth-death from one individual; competition only adds deaths
    decay = np.exp((b - d) * T)
    lower = d * (1 - decay) / (d - b * decay)
    stderr = np.sqrt(lower * (1 - lower) / extinct.size)
    assert extinct.mean() >= lower - 3 * stderr
    assert extinct.mean() >= 1 - b / d


@pytest.mark.slow
def test_ibm_size_matches_n_hat_at_large_K(linear):
    K = 1000
    path = ad.simulate_ibm(linear, ad.ScalingRegime(K, p_K=1e-12), 0.0, 0, 20.0, RngStream(12), n0=K)
    assert not path.extinct
    assert path.time_average == pytest.approx(linear.n_hat(0.0), rel=0.05)
    assert np.all(path.dominant == 0.0)
