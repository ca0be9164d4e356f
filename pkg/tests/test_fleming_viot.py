import numpy as np
import pytest

from get_instances import get_ecology
from proj_models.adaptive_dynamics import simulate_tss
from proj_models.errors import ParameterError
from proj_models.fleming_viot import MarkerDistribution, evolve_marker, simulate_sfvp, stationary_marker_law
from proj_models.kernel import RngStream


@pytest.fixture
def neutral():
    return get_ecology({'name': 'linear', 'box': [0.0, 10.0]})


@pytest.fixture
def mutating():
    return get_ecology({'name': 'linear', 'box': [0.0, 10.0], 'marker_rate': 0.5})


def test_from_weights_rounds_to_total():
    dist = MarkerDistribution.from_weights([0.3333, 0.3333, 0.3334], 100)
    assert dist.n_particles == 100
    assert np.abs(dist.weights - [0.3333, 0.3333, 0.3334]).max() < 0.01
    with pytest.raises(ParameterError):
        MarkerDistribution.from_weights([0.5, 0.6], 100)


def test_point_mass_is_fixed():
    dist = MarkerDistribution.point_mass(1, 3, 200)
    assert dist.is_fixed()
    assert dist.sample(RngStream(0)) == 1


def test_too_few_particles(neutral):
    with pytest.raises(ParameterError):
        evolve_marker(MarkerDistribution([10, 10]), 0.0, neutral, 1.0, RngStream(0))
    with pytest.raises(ParameterError):
        simulate_sfvp(neutral, 0.0, 0, 1.0, 50, RngStream(0))


@pytest.mark.slow
def test_resampling_keeps_mean_and_erodes_heterozygosity(neutral):
    # γ = b/n̂ = 1 at x = 0, so E[w(1 - w)] = 0.25 exp(-2 γ t)
    start = MarkerDistribution([50, 50])
    final = np.array([evolve_marker(start, 0.0, neutral, 0.5, RngStream(1).child(r)).weights[0]
                      for r in range(200)])
    assert final.mean() == pytest.approx(0.5, abs=0.1)
    assert np.mean(final * (1 - final)) == pytest.approx(0.25 * np.exp(-1.0), abs=0.025)


def test_fixed_ensemble_without_mutation_stays_fixed(neutral):
    dist = evolve_marker(MarkerDistribution.point_mass(0, 2, 100), 0.0, neutral, 5.0, RngStream(2))
    assert dist.is_fixed()


def test_stationary_law():
    assert stationary_marker_law([[-1.0, 1.0], [2.0, -2.0]]) == pytest.approx([2 / 3, 1 / 3])


def test_sfvp_trait_log_matches_tss(mutating):
    path = simulate_sfvp(mutating, 0.0, 0, 8.0, 100, RngStream(3, 1))
    tss = simulate_tss(mutating, 0.0, 8.0, RngStream(3, 1))
    assert [j[:4] for j in path.tss.jumps] == [j[:4] for j in tss.jumps]
    assert len(path.collapses) == len(tss.jumps)
    for jump, (t, marker) in zip(path.tss.jumps, path.collapses):
        assert jump[0] == t
        assert jump[4] == mutating.markers[marker]


def test_sfvp_records_weights(mutating):
    path = simulate_sfvp(mutating, 0.0, 1, 4.0, 120, RngStream(4), record_dt=0.1)
    assert path.times[0] == 0.0
    assert path.times[-1] == pytest.approx(4.0)
    assert np.allclose(path.weights.sum(axis=1), 1.0)
    assert path.weights[0] == pytest.approx([0.0, 1.0])
    rows = path.to_rows(mutating.markers)
    assert set(rows[0]) == {'t', 'trait', 'w_0', 'w_1'}
    assert path.time_average().sum() == pytest.approx(1.0)
    assert path.tss.marker.n_particles == 120


@pytest.mark.slow
def test_mean_weight_relaxes_at_the_mutation_rate(mutating):
    # symmetric A with rate a = 0.5 and b(0) = 1: E[w_0] = 1/2 + 1/2 exp(-2 b a t)
    start = MarkerDistribution.point_mass(0, 2, 100)
    root = RngStream(5)
    final = np.array([evolve_marker(start, 0.0, mutating, 1.0, root.child(r)).weights[0] for r in range(300)])
    stderr = final.std(ddof=1) / np.sqrt(final.size)
    assert final.mean() == pytest.approx(0.5 + 0.5 * np.exp(-1.0), abs=3 * stderr)


@pytest.mark.slow
def test_neutral_markers_fix_with_their_initial_weight(neutral):
    start = MarkerDistribution([50, 50])
    root = RngStream(6)
    fixed = []
    for r in range(6000):
        dist = evolve_marker(start, 0.0, neutral, np.inf, root.child(r))
        assert dist.is_fixed()
        fixed.append(dist.counts[0] > 0)
    assert np.mean(fixed) == pytest.approx(0.5, abs=0.02)


def test_collapse_draws_from_the_weights():
    dist = MarkerDistribution([25, 75])
    root = RngStream(7)
    draws = np.array([dist.sample(root.child(k)) for k in range(4000)])
    assert np.mean(draws == 0) == pytest.approx(0.25, abs=3 * np.sqrt(0.25 * 0.75 / 4000))


@pytest.mark.slow
def test_substitutions_restart_from_a_sampled_point_mass(mutating):
    gaps, root = [], RngStream(8)
    for r in range(40):
        path = simulate_sfvp(mutating, 0.0, 0, 10.0, 100, root.child(r), record_dt=0.005)
        jump_times = np.array([t for t, _ in path.collapses])
        for t, marker in path.collapses:
            before = np.flatnonzero(path.times < t)
            after = np.flatnonzero(path.times > t)
            # only collapses with no other substitution between them and the neighbouring records
            if before.size and np.sum((jump_times > path.times[before[-1]]) & (jump_times <= t)) == 1:
                gaps.append(float(marker == 0) - path.weights[before[-1], 0])
            if after.size and np.sum((jump_times >= t) & (jump_times < path.times[after[0]])) == 1:
                assert path.weights[after[0], marker] >= 0.8
    gaps = np.array(gaps)
    assert gaps.size > 50
    assert abs(gaps.mean()) <= 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


@pytest.mark.slow
def test_long_run_marker_law_at_a_fixed_trait():
    # mutants leave the box, so the trait never moves
    eco = get_ecology({'name': 'linear', 'box': [0.0, 0.5], 'marker_generator': [[-1.0, 1.0], [2.0, -2.0]]})
    root = RngStream(9)
    averages = []
    for r in range(16):
        path = simulate_sfvp(eco, 0.0, 0, 10.0, 100, root.child(r), record_dt=0.05)
        assert not path.collapses
        averages.append(path.time_average()[0])
    averages = np.array(averages)
    target = stationary_marker_law(eco.marker_generator)[0]
    assert target == pytest.approx(2 / 3)
    assert averages.mean() == pytest.approx(target, abs=3 * averages.std(ddof=1) / np.sqrt(averages.size))
