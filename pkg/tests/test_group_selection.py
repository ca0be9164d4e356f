import numpy as np
import pytest

from proj_models.errors import ParameterError
from proj_models.group_selection import (GridMeasure, NestedMoranState, PenalizedWFModel, Penalty, admissible_dt,
                                         ancestry_count, evolve_limit_measure, feynman_kac_estimate,
                                         fokker_planck_operator,
                                         limit_trajectory, propensity_tables, sample_measure, simulate_nested_moran,
                                         truncation_experiment)
from proj_models.kernel import RngStream
from group_selection_experiment import run_cell


@pytest.fixture
def uniform():
    return GridMeasure.from_density(np.ones_like, 100)


def test_penalty_shift_makes_rates_nonpositive():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=20.0, tilt=0.25))
    x = np.linspace(0, 1, 1001)
    assert model.r(x).max() == pytest.approx(0.0, abs=1e-3)
    assert model.rho0 > model.rho1 > 0
    assert PenalizedWFModel(1.0, 1.0, Penalty('favour_d')).shift == 0.0


def test_penalty_kinds():
    x = np.array([0.0, 0.5, 1.0])
    assert np.allclose(Penalty('favour_c')(x), [-1.0, -0.5, 0.0])
    assert np.allclose(Penalty('favour_d', scale=2.0)(x), [0.0, -1.0, -2.0])
    assert np.allclose(Penalty('tabulated', values=(0.0, 2.0))(x), [0.0, 1.0, 2.0])
    assert np.allclose(Penalty('constant').shifted(1.0)(x), 2.0)
    with pytest.raises(ParameterError):
        Penalty('tabulated')
    with pytest.raises(ParameterError):
        PenalizedWFModel(1.0, 0.0)


def test_grid_measure_validation(uniform):
    assert uniform.total_mass() == pytest.approx(1.0)
    assert uniform.moments()[0] == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        GridMeasure(0.5, 0.0, np.ones(10))
    with pytest.raises(ParameterError):
        GridMeasure(-0.1, 0.1, np.ones(10))


def test_from_samples_counts_atoms():
    mu = GridMeasure.from_samples([0.0, 0.0, 1.0, 0.25], 4)
    assert mu.atom0 == pytest.approx(0.5)
    assert mu.atom1 == pytest.approx(0.25)
    assert mu.interior_mass() == pytest.approx(0.25)


def test_wasserstein_between_atoms():
    a, b = GridMeasure.atoms(1.0, 0.0, 50), GridMeasure.atoms(0.0, 1.0, 50)
    assert a.wasserstein1(b) == pytest.approx(1.0, abs=1e-3)
    assert a.wasserstein1(a) == 0.0


def test_neutral_limit_keeps_mean(uniform):
    model = PenalizedWFModel(0.0, 1.0)
    trajectory = limit_trajectory(uniform, model, [0.0, 0.5, 1.0])
    for _, mu in trajectory:
        assert mu.total_mass() == pytest.approx(1.0)
        assert mu.moments()[0] == pytest.approx(0.5, abs=1e-3)
    # mass leaks into both atoms symmetrically
    final = trajectory[-1][1]
    assert final.atom0 > 0.1
    assert final.atom0 == pytest.approx(final.atom1, rel=1e-6)


def test_limit_rejects_large_dt(uniform):
    model = PenalizedWFModel(1.0, 1.0)
    with pytest.raises(ParameterError):
        evolve_limit_measure(uniform, model, 0.1, dt=10 * admissible_dt(model, uniform.grid_size))
    assert evolve_limit_measure(uniform, model, 0.0) is uniform


def test_selection_pushes_mass_to_zero(uniform):
    mu = evolve_limit_measure(uniform, PenalizedWFModel(5.0, 1.0), 1.0)
    assert mu.atom0 > mu.atom1
    assert mu.moments()[0] < 0.5


def test_sample_measure_respects_atoms():
    mu = GridMeasure.from_density(np.ones_like, 20, atom0=0.3, atom1=0.2)
    x = sample_measure(mu, 20000, RngStream(1))
    assert np.mean(x == 0.0) == pytest.approx(0.3, abs=0.02)
    assert np.mean(x == 1.0) == pytest.approx(0.2, abs=0.02)
    assert np.all((x >= 0) & (x <= 1))


def test_feynman_kac_matches_limit_equation():
    mu0 = GridMeasure.from_density(lambda x: x * (1 - x), 200)
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=2.0))
    mc = feynman_kac_estimate(mu0, model, 0.5, lambda x: x, 4000, RngStream(2), dt=1e-3)
    pde = evolve_limit_measure(mu0, model, 0.5).integrate(lambda x: x)
    assert not mc.low_ess
    assert abs(mc.estimate - pde) < 5 * mc.stderr + 0.01
    with pytest.raises(ParameterError):
        feynman_kac_estimate(mu0, model, 0.5, lambda x: x, 50, RngStream(2))


def test_moran_rates_match_limit_scaling():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=2.0))
    state = NestedMoranState.from_limit(model, np.full(20, 25), 50)
    assert state.w_I * (2 + state.s) / state.n == pytest.approx(1.0)
    assert state.w_I * state.s == pytest.approx(1.0)
    down, up, group = propensity_tables(state)
    assert down.shape == (51,) and group.shape == (51, 51)
    assert np.all(down >= 0) and np.all(up >= 0) and np.all(group >= 0)
    with pytest.raises(ParameterError):
        NestedMoranState.from_limit(model, np.full(20, 1), 1)


def test_moran_counts_stay_in_range():
    model = PenalizedWFModel(0.5, 1.0, Penalty('bump', scale=1.0))
    state = NestedMoranState.from_limit(model, np.full(30, 10), 20)
    path = simulate_nested_moran(state, 0.5, RngStream(3), snapshot_times=[0.0, 0.25, 0.5])
    assert path.times == [0.0, 0.25, 0.5]
    assert path.final_counts.size == 30
    assert np.all((path.final_counts >= 0) & (path.final_counts <= 20))
    for mu in path.measures:
        assert mu.total_mass() == pytest.approx(1.0)
    assert path.n_events > 0
    assert ancestry_count(state, 0.5) > 0


def test_moran_is_reproducible():
    model = PenalizedWFModel(0.5, 1.0)
    state = NestedMoranState.from_limit(model, np.arange(10), 20)
    a = simulate_nested_moran(state, 0.3, RngStream(4, 1))
    b = simulate_nested_moran(state, 0.3, RngStream(4, 1))
    assert np.array_equal(a.final_counts, b.final_counts)
    assert a.n_events == b.n_events


def test_truncation_outcomes(uniform):
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_c', scale=5.0))
    kept = truncation_experiment(uniform, model, 0.0, 0.2)
    assert kept.outcome in ('upheaval', 'no_upheaval')
    assert kept.final.total_mass() == pytest.approx(1.0)
    gone = truncation_experiment(uniform, model, 0.9, 0.2)
    assert gone.outcome == 'total_truncation'
    with pytest.raises(ParameterError):
        truncation_experiment(uniform, model, -1.0, 0.2)


def test_operator_fluxes_follow_the_drift():
    lower, diag, upper, outflow = fokker_planck_operator(PenalizedWFModel(5.0, 1.0), 100)
    # rightward rates land in lower[k + 1], leftward ones in upper[k]
    faces = np.arange(1, 100) / 100
    inner = (faces >= 0.1) & (faces <= 0.9)
    assert np.all(lower[1:][inner] < upper[:-1][inner])
    neutral_lower, _, neutral_upper, _ = fokker_planck_operator(PenalizedWFModel(0.0, 1.0), 100)
    assert neutral_lower[1:] == pytest.approx(neutral_upper[:-1][::-1])
    # mass leaves the interior only through the end cells
    column_sums = diag.copy()
    column_sums[:-1] += lower[1:]
    column_sums[1:] += upper[:-1]
    assert column_sums[1:-1] == pytest.approx(0.0, abs=1e-6)
    assert column_sums[0] == pytest.approx(-outflow * 100)
    assert column_sums[-1] == pytest.approx(-outflow * 100)


def test_two_atoms_grow_at_their_own_rates():
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_c', scale=2.0))
    mu = evolve_limit_measure(GridMeasure.atoms(0.5, 0.5, 50), model, 1.0)
    assert mu.interior_mass() == 0.0
    assert mu.atom1 / mu.atom0 == pytest.approx(np.exp(model.r(1.0) - model.r(0.0)), rel=1e-9)


def test_untruncated_run_matches_the_limit_equation(uniform):
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_c', scale=5.0))
    report = truncation_experiment(uniform, model, 0.0, 0.3)
    limit = evolve_limit_measure(uniform, model, 0.3)
    assert report.final.atom0 == pytest.approx(limit.atom0, abs=1e-6)
    assert report.final.atom1 == pytest.approx(limit.atom1, abs=1e-6)
    assert report.final.interior_density * uniform.h == pytest.approx(limit.interior_density * uniform.h, abs=1e-6)


def test_truncation_keeps_the_atoms():
    mu0 = GridMeasure.from_density(np.ones_like, 50, atom0=1e-4, atom1=1e-4)
    model = PenalizedWFModel(0.0, 1.0)
    report = truncation_experiment(mu0, model, 1e-3, 0.01)
    assert report.outcome != 'total_truncation'
    assert report.final.atom0 > 1e-4
    assert report.final.atom1 > 1e-4


def test_upheaval_is_delayed_by_larger_thresholds():
    mu0 = GridMeasure.from_density(lambda x: (1.0 - x)**4, 50)
    model = PenalizedWFModel(0.0, 1.0, Penalty('favour_c', scale=5.0))
    times = []
    for threshold in (0.0, 1e-6, 1e-3, 0.2):
        report = truncation_experiment(mu0, model, threshold, 4.0)
        times.append(report.upheaval_time if report.upheaval_time is not None else np.inf)
    assert np.isfinite(times[0])
    assert np.all(np.diff(times) >= 0)


def test_single_neutral_group_fixes_with_probability_one_over_n():
    n, replicates = 5, 2000
    state = NestedMoranState(np.array([1]), n, 1.0, 1.0, 0.0)
    root = RngStream(11)
    fixed = [simulate_nested_moran(state, 1e4, root.child(k)).final_counts[0] == n for k in range(replicates)]
    stderr = np.sqrt((1 / n) * (1 - 1 / n) / replicates)
    assert np.mean(fixed) == pytest.approx(1 / n, abs=3 * stderr)


@pytest.mark.slow
def test_moran_measure_approaches_the_limit():
    result = run_cell('ibm_vs_limit', {'penalty': {'kind': 'bump', 'scale': 5.0},
                                       'initial': {'kind': 'beta', 'a': 2.0, 'b': 2.0}, 't': 0.05,
                                       'sizes': [[100, 100], [200, 200]], 'replicates': 8, 'grid_size': 50},
                      seed=3, cell_index=0)
    assert result.summary['mean_w1']['200'] < result.summary['mean_w1']['100']
