import numpy as np
import pytest

from proj_models.errors import ParameterError
from proj_models.group_selection import GridMeasure, PenalizedWFModel, Penalty
from proj_models.kernel import RngStream
from proj_models.qsd import (classify_regime, compute_qsd, exit_split_monte_carlo, interior_relaxation,
                             scan_sigma, scan_threshold)


def test_neutral_qsd_is_uniform():
    qsd = compute_qsd(PenalizedWFModel(0.0, 1.0), 400)
    assert qsd.rho_alpha == pytest.approx(1.0, rel=1e-2)
    density = qsd.alpha.interior_density
    assert np.allclose(density[20:-20], 1.0, atol=0.02)
    x = qsd.alpha.centers()
    shape = x * (1 - x)
    ratio = qsd.eta[20:-20] / shape[20:-20]
    assert np.allclose(ratio, ratio.mean(), rtol=0.05)
    # <alpha, eta> = 1
    assert qsd.alpha.h * np.sum(density * qsd.eta) == pytest.approx(1.0)
    assert qsd.exit_flux[0] == pytest.approx(qsd.exit_flux[1], rel=1e-6)
    assert qsd.residual < 1e-6


def test_qsd_needs_a_fine_grid():
    with pytest.raises(ParameterError):
        compute_qsd(PenalizedWFModel(0.0, 1.0), 20)


def test_polymorphic_regime():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=20.0, tilt=0.25))
    report = classify_regime(model, 400)
    assert report.regime == 'polymorphic_persists'
    assert report.rho_alpha < min(report.rho0, report.rho1)
    weights = report.weights
    assert weights['y0'] + weights['y1'] + weights['y_alpha'] == pytest.approx(1.0)
    assert all(0 <= w <= 1 for w in weights.values())


@pytest.mark.parametrize('kind, scale, expected', [('favour_c', 5.0, 'fixation_C'), ('favour_d', 1.0, 'fixation_D')])
def test_fixation_regimes(kind, scale, expected):
    report = classify_regime(PenalizedWFModel(1.0, 1.0, Penalty(kind, scale=scale)), 300)
    assert report.regime == expected


def test_regime_ignores_constant_shifts():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=20.0, tilt=0.25))
    base = classify_regime(model, 300)
    for c in (-3.0, 2.0, 50.0):
        shifted = PenalizedWFModel(1.0, 1.0, model.penalty.shifted(c))
        report = classify_regime(shifted, 300)
        assert report.regime == base.regime
        assert report.rho_alpha == pytest.approx(base.rho_alpha, rel=1e-8)


def test_exit_split_matches_grid_flux():
    model = PenalizedWFModel(0.0, 1.0)
    qsd = compute_qsd(model, 200)
    split = exit_split_monte_carlo(model, qsd, RngStream(1), n_paths=2000, dt=1e-3)
    assert split.p_killed == 0.0
    assert split.p0 + split.p1 == pytest.approx(1.0, abs=0.01)
    assert split.p0 == pytest.approx(0.5, abs=0.05)


def test_threshold_scan_brackets_the_change():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=1.0, tilt=0.25))
    scan = scan_threshold(model, [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0], 200)
    assert scan.margins[0] > 0 > scan.margins[-1]
    r_wedge, r_vee = scan.bracket
    assert r_wedge < r_vee
    assert r_vee - r_wedge <= 1e-3 * 40.0 + 1e-12
    with pytest.raises(ParameterError):
        scan_threshold(model, [0.0, 1.0], 200)


def test_one_sided_scan():
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_d'))
    scan = scan_threshold(model, np.linspace(1.0, 8.0, 8), 100)
    assert scan.bracket is None
    assert scan.one_sided == 'fixation'


def test_sigma_scan_rows():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=10.0))
    scan = scan_sigma(model, [0.5, 1.0, 2.0], 100)
    assert len(scan.to_rows()) == 3
    assert scan.boundary_min == pytest.approx(min(model.rho0, model.rho1))


def test_relaxation_rate_is_the_spectral_gap():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=5.0))
    mu0 = GridMeasure.from_density(lambda x: x * (1 - x) ** 4, 200)
    report = interior_relaxation(model, mu0, np.linspace(0.5, 4.0, 15), fit_after=2.0)
    assert report.tv[-1] < report.tv[0]
    assert report.relative_error() < 0.15


def test_rho_alpha_is_grid_converged():
    model = PenalizedWFModel(1.0, 1.0, Penalty('bump', scale=20.0, tilt=0.25))
    coarse = compute_qsd(model, 100).rho_alpha
    fine = compute_qsd(model, 400).rho_alpha
    assert coarse == pytest.approx(fine, rel=1e-2)


def test_constant_killing_shifts_rho_alpha():
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_c'))
    base = compute_qsd(model, 200)
    shifted = compute_qsd(PenalizedWFModel(1.0, 1.0, model.penalty.shifted(-0.5)), 200)
    assert shifted.rho_alpha == pytest.approx(base.rho_alpha + 0.5, rel=1e-8)
    assert shifted.alpha.interior_density == pytest.approx(base.alpha.interior_density, rel=1e-6, abs=1e-8)


def test_rho_alpha_grows_with_the_noise():
    model = PenalizedWFModel(1.0, 1.0, Penalty('favour_c'))
    scan = scan_sigma(model, [0.5, 1.0, 2.0, 4.0], 200)
    assert scan.increasing
    assert np.all(np.diff(scan.rho_alpha) > 0)
    assert scan.rho_alpha[0] == pytest.approx(1.0, abs=0.05)
