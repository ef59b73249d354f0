import numpy as np
import pytest

from spinmotion import ValidationError
from spinmotion.analysis import LinearTuningFit, fit_line, synthetic_tuneout

POWERS = np.linspace(0.0, 150.0, 16)


def test_exact_line():
    x = np.array([0.0, 10.0, 20.0, 30.0])
    fit = fit_line(x, 35.0 - 0.12 * x)
    assert fit.slope == pytest.approx(-0.12, abs=1e-14)
    assert fit.intercept == pytest.approx(35.0, abs=1e-12)
    assert fit.slope_err == pytest.approx(0.0, abs=1e-12)


def test_two_points_guard():
    fit = fit_line([0.0, 1.0], [1.0, 3.0])
    assert fit.slope == pytest.approx(2.0)
    assert fit.dof == 0
    assert fit.chi2 == pytest.approx(0.0)
    assert np.isinf(fit.slope_err)
    weighted = fit_line([0.0, 1.0], [1.0, 3.0], sigma=[0.1, 0.1])
    assert np.isfinite(weighted.slope_err)


def test_degenerate_inputs():
    with pytest.raises(ValidationError):
        fit_line([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        fit_line([1.0], [1.0])
    with pytest.raises(ValidationError):
        fit_line([1.0, 2.0], [1.0, 2.0], sigma=[0.0, 1.0])


def test_weighted_closed_form_matches_polyfit():
    rng = np.random.default_rng(5)
    x = np.linspace(0, 10, 12)
    s = rng.uniform(0.1, 0.5, x.size)
    y = 2.0 - 0.3 * x + s * rng.standard_normal(x.size)
    fit = fit_line(x, y, s)
    coef, cov = np.polyfit(x, y, 1, w=1 / s, cov="unscaled")
    np.testing.assert_allclose([fit.slope, fit.intercept], coef, rtol=1e-12)
    np.testing.assert_allclose(fit.covariance, cov, rtol=1e-10)


def test_estimator_power_cut():
    P, Om, s = synthetic_tuneout(POWERS, noise_khz=0.0)
    Om = Om.copy()
    Om[POWERS > 100] += 5.0  # carrier pulls the last points
    est = LinearTuningFit(max_power_uw=100.0).fit(P, Om)
    assert est.slope_ == pytest.approx(-0.120, abs=1e-12)
    assert est.n_used_ == int(np.sum(POWERS <= 100))
    np.testing.assert_allclose(est.predict([0.0]), [35.0])
    assert LinearTuningFit().fit(P, Om).slope_ != pytest.approx(-0.120, abs=1e-3)


def test_slope_recovery_and_coverage():
    inside = 0
    for seed in range(100):
        P, Om, s = synthetic_tuneout(POWERS, seed=seed)
        est = LinearTuningFit(max_power_uw=100.0).fit(P, Om, sigma=s)
        assert abs(est.slope_ + 0.120) <= 0.010
        inside += abs(est.slope_ + 0.120) <= 3 * est.slope_err_
    assert inside >= 95
