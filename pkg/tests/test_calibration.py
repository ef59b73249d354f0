import numpy as np
import pytest
from sklearn.base import clone

from spinmotion import ValidationError
from spinmotion.analysis import (
    CalibrationError,
    CalibrationResult,
    DickeCalibrator,
    PeakNotFoundError,
    WindowError,
    add_noise,
    calibrate_traps,
    calibrate_zeeman,
    fit_couplings,
    min_gap,
    scan_b0,
    scan_delta,
    simplified_scan,
)
from spinmotion.model import CESIUM, KHZ, ModelParams, SimplifiedParams, build_two_mode, reference_params, two_mode_index
from spinmotion.spectra import ThermalState, emission_operator, frequency_grid

GRID = frequency_grid(-400.0, 400.0, 0.5)
EMISSION = emission_operator(0.1, 0.15, 0.1)
THERMAL = ThermalState(mean_n_x=0.5, mean_n_y=0.5, mean_n_z=0.5)
FAR = np.arange(250.0, 331.0, 5.0) * KHZ


def synth(params, deltas, **kw):
    kw.setdefault("thermal", THERMAL)
    kw.setdefault("emission", EMISSION)
    kw.setdefault("grid_khz", GRID)
    kw.setdefault("include_carrier", False)
    return scan_delta(params, deltas, **kw)


def uncoupled():
    return ModelParams(F=4, omega_x=149 * KHZ, omega_y=93 * KHZ, omega_z=243 * KHZ, n_max=5)


# --- avoided-crossing gap ---------------------------------------------------


def test_min_gap_simplified_equals_rabi_frequency():
    p = SimplifiedParams(Delta=0.0, omega_x=149 * KHZ, omega_y=93 * KHZ, Omega_x=0.0, Omega_y=35 * KHZ)
    scan = simplified_scan(p, np.arange(60.0, 127.0, 2.0) * KHZ, GRID)
    res = min_gap(scan, (55.0, 130.0))
    assert res.gap / KHZ == pytest.approx(35.0, rel=1e-3)
    assert res.delta_star / KHZ == pytest.approx(93.0, abs=0.5)


def test_min_gap_vanishes_without_coupling():
    p = SimplifiedParams(Delta=0.0, omega_x=149 * KHZ, omega_y=93 * KHZ, Omega_x=0.0, Omega_y=0.0)
    scan = simplified_scan(p, np.arange(60.0, 127.0, 2.0) * KHZ, GRID)
    res = min_gap(scan, (55.0, 130.0))
    assert res.gap == 0.0 and not res.resolved
    assert res.delta_star / KHZ == pytest.approx(93.0, abs=GRID[1] - GRID[0])


def test_min_gap_missing_branches():
    p = SimplifiedParams(Delta=0.0, omega_x=149 * KHZ, omega_y=93 * KHZ, Omega_x=0.0, Omega_y=35 * KHZ)
    scan = simplified_scan(p, np.arange(60.0, 127.0, 2.0) * KHZ, GRID)
    with pytest.raises(PeakNotFoundError):
        min_gap(scan, (-390.0, -300.0))


def eigen_gap(params, deltas, bare_a, bare_b):
    """Minimum over Delta of the splitting between the two eigenstates that
    carry most of the weight of the bare pair ``bare_a``/``bare_b``."""
    ia = two_mode_index(params, *bare_a)
    ib = two_mode_index(params, *bare_b)
    gaps = []
    for d in deltas:
        E, U = np.linalg.eigh(build_two_mode(params.with_delta(d)))
        w = np.abs(U[ia]) ** 2 + np.abs(U[ib]) ** 2
        top = np.sort(np.argsort(w)[-2:])
        gaps.append(E[top[1]] - E[top[0]])
    return min(gaps) / KHZ


@pytest.fixture(scope="module")
def crossing_scan():
    return synth(reference_params(), np.linspace(60.0, 178.0, 60) * KHZ)


@pytest.mark.parametrize(
    "mode, window, drange, bare_a",
    [("y", (55.0, 130.0), (73.0, 113.0), (-4, 0, 1)), ("x", (115.0, 185.0), (129.0, 169.0), (-4, 1, 0))],
)
def test_full_model_gap_matches_eigenvalue_oracle(crossing_scan, mode, window, drange, bare_a):
    p = reference_params()
    measured = min_gap(crossing_scan, window, drange).gap / KHZ
    fine = np.linspace(drange[0], drange[1], 161) * KHZ
    oracle = eigen_gap(p, fine, bare_a, (-3, 0, 0))
    # thermal copies of each branch blend into the measured peaks
    assert measured == pytest.approx(oracle, abs=1.0)


# --- trap frequencies ------------------------------------------------------


def test_traps_exact_without_dressing():
    cal = calibrate_traps(synth(uncoupled(), FAR))
    assert cal.omega_y / KHZ == pytest.approx(93.0, abs=0.1)
    assert cal.omega_x / KHZ == pytest.approx(149.0, abs=0.1)
    assert cal.omega_z / KHZ == pytest.approx(243.0, abs=0.1)


@pytest.fixture(scope="module")
def far_scan():
    return synth(reference_params(), FAR)


def test_traps_raw_within_quoted_uncertainty(far_scan):
    cal = calibrate_traps(add_noise(far_scan, 0.05, 1))
    assert cal.omega_y / KHZ == pytest.approx(93.0, abs=5.0)
    assert cal.omega_x / KHZ == pytest.approx(149.0, abs=5.0)
    assert cal.omega_z / KHZ == pytest.approx(243.0, abs=5.0)


def test_traps_reversal_invariant(far_scan):
    noisy = add_noise(far_scan, 0.05, 2)
    fwd = calibrate_traps(noisy)
    rev = calibrate_traps(noisy, indices=fwd.indices[::-1])
    rebuilt = add_noise(synth(reference_params(), FAR[::-1]), 0.05, 2)
    again = calibrate_traps(rebuilt)
    for other in (rev, again):
        for attr in ("omega_x", "omega_y", "omega_z"):
            sigma = getattr(fwd, attr + "_err")
            assert abs(getattr(other, attr) - getattr(fwd, attr)) <= sigma / 10


def test_traps_unbiased_over_noise_seeds(far_scan):
    ref = calibrate_traps(far_scan)
    diffs = []
    for seed in range(50):
        cal = calibrate_traps(add_noise(far_scan, 0.05, seed))
        diffs.append([(cal.omega_x - ref.omega_x) / KHZ, (cal.omega_y - ref.omega_y) / KHZ, (cal.omega_z - ref.omega_z) / KHZ])
    diffs = np.asarray(diffs)
    mean, sem = diffs.mean(axis=0), diffs.std(axis=0, ddof=1) / np.sqrt(len(diffs))
    assert np.all(np.abs(mean) <= 4 * sem + 1e-3)


def test_traps_window_errors(far_scan):
    with pytest.raises(WindowError):
        calibrate_traps(far_scan, (400.0, 500.0))
    near = synth(reference_params(), np.arange(110.0, 141.0, 10.0) * KHZ)
    with pytest.raises(WindowError):
        calibrate_traps(near, (110.0, 140.0))
    assert issubclass(WindowError, ValidationError)


# --- Zeeman ----------------------------------------------------------------


def b0_grid(lo_khz=270.0, hi_khz=390.0, step=10.0):
    return np.arange(lo_khz, hi_khz + 1e-9, step) * KHZ / CESIUM.zeeman_rate


def test_zeeman_scale_self_consistent():
    scan = scan_b0(reference_params(), b0_grid(), thermal=THERMAL, emission=EMISSION, grid_khz=GRID, include_carrier=False)
    cal = calibrate_zeeman(scan)
    # the raw line is pulled by the nearby dressed sidebands; refinement removes it
    assert cal.scale == pytest.approx(CESIUM.zeeman_rate, rel=0.03)
    assert abs(cal.offset / KHZ) <= 10.0


def test_zeeman_offset_coverage():
    base = scan_b0(reference_params(), b0_grid(), thermal=THERMAL, emission=EMISSION, grid_khz=GRID,
                   include_carrier=False, zeeman_offset=3 * KHZ)
    # the noiseless raw offset is the reference: dressing bias is not noise
    ref = calibrate_zeeman(base).offset / KHZ
    z = []
    for seed in range(40):
        # the spin line only borrows weight from the sidebands, so it needs low noise
        cal = calibrate_zeeman(add_noise(base, 0.002, seed))
        z.append((cal.offset / KHZ - ref) / (cal.offset_err / KHZ))
    z = np.abs(np.asarray(z))
    assert np.mean(z <= 1) >= 0.5
    assert np.mean(z <= 3) >= 0.95


def test_zeeman_needs_three_points():
    scan = scan_b0(reference_params(), b0_grid(270.0, 280.0), thermal=THERMAL, emission=EMISSION, grid_khz=GRID,
                   include_carrier=False)
    with pytest.raises(CalibrationError):
        calibrate_zeeman(scan)


# --- couplings ---------------------------------------------------------------


def test_couplings_missing_when_uncoupled():
    scan = synth(uncoupled(), np.array([93.0, 149.0, 250.0]) * KHZ)
    with pytest.raises(PeakNotFoundError):
        fit_couplings(scan, 149 * KHZ, 93 * KHZ)
    assert issubclass(PeakNotFoundError, CalibrationError)


def test_couplings_need_resonance():
    scan = synth(reference_params(), FAR)
    with pytest.raises(WindowError):
        fit_couplings(scan, 149 * KHZ, 93 * KHZ)


# --- full pipeline ---------------------------------------------------------


DELTAS = np.arange(60.0, 331.0, 5.0) * KHZ


@pytest.fixture(scope="module")
def default_scan():
    return synth(reference_params(), DELTAS)


@pytest.fixture(scope="module")
def noiseless_fit(default_scan):
    return DickeCalibrator(eta_z=0.1).fit(default_scan)


def test_pipeline_noiseless_exact(noiseless_fit):
    cal = noiseless_fit.calibration_
    assert cal.omega_x / KHZ == pytest.approx(149.0, abs=0.1)
    assert cal.omega_y / KHZ == pytest.approx(93.0, abs=0.1)
    assert cal.omega_z / KHZ == pytest.approx(243.0, abs=0.1)
    assert cal.g_x / KHZ == pytest.approx(18.0, abs=0.1)
    assert cal.g_y / KHZ == pytest.approx(17.5, abs=0.1)
    assert cal.refined and noiseless_fit.n_iter_ >= 1


def test_pipeline_ratios(noiseless_fit):
    cal = noiseless_fit.calibration_
    assert cal.g_over_omega_y == pytest.approx(0.19, abs=0.01)
    assert cal.g_over_omega_x == pytest.approx(0.12, abs=0.01)
    assert cal.Omega_over_omega_y == pytest.approx(0.38, abs=0.01)
    assert cal.Omega_over_omega_x == pytest.approx(0.24, abs=0.01)
    assert cal.Omega_over_omega_y == pytest.approx(2 * cal.g_over_omega_y, rel=1e-15)
    d = cal.to_dict()
    assert d["g_y_khz"] == pytest.approx(cal.g_y / KHZ)


def test_raw_estimates_are_biased(noiseless_fit):
    trap, _, _ = noiseless_fit.raw_
    assert abs(trap.omega_y / KHZ - 93.0) > 1.0


def test_calibration_result_has_no_stored_ratios():
    fields = CalibrationResult.__dataclass_fields__
    assert not any("over" in f for f in fields)


def test_pipeline_predict(noiseless_fit):
    out = noiseless_fit.predict([93.0, 200.0])
    assert out.shape == (2, 3)
    assert np.all(np.diff(out, axis=1) >= 0)


def test_pipeline_deterministic(default_scan, noiseless_fit):
    noisy = add_noise(default_scan, 0.05, 3)
    a = DickeCalibrator(eta_z=0.1).fit(noisy).calibration_
    b = DickeCalibrator(eta_z=0.1).fit(noisy).calibration_
    assert a == b


def test_estimator_params_roundtrip():
    est = DickeCalibrator(eta_z=0.1, max_refine_iter=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    with pytest.raises(ValidationError):
        est.fit(np.zeros((3, 3)))


def test_pipeline_rejects_scan_without_far_window(default_scan):
    near = default_scan.subset(np.flatnonzero(default_scan.deltas_khz < 200))
    with pytest.raises(WindowError):
        DickeCalibrator(eta_z=0.1).fit(near)


def test_refinement_failure_is_reported(default_scan):
    with pytest.raises(CalibrationError):
        DickeCalibrator(eta_z=0.1, max_refine_iter=1, refine_tol_khz=1e-9).fit(default_scan)


@pytest.fixture(scope="module")
def b0_scan():
    b0 = np.arange(60.0, 391.0, 10.0) * KHZ / CESIUM.zeeman_rate
    return scan_b0(reference_params(), b0, thermal=THERMAL, emission=EMISSION, grid_khz=GRID, include_carrier=False)


def test_pipeline_zeeman_scale(b0_scan):
    cal = DickeCalibrator(eta_z=0.1).fit(b0_scan).calibration_
    assert cal.zeeman_scale == pytest.approx(CESIUM.zeeman_rate, rel=5e-3)
    assert cal.zeeman_scale * 0.2 / KHZ == pytest.approx(70.0, abs=0.5)
    assert cal.zeeman_offset / KHZ == pytest.approx(0.0, abs=0.5)


@pytest.mark.slow
def test_round_trip_within_three_sigma(b0_scan):
    truth = {"omega_x": 149.0, "omega_y": 93.0, "omega_z": 243.0, "g_x": 18.0, "g_y": 17.5,
             "zeeman_scale": CESIUM.zeeman_rate / KHZ}
    bad = []
    for seed in range(20):
        cal = DickeCalibrator(eta_z=0.1).fit(add_noise(b0_scan, 0.001, seed)).calibration_
        for name, value in truth.items():
            est = getattr(cal, name) / KHZ
            err = getattr(cal, name + "_err") / KHZ
            if abs(est - value) > 3 * err:
                bad.append((seed, name, est, err))
    assert not bad, bad
