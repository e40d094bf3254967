import math

import numpy as np
import pytest

from util.detectors import (
    EMPTY,
    DetectorConfig,
    Histogram,
    Scheme,
    build_histogram,
    first_photon_dataset,
    linearize_histogram,
    linearized_times,
)
from util.estimation import (
    AccumulatorState,
    BackgroundRecovery,
    CalibrationData,
    Invalid,
    Phase,
    ToFEstimate,
    accumulate,
    accuracy_precision,
    calibrate_from_timestamps,
    calibrate_laser_mean,
    estimate_tof_full,
    estimate_tof_simplified,
    exponential_fit,
    measure_tof,
    merge,
    naive_difference_estimate,
    peak_estimate,
    predicted_tof_std,
    rate_from_linearized,
    recover_background,
)
from util.exceptions import (
    ConfigException,
    DegenerateFitException,
    HistogramRangeException,
    InsufficientTrialsException,
    NoSignalException,
    OutOfWindowException,
)
from util.photon_model import PS, LaserPulse, SceneConfig, alpha, laser_mean_time

T_ACQ = 100e-9
CALIB = CalibrationData(2e-9, 4e-9)


def _estimate(tof: float, valid: bool = True) -> ToFEstimate:
    return ToFEstimate(tof, 0.5, valid, 10.0, 20)


def test_accumulate():
    state = accumulate(AccumulatorState(), [100, 200, 300], Phase.TOTAL)
    assert (state.n_tot, state.sum_t_tot, state.windows_tot) == (3, 600, 1)
    assert state.t_bar_tot == pytest.approx(200e-12)

    state = accumulate(state, [400, 500], Phase.BACKGROUND, windows=4)
    assert (state.n_bg, state.sum_t_bg, state.windows_bg) == (2, 0, 4)
    assert not state.overflow

    tracked = accumulate(AccumulatorState(track_bg_sum=True), [400, 500], Phase.BACKGROUND)
    assert tracked.sum_t_bg == 900
    assert tracked.t_bar_bg == pytest.approx(450e-12)


def test_accumulate_saturates():
    state = accumulate(AccumulatorState(), np.zeros(70000, dtype=np.int64), Phase.BACKGROUND)
    assert state.n_bg == 65535
    assert state.overflow

    small = AccumulatorState(tdc_bits=2, t_ts_ps=100)
    state = accumulate(small, [5000, 5000], Phase.TOTAL)
    assert state.sum_t_tot == 6300
    assert state.overflow


def test_merge():
    a = accumulate(AccumulatorState(), [100, 200], Phase.TOTAL)
    b = accumulate(AccumulatorState(), [300], Phase.TOTAL)
    b = accumulate(b, [50], Phase.BACKGROUND)
    merged = merge(a, b)
    assert (merged.n_tot, merged.sum_t_tot, merged.n_bg) == (3, 600, 1)
    assert merged.windows_tot == 2

    with pytest.raises(ConfigException):
        merge(a, AccumulatorState(counter_bits=32))


def test_simplified_estimator_is_exact_on_ideal_sums():
    # 10 个背景时间戳平均 50 ns，5 个信号时间戳位于 27 ns
    state = AccumulatorState(n_bg=10, n_tot=15, sum_t_tot=635_000, counter_bits=32)
    estimate = estimate_tof_simplified(state, CALIB, T_ACQ)
    assert estimate.tof == pytest.approx(25e-9)
    assert estimate.alpha_hat == pytest.approx(2 / 3)
    assert estimate.valid

    scaled = AccumulatorState(
        n_bg=5, n_tot=15, sum_t_tot=635_000, windows_bg=10, windows_tot=20
    )
    assert estimate_tof_simplified(scaled, CALIB, T_ACQ).tof == pytest.approx(25e-9)


def test_estimate_validity():
    late = AccumulatorState(n_bg=10, n_tot=15, sum_t_tot=500_000 + 5 * 99_000)
    assert not estimate_tof_simplified(late, CALIB, T_ACQ).valid

    overflowed = AccumulatorState(n_bg=10, n_tot=15, sum_t_tot=635_000, overflow=True)
    assert not estimate_tof_simplified(overflowed, CALIB, T_ACQ).valid


def test_estimators_without_signal():
    state = AccumulatorState(n_bg=10, n_tot=10, sum_t_tot=500_000, track_bg_sum=True)
    with pytest.raises(NoSignalException):
        estimate_tof_simplified(state, CALIB, T_ACQ)
    with pytest.raises(NoSignalException):
        estimate_tof_full(state, CALIB, T_ACQ)


def test_full_estimator_matches_simplified_at_half_window():
    state = AccumulatorState(
        n_bg=10, n_tot=15, sum_t_tot=635_000, sum_t_bg=500_000, track_bg_sum=True
    )
    full = estimate_tof_full(state, CALIB, T_ACQ)
    simplified = estimate_tof_simplified(state, CALIB, T_ACQ)
    assert full.tof == pytest.approx(simplified.tof, rel=1e-12)

    with pytest.raises(ConfigException):
        estimate_tof_full(AccumulatorState(n_bg=1, n_tot=2), CALIB)


def test_exponential_fit_recovers_background(rng):
    scene = SceneConfig(3e7, LaserPulse(4e-9, 0.0), 0.0, T_ACQ)
    h = build_histogram(first_photon_dataset(scene, 1_000_000, rng), 100e-12, span=T_ACQ)
    fit = exponential_fit(h, (0.0, T_ACQ))
    assert not fit.degenerate
    assert fit.rate == pytest.approx(3e7, rel=0.01)
    assert fit.counts == h.total


def test_exponential_fit_on_flat_counts():
    fit = exponential_fit(Histogram(100e-12, np.full(100, 50, dtype=np.int64)), (0.0, 10e-9))
    assert fit.degenerate
    assert fit.rate == 0.0

    with pytest.raises(DegenerateFitException):
        exponential_fit(Histogram(100e-12, np.zeros(100, dtype=np.int64)), (0.0, 10e-9))


def test_rate_from_linearized():
    h = Histogram(100e-12, np.full(100, 10, dtype=np.int64))
    assert rate_from_linearized(h, (0.0, 10e-9), 100) == pytest.approx(1e9)
    with pytest.raises(OutOfWindowException):
        rate_from_linearized(h, (0.0, 10e-9), 0)


def test_peak_estimate():
    counts = np.ones(1000, dtype=np.int64)
    counts[200] = 100
    peak = peak_estimate(Histogram(100e-12, counts))
    assert peak.bin_index == 200
    assert peak.time == pytest.approx(20.05e-9)
    assert not peak.low_confidence

    flat = peak_estimate(Histogram(100e-12, np.full(10, 5, dtype=np.int64)))
    assert flat.bin_index == 0
    assert flat.low_confidence

    with pytest.raises(HistogramRangeException):
        peak_estimate(Histogram(100e-12, np.zeros(10, dtype=np.int64)))


def test_accuracy_precision():
    result = accuracy_precision(
        [_estimate(24e-9), _estimate(26e-9), _estimate(90e-9, valid=False)], 25e-9
    )
    assert result.mean_error == pytest.approx(0.0, abs=1e-18)
    assert result.std_dev == pytest.approx(math.sqrt(2) * 1e-9)
    assert result.rel_precision == pytest.approx(math.sqrt(2) / 25)
    assert (result.trials, result.valid_trials) == (3, 2)

    with pytest.raises(InsufficientTrialsException):
        accuracy_precision([_estimate(24e-9), _estimate(26e-9, valid=False)], 25e-9)


def test_measure_tof_is_unbiased(rect_scene, rng):
    calib = CalibrationData.from_pulse(rect_scene.pulse)
    estimates = [
        measure_tof(rect_scene, calib, Scheme.IDEAL, 10_000, rng) for _ in range(200)
    ]
    values = np.asarray([e.tof for e in estimates])
    sigma = predicted_tof_std(rect_scene, 10_000)

    assert all(e.valid for e in estimates)
    assert abs(values.mean() - rect_scene.tof) < 4 * sigma / math.sqrt(200)
    assert values.std(ddof=1) == pytest.approx(sigma, rel=0.25)


def test_measure_tof_with_linearized_detectors(rect_scene, rng):
    calib = CalibrationData.from_pulse(rect_scene.pulse)
    sigma = predicted_tof_std(rect_scene, 2000)
    for scheme in (Scheme.ACQUIRE_OR_DISCARD, Scheme.TIME_GATED):
        values = [
            measure_tof(rect_scene, calib, scheme, 2000, rng, track_bg_sum=True).tof
            for _ in range(30)
        ]
        assert np.mean(values) == pytest.approx(rect_scene.tof, abs=5 * sigma / math.sqrt(30))


def test_naive_difference_bias_grows_with_signal(rng):
    background = SceneConfig(1e7, LaserPulse(4e-9, 0.0), 0.0, T_ACQ)
    bg = first_photon_dataset(background, 200_000, rng)
    t_bar_bg = bg[bg != EMPTY].mean() * PS

    errors = list()
    for lambda_s in (1e7, 1e8, 1e9):
        scene = SceneConfig.from_rates(1e7, lambda_s, 25e-9, 4e-9, T_ACQ)
        data = first_photon_dataset(scene, 200_000, rng)
        t_bar_tot = data[data != EMPTY].mean() * PS
        errors.append(abs(naive_difference_estimate(t_bar_tot, t_bar_bg) - scene.tof))
    assert errors[0] < errors[1] < errors[2]


def test_calibrate_laser_mean(rng):
    calib = calibrate_laser_mean(LaserPulse(4e-9, 1.0), rng)
    assert calib.t_laser_mean == pytest.approx(2e-9, abs=20e-12)
    assert calib.pulse_width == 4e-9

    with pytest.raises(NoSignalException):
        calibrate_laser_mean(LaserPulse(4e-9, 0.0), rng)


def test_predicted_std_shrinks_with_windows(rect_scene):
    assert predicted_tof_std(rect_scene, 4000) == pytest.approx(
        predicted_tof_std(rect_scene, 1000) / 2
    )
    with pytest.raises(NoSignalException):
        predicted_tof_std(rect_scene.with_laser_off(), 1000)


def test_overflow_is_reported_before_missing_signal():
    full = AccumulatorState(n_bg=65535, n_tot=65535, sum_t_tot=10**9, overflow=True)
    estimate = estimate_tof_simplified(full, CALIB, T_ACQ)
    assert not estimate.valid
    assert estimate.reason is Invalid.OVERFLOW
    assert math.isnan(estimate.tof)
    assert estimate.to_record()["reason"] == "overflow"

    late = AccumulatorState(n_bg=10, n_tot=15, sum_t_tot=500_000 + 5 * 99_000)
    assert estimate_tof_simplified(late, CALIB, T_ACQ).reason is Invalid.OUT_OF_WINDOW


def test_counter_width_decides_validity(rng):
    scene = SceneConfig.from_rates(1e8, 1e8, 25e-9, 4e-9, T_ACQ)
    calib = CalibrationData.from_pulse(scene.pulse)

    narrow = measure_tof(scene, calib, Scheme.IDEAL, 10_000, rng)
    assert not narrow.valid
    assert narrow.reason is Invalid.OVERFLOW

    wide = measure_tof(scene, calib, Scheme.IDEAL, 10_000, rng, counter_bits=32)
    assert wide.valid
    assert wide.n_tot > 65535
    assert abs(wide.tof - scene.tof) < 5 * predicted_tof_std(scene, 10_000)


def test_full_estimator_handles_skewed_background():
    # 背景集中在窗口前部，平均 30 ns；5 个信号时间戳位于 27 ns
    state = AccumulatorState(
        n_bg=10,
        n_tot=15,
        sum_t_tot=10 * 30_000 + 5 * 27_000,
        sum_t_bg=10 * 30_000,
        track_bg_sum=True,
    )
    assert estimate_tof_full(state, CALIB, T_ACQ).tof == pytest.approx(25e-9)

    simplified = estimate_tof_simplified(state, CALIB, T_ACQ)
    assert abs(simplified.tof - 25e-9) > 10e-9
    assert not simplified.valid


def test_simulated_std_scales_with_windows(rect_scene, rng):
    calib = CalibrationData.from_pulse(rect_scene.pulse)

    def spread(windows):
        values = [
            measure_tof(rect_scene, calib, Scheme.IDEAL, windows, rng).tof
            for _ in range(120)
        ]
        return np.std(values, ddof=1)

    assert spread(1000) / spread(4000) == pytest.approx(2.0, rel=0.3)


def test_naive_difference_on_linear_data(rect_scene, rng):
    # 理想线性数据：t̄_tot - t̄_bg = (1 - α)(ToF + t̄_l - T/2)
    state = AccumulatorState(n_bg=10, n_tot=15, sum_t_tot=635_000)
    expected = (1 / 3) * (25e-9 + 2e-9 - T_ACQ / 2)
    assert naive_difference_estimate(state.t_bar_tot, T_ACQ / 2) == pytest.approx(expected)

    cfg = DetectorConfig()
    total, _ = linearized_times(rect_scene, cfg, Scheme.IDEAL, 20_000, rng)
    background, _ = linearized_times(
        rect_scene.with_laser_off(), cfg, Scheme.IDEAL, 20_000, rng
    )
    difference = naive_difference_estimate(total.mean() * PS, background.mean() * PS)
    expected = (1 - alpha(rect_scene)) * (
        rect_scene.tof + laser_mean_time(rect_scene.pulse) - T_ACQ / 2
    )
    assert difference == pytest.approx(expected, abs=1.5e-9)


def test_censored_fit_recovers_background(rng):
    scene = SceneConfig(1e7, LaserPulse(4e-9, 0.0), 0.0, T_ACQ)
    h = build_histogram(first_photon_dataset(scene, 200_000, rng), 100e-12, span=T_ACQ)
    fit = exponential_fit(h, (0.0, 25e-9), censored=True)
    assert fit.rate == pytest.approx(1e7, rel=0.03)
    assert fit.counts == int(h.counts[:250].sum())

    with pytest.raises(DegenerateFitException):
        exponential_fit(Histogram(100e-12, h.counts), (0.0, 25e-9), censored=True)


def test_calibrate_from_timestamps(rng):
    scene = SceneConfig(0.0, LaserPulse(4e-9, 0.5), 0.0, T_ACQ)
    data = first_photon_dataset(scene, 100_000, rng)
    assert data[data != EMPTY].mean() * PS < 1.9e-9

    calib = calibrate_from_timestamps(data, 4e-9, T_ACQ)
    assert calib.t_laser_mean == pytest.approx(2e-9, abs=30e-12)
    assert calib.pulse_width == 4e-9

    with pytest.raises(NoSignalException):
        calibrate_from_timestamps([EMPTY] * 10, 4e-9, T_ACQ)


def test_background_recovery_around_the_pulse(rng):
    scene = SceneConfig.from_rates(3e7, 5e8, 20e-9, 4e-9, T_ACQ)
    data = first_photon_dataset(scene, 100_000, rng)
    original = build_histogram(data, 100e-12, span=T_ACQ)
    result = linearize_histogram(original, T_ACQ, rng, horizon=50e-9)
    recovery = recover_background(scene, original, result.histogram, result.windows, 50e-9)

    assert recovery.rate_fit == pytest.approx(3e7, rel=0.05)
    assert recovery.within(0.04)
    assert set(recovery.to_record()) >= {"deviation_before", "deviation_after"}
    assert not BackgroundRecovery(3e7, 4e7, 3e7, 10_000, 10_000).within(0.04)
