import math

import numpy as np
import pytest
from scipy.integrate import quad

from util.exceptions import (
    NoSignalException,
    OutOfWindowException,
    UnsupportedPulseException,
)
from util.photon_model import (
    PS,
    LaserPulse,
    PulseShape,
    SceneConfig,
    alpha,
    composite_intensity,
    cumulative_intensity,
    first_photon_amplitudes,
    first_photon_cdf,
    first_photon_density,
    first_photon_mean,
    five_percent_rule_flux,
    inverse_cumulative_intensity,
    laser_mean_time,
    laser_time_variance,
    linear_cdf,
    linear_density,
    linear_mean,
    max_sustainable_flux,
    mean_photons_for_detection_rate,
    multi_photon_probability,
    quantize_ps,
    sample_photon_stream,
    tof_from_distance,
    tof_from_mu,
)
from util.stats import chi_square_gof, ks_test

T_ACQ = 100e-9
# 1e7 的背景光下首光子在 5 us 之后到达的概率可忽略
TAIL = 5e-6


def test_round_trip_over_random_scenes(rng):
    for _ in range(100):
        t_w = rng.uniform(1e-9, 10e-9)
        shape = PulseShape.GAUSSIAN if rng.random() < 0.5 else PulseShape.RECTANGULAR
        pulse = LaserPulse(t_w, 10 ** rng.uniform(-3, 1), shape)
        lambda_b = 0.0 if rng.random() < 0.1 else 10 ** rng.uniform(5, 9)
        scene = SceneConfig(lambda_b, pulse, rng.uniform(0, T_ACQ - t_w), T_ACQ)

        tof = tof_from_mu(linear_mean(scene), alpha(scene), T_ACQ, laser_mean_time(pulse))
        assert tof == pytest.approx(scene.tof, rel=1e-9, abs=1e-18)


def test_linear_density_integrates_to_one(rect_scene, gaussian_scene):
    for scene in (rect_scene, gaussian_scene):
        edges = [0.0, scene.tof, scene.signal_end, T_ACQ]
        total = _integrate(lambda t: linear_density(scene, t), edges)
        assert total == pytest.approx(1.0, rel=1e-9)
        assert linear_cdf(scene, T_ACQ) == pytest.approx(1.0)


def test_background_only_is_uniform(background_scene):
    assert linear_density(background_scene, 30e-9) == pytest.approx(1 / T_ACQ)
    assert alpha(background_scene) == 1.0
    assert linear_mean(background_scene) == pytest.approx(T_ACQ / 2)


def test_composite_intensity_rejects_times_outside_window(rect_scene):
    assert composite_intensity(rect_scene, 26e-9) == pytest.approx(1.1e8)
    with pytest.raises(OutOfWindowException):
        composite_intensity(rect_scene, -1e-12)
    with pytest.raises(OutOfWindowException):
        linear_density(rect_scene, 101e-9)


def test_inverse_cumulative_intensity(rect_scene, gaussian_scene):
    for scene in (rect_scene, gaussian_scene):
        t = np.linspace(0, T_ACQ, 257)
        recovered = inverse_cumulative_intensity(scene, cumulative_intensity(scene, t))
        np.testing.assert_allclose(recovered, t, rtol=0, atol=1e-15)


def test_echo_must_fit_in_window():
    with pytest.raises(OutOfWindowException):
        SceneConfig.from_rates(1e7, 1e8, 97e-9, 4e-9, 100e-9)


def test_quantize_ps_resolves_collisions():
    ps = quantize_ps([1.6e-12, 1.2e-12, 1.4e-12, 50.5e-12], 100)
    assert ps.tolist() == [1, 2, 3, 50]

    crowded = quantize_ps(np.full(5, 99.9e-12), 100)
    assert crowded.tolist() == [95, 96, 97, 98, 99]


def test_sample_photon_stream_counts(gaussian_scene, rng):
    counts = [len(sample_photon_stream(gaussian_scene, rng)) for _ in range(4000)]
    expected = gaussian_scene.total_photons
    assert np.mean(counts) == pytest.approx(expected, abs=5 * math.sqrt(expected / 4000))


def test_sampled_times_follow_linear_density(gaussian_scene, rng):
    times = np.concatenate(
        [sample_photon_stream(gaussian_scene, rng).times for _ in range(20000)]
    )
    _, p = ks_test(times * PS, lambda t: linear_cdf(gaussian_scene, t))
    assert p > 0.01


def test_empty_scene_yields_no_photons(rng):
    scene = SceneConfig(0.0, LaserPulse(4e-9, 0.0), 0.0, T_ACQ)
    stream = sample_photon_stream(scene, rng)
    assert len(stream) == 0
    assert stream.first is None
    with pytest.raises(NoSignalException):
        linear_mean(scene)


def test_tof_from_mu_without_signal():
    with pytest.raises(NoSignalException):
        tof_from_mu(50e-9, 1.0, T_ACQ, 2e-9)
    with pytest.warns(RuntimeWarning):
        tof_from_mu(50e-9, 1 - 1e-12, T_ACQ, 2e-9)


def test_laser_moments():
    rect = LaserPulse(4e-9, 1.0)
    assert laser_mean_time(rect) == pytest.approx(2e-9)
    assert laser_time_variance(rect) == pytest.approx(16e-18 / 12)

    gaussian = LaserPulse(4e-9, 1.0, PulseShape.GAUSSIAN)
    assert laser_mean_time(gaussian) == pytest.approx(2e-9)
    assert laser_time_variance(gaussian) < (4e-9 / 6) ** 2

    skewed = LaserPulse(4e-9, 1.0, PulseShape.GAUSSIAN, center=1e-9, sigma=1e-9)
    mean = quad(lambda u: u * skewed.rate(u), 0, 4e-9, points=[1e-9], epsabs=0)[0]
    assert laser_mean_time(skewed) == pytest.approx(mean, rel=1e-6)

    with pytest.raises(NoSignalException):
        laser_mean_time(LaserPulse(4e-9, 0.0))


def _integrate(f, edges):
    return sum(quad(f, a, b, epsabs=0)[0] for a, b in zip(edges, edges[1:]))


def test_first_photon_density_matches_cdf(rect_scene):
    def density(x):
        return first_photon_density(rect_scene, x)

    edges = [0.0, rect_scene.tof, rect_scene.signal_end]
    for t in (10e-9, 27e-9, 60e-9):
        mass = _integrate(density, [e for e in edges if e < t] + [t])
        assert mass == pytest.approx(first_photon_cdf(rect_scene, t), rel=1e-7)

    tail = _integrate(density, [rect_scene.signal_end, TAIL])
    assert first_photon_cdf(rect_scene, rect_scene.signal_end) + tail == pytest.approx(1)


def test_first_photon_mean(rect_scene):
    edges = [0.0, rect_scene.tof, rect_scene.signal_end, TAIL]
    mean = _integrate(lambda x: x * first_photon_density(rect_scene, x), edges)
    assert first_photon_mean(rect_scene) == pytest.approx(mean, rel=1e-6)


def test_first_photon_amplitudes_show_pile_up(rect_scene):
    amplitudes = first_photon_amplitudes(rect_scene)
    assert amplitudes.a0 == rect_scene.lambda_b
    assert amplitudes.a3 < amplitudes.a0
    assert amplitudes.rate_combined == pytest.approx(1.1e8)
    assert first_photon_density(rect_scene, 0.0) == pytest.approx(amplitudes.a0)


def test_first_photon_closed_forms_need_rectangular_pulse(gaussian_scene):
    with pytest.raises(UnsupportedPulseException):
        first_photon_density(gaussian_scene, 1e-9)
    assert 0 < first_photon_cdf(gaussian_scene, 50e-9) < 1


def test_max_sustainable_flux():
    flux = max_sustainable_flux(100e-12, 0.01)
    assert flux == pytest.approx(1.48e9, rel=0.01)
    assert multi_photon_probability(flux, 100e-12) == pytest.approx(0.01)
    assert five_percent_rule_flux(100e-9) == pytest.approx(5e5)
    assert flux / five_percent_rule_flux(100e-9) == pytest.approx(3000, rel=0.05)
    assert max_sustainable_flux(100e-12, 0.5) > flux

    with pytest.raises(OutOfWindowException):
        max_sustainable_flux(100e-12, 1.5)


def test_detection_rate_and_distance():
    assert mean_photons_for_detection_rate(0.9) == pytest.approx(2.302585, rel=1e-6)
    assert tof_from_distance(3.8) == pytest.approx(25.35e-9, rel=1e-3)


def test_first_photon_mean_falls_with_signal():
    means = [
        first_photon_mean(SceneConfig.from_rates(1e7, lambda_s, 25e-9, 4e-9, T_ACQ))
        for lambda_s in (1e6, 1e7, 1e8, 1e9)
    ]
    assert all(a > b for a, b in zip(means, means[1:]))


def test_linear_mean_matches_quadrature(rng):
    for _ in range(100):
        t_w = rng.uniform(1e-9, 10e-9)
        shape = PulseShape.GAUSSIAN if rng.random() < 0.5 else PulseShape.RECTANGULAR
        pulse = LaserPulse(t_w, 10 ** rng.uniform(-3, 1), shape)
        lambda_b = 0.0 if rng.random() < 0.1 else 10 ** rng.uniform(5, 9)
        scene = SceneConfig(lambda_b, pulse, rng.uniform(0, T_ACQ - t_w), T_ACQ)

        edges = [0.0, scene.tof, scene.signal_end, T_ACQ]
        mean = _integrate(lambda t: t * linear_density(scene, t), edges)
        assert linear_mean(scene) == pytest.approx(mean, rel=1e-7)


def _first_arrivals(scene, n, rng):
    """首光子到达时间；窗口内没有光子时按背景指数分布延伸到窗口之后。"""
    times = np.empty(n)
    for i in range(n):
        first = sample_photon_stream(scene, rng).first
        if first is None:
            times[i] = scene.t_acq + rng.exponential(1 / scene.lambda_b)
        else:
            times[i] = first * PS
    return times


def test_first_arrivals_follow_first_photon_density(rect_scene, rng):
    times = _first_arrivals(rect_scene, 20000, rng)
    inside = times[times < T_ACQ]
    edges = np.linspace(0, T_ACQ, 101)
    counts, _ = np.histogram(inside, bins=edges)
    probabilities = np.diff(first_photon_cdf(rect_scene, edges))
    _, p, _ = chi_square_gof(counts, probabilities)
    assert p > 0.01


def test_first_photon_mean_matches_simulation(rect_scene, rng):
    times = _first_arrivals(rect_scene, 20000, rng)
    error = 3 * times.std(ddof=1) / math.sqrt(len(times))
    assert first_photon_mean(rect_scene) == pytest.approx(times.mean(), abs=error)
