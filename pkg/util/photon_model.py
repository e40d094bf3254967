import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum, unique
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import bisect
from scipy.special import gammainc, ndtr

from .exceptions import (
    NoSignalException,
    OutOfWindowException,
    UnsupportedPulseException,
)

PS = 1e-12
SPEED_OF_LIGHT = 299_792_458.0
FLUX_BRACKET = (1.0, 1e13)


@unique
class PulseShape(Enum):
    RECTANGULAR = "rectangular"
    GAUSSIAN = "truncated-gaussian"


def _phi(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2 * math.pi)


def _out(values, t):
    return float(values) if np.ndim(t) == 0 else values


@dataclass(frozen=True)
class LaserPulse:
    """激光脉冲 λ_S(t)，定义在 [0, T_W) 上。

    参数:
        t_w: 脉冲宽度（秒）
        mean_photons: 每个窗口的平均信号光子数，即 λ_S 在 [0, T_W] 上的积分
        shape: 脉冲形状
        center: 高斯中心（相对脉冲起点，默认 T_W/2）
        sigma: 高斯标准差（默认 T_W/6）
    """

    t_w: float
    mean_photons: float
    shape: PulseShape = PulseShape.RECTANGULAR
    center: Optional[float] = None
    sigma: Optional[float] = None

    def __post_init__(self):
        if not self.t_w > 0:
            raise OutOfWindowException(f"pulse duration must be positive: {self.t_w}")
        if not self.mean_photons >= 0:
            raise OutOfWindowException(
                f"mean photons must be nonnegative: {self.mean_photons}"
            )
        if self.shape is PulseShape.GAUSSIAN:
            if self.center is None:
                object.__setattr__(self, "center", self.t_w / 2)
            if self.sigma is None:
                object.__setattr__(self, "sigma", self.t_w / 6)
            if not self.sigma > 0:
                raise OutOfWindowException(f"sigma must be positive: {self.sigma}")

    @property
    def is_rectangular(self) -> bool:
        return self.shape is PulseShape.RECTANGULAR

    @property
    def level(self) -> float:
        """矩形脉冲的强度 λ_S。"""
        if not self.is_rectangular:
            raise UnsupportedPulseException(f"no constant level for {self.shape.value}")
        return self.mean_photons / self.t_w

    def _bounds(self) -> tuple[float, float, float]:
        a = -self.center / self.sigma
        b = (self.t_w - self.center) / self.sigma
        return a, b, float(ndtr(b) - ndtr(a))

    def rate(self, u: ArrayLike) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=np.float64)
        inside = (u >= 0) & (u < self.t_w)
        if self.is_rectangular:
            return np.where(inside, self.mean_photons / self.t_w, 0.0)

        _, _, z = self._bounds()
        density = _phi((u - self.center) / self.sigma) / (self.sigma * z)
        return np.where(inside, self.mean_photons * density, 0.0)

    def energy(self, u: ArrayLike) -> NDArray[np.float64]:
        """λ_S 从 0 到 u 的积分。"""
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, self.t_w)
        if self.is_rectangular:
            return self.mean_photons * u / self.t_w

        a, _, z = self._bounds()
        return self.mean_photons * (ndtr((u - self.center) / self.sigma) - ndtr(a)) / z

    @property
    def shape_mean(self) -> float:
        if self.is_rectangular:
            return self.t_w / 2

        a, b, z = self._bounds()
        return self.center + self.sigma * float(_phi(a) - _phi(b)) / z

    @property
    def shape_variance(self) -> float:
        if self.is_rectangular:
            return self.t_w**2 / 12

        a, b, z = self._bounds()
        pa, pb = float(_phi(a)), float(_phi(b))
        return self.sigma**2 * (1 + (a * pa - b * pb) / z - ((pa - pb) / z) ** 2)


@dataclass(frozen=True)
class SceneConfig:
    lambda_b: float
    pulse: LaserPulse
    tof: float
    t_acq: float

    def __post_init__(self):
        if not self.lambda_b >= 0:
            raise OutOfWindowException(f"background rate must be nonnegative: {self.lambda_b}")
        if not self.tof >= 0:
            raise OutOfWindowException(f"time of flight must be nonnegative: {self.tof}")
        # 激光回波必须完整落在采集窗口内
        if self.tof + self.pulse.t_w > self.t_acq * (1 + 1e-12):
            raise OutOfWindowException(
                f"echo [{self.tof}, {self.tof + self.pulse.t_w}] exceeds window {self.t_acq}"
            )

    @classmethod
    def from_rates(
        cls,
        lambda_b: float,
        lambda_s: float,
        tof: float,
        t_w: float,
        t_acq: float,
    ) -> "SceneConfig":
        return cls(lambda_b, LaserPulse(t_w, lambda_s * t_w), tof, t_acq)

    @property
    def signal_end(self) -> float:
        return self.tof + self.pulse.t_w

    @property
    def background_photons(self) -> float:
        return self.lambda_b * self.t_acq

    @property
    def total_photons(self) -> float:
        return self.background_photons + self.pulse.mean_photons

    @property
    def t_acq_ps(self) -> int:
        return int(round(self.t_acq / PS))

    def with_laser_off(self) -> "SceneConfig":
        return replace(self, pulse=replace(self.pulse, mean_photons=0.0))

    def with_background(self, lambda_b: float) -> "SceneConfig":
        return replace(self, lambda_b=lambda_b)


@dataclass(frozen=True)
class PhotonStream:
    times: NDArray[np.int64]
    t_acq_ps: int

    def __len__(self) -> int:
        return len(self.times)

    @property
    def first(self) -> Optional[int]:
        return int(self.times[0]) if len(self.times) else None


@dataclass(frozen=True)
class FirstPhotonAmplitudes:
    a0: float
    a1: float
    a2: float
    a3: float
    rate_background: float
    rate_laser: float
    rate_combined: float


def _check_window(scene: SceneConfig, t: ArrayLike) -> NDArray[np.float64]:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > scene.t_acq):
        raise OutOfWindowException(f"time outside [0, {scene.t_acq}]")
    return t


def _total(scene: SceneConfig) -> float:
    total = scene.total_photons
    if total <= 0:
        raise NoSignalException("zero total intensity in the acquisition window")
    return total


def composite_intensity(scene: SceneConfig, t: ArrayLike):
    x = _check_window(scene, t)
    return _out(scene.lambda_b + scene.pulse.rate(x - scene.tof), t)


def cumulative_intensity(scene: SceneConfig, t: ArrayLike):
    x = np.asarray(t, dtype=np.float64)
    return _out(scene.lambda_b * x + scene.pulse.energy(x - scene.tof), t)


def inverse_cumulative_intensity(scene: SceneConfig, y: ArrayLike):
    """求 Λ(t) = y 的解，y 取值于 [0, Λ(T_acq)]。"""
    x = np.asarray(y, dtype=np.float64)
    pulse = scene.pulse
    lb = scene.lambda_b

    if pulse.is_rectangular:
        ls = pulse.level
        y1 = lb * scene.tof
        y2 = y1 + (lb + ls) * pulse.t_w
        before = x / lb if lb > 0 else np.zeros_like(x)
        inside = scene.tof + (x - y1) / (lb + ls) if lb + ls > 0 else np.zeros_like(x)
        after = (
            scene.signal_end + (x - y2) / lb
            if lb > 0
            else np.full_like(x, scene.signal_end)
        )
        t = np.where(x < y1, before, np.where(x < y2, inside, after))
    else:
        lo = np.zeros_like(x)
        hi = np.full_like(x, scene.t_acq)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = cumulative_intensity(scene, mid) < x
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        t = 0.5 * (lo + hi)

    return _out(np.clip(t, 0.0, scene.t_acq), y)


def quantize_ps(times: ArrayLike, t_acq_ps: int) -> NDArray[np.int64]:
    """向下量化到整数皮秒 [0, T_acq)，碰撞的时间戳依次后移 1 ps 以保持严格递增。"""
    ps = np.floor(np.sort(np.asarray(times, dtype=np.float64)) / PS)
    ps = np.clip(ps, 0, t_acq_ps - 1)
    ps = ps.astype(np.int64)
    n = len(ps)
    if n == 0:
        return ps

    index = np.arange(n, dtype=np.int64)
    shifted = np.maximum.accumulate(ps - index)
    shifted = np.minimum(shifted, t_acq_ps - n)
    return shifted + index


def sample_photon_stream(scene: SceneConfig, rng: np.random.Generator) -> PhotonStream:
    total = scene.total_photons
    n = rng.poisson(total) if total > 0 else 0
    times = inverse_cumulative_intensity(scene, rng.random(n) * total)
    return PhotonStream(quantize_ps(times, scene.t_acq_ps), scene.t_acq_ps)


def linear_density(scene: SceneConfig, t: ArrayLike):
    x = _check_window(scene, t)
    density = (scene.lambda_b + scene.pulse.rate(x - scene.tof)) / _total(scene)
    return _out(density, t)


def linear_cdf(scene: SceneConfig, t: ArrayLike):
    x = _check_window(scene, t)
    return _out(cumulative_intensity(scene, x) / _total(scene), t)


def linear_mean(scene: SceneConfig) -> float:
    total = _total(scene)
    energy = scene.pulse.mean_photons
    moment = energy * scene.pulse.shape_mean if energy > 0 else 0.0
    return (scene.lambda_b * scene.t_acq**2 / 2 + scene.tof * energy + moment) / total


def alpha(scene: SceneConfig) -> float:
    return scene.background_photons / _total(scene)


def tof_from_mu(mu: float, alpha: float, t_acq: float, t_laser_mean: float) -> float:
    if alpha >= 1:
        raise NoSignalException(f"alpha = {alpha} leaves no laser contribution")
    if 1 - alpha < 1e-9:
        warnings.warn(
            f"alpha = {alpha} is numerically indistinguishable from 1",
            RuntimeWarning,
            stacklevel=2,
        )
    return (mu - alpha * t_acq / 2) / (1 - alpha) - t_laser_mean


def laser_mean_time(pulse: LaserPulse) -> float:
    if pulse.mean_photons <= 0:
        raise NoSignalException("zero-energy pulse has no mean arrival time")
    return pulse.shape_mean


def laser_time_variance(pulse: LaserPulse) -> float:
    if pulse.mean_photons <= 0:
        raise NoSignalException("zero-energy pulse has no arrival time spread")
    return pulse.shape_variance


def _rectangular(scene: SceneConfig) -> tuple[float, float, float, float]:
    if not scene.pulse.is_rectangular:
        raise UnsupportedPulseException(
            f"first-photon closed forms need a rectangular pulse, got {scene.pulse.shape.value}"
        )
    return scene.lambda_b, scene.pulse.level, scene.tof, scene.pulse.t_w


def first_photon_density(scene: SceneConfig, t: ArrayLike):
    lb, ls, tof, tw = _rectangular(scene)
    x = np.asarray(t, dtype=np.float64)
    if np.any(x < 0):
        raise OutOfWindowException("first-photon density is defined for t >= 0")

    before = lb * np.exp(-lb * x)
    inside = (ls + lb) * np.exp(-lb * x - ls * (x - tof))
    after = lb * np.exp(-ls * tw - lb * x)
    density = np.where(x <= tof, before, np.where(x <= tof + tw, inside, after))
    return _out(density, t)


def first_photon_cdf(scene: SceneConfig, t: ArrayLike):
    """首光子到达时间的分布函数（不截断于 T_acq）。"""
    x = np.asarray(t, dtype=np.float64)
    if np.any(x < 0):
        raise OutOfWindowException("first-photon CDF is defined for t >= 0")
    exponent = scene.lambda_b * x + scene.pulse.energy(x - scene.tof)
    return _out(-np.expm1(-exponent), t)


def first_photon_amplitudes(scene: SceneConfig) -> FirstPhotonAmplitudes:
    lb, ls, tof, tw = _rectangular(scene)
    return FirstPhotonAmplitudes(
        a0=lb,
        a1=ls * math.exp(ls * tof),
        a2=(ls + lb) * math.exp(ls * tof),
        a3=lb * math.exp(-ls * tw),
        rate_background=lb,
        rate_laser=ls,
        rate_combined=ls + lb,
    )


def first_photon_mean(scene: SceneConfig) -> float:
    lb, ls, tof, tw = _rectangular(scene)
    if lb <= 0:
        raise NoSignalException("mean first arrival is undefined without background")

    return (
        -math.expm1(-lb * tof) / lb
        + math.exp(-lb * tof) * -math.expm1(-(ls + lb) * tw) / (ls + lb)
        + math.exp(-ls * tw - lb * (tof + tw)) / lb
    )


def multi_photon_probability(flux: float, t_ts: float) -> float:
    """同一 TDC 时间格内到达多于一个光子的概率 1 - e^{-x}(1 + x)。"""
    return float(gammainc(2, flux * t_ts))


def max_sustainable_flux(t_ts: float, p_threshold: float) -> float:
    if not t_ts > 0:
        raise OutOfWindowException(f"timestamp resolution must be positive: {t_ts}")
    if not 0 < p_threshold < 1:
        raise OutOfWindowException(f"threshold must lie in (0, 1): {p_threshold}")

    def excess(flux: float) -> float:
        return multi_photon_probability(flux, t_ts) - p_threshold

    lo, hi = FLUX_BRACKET
    if excess(lo) > 0:
        lo = 0.0
    while excess(hi) < 0:
        hi *= 10

    return float(bisect(excess, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=200))


def five_percent_rule_flux(t_acq: float) -> float:
    return 0.05 / t_acq


def detection_probability(mean_photons: float) -> float:
    return -math.expm1(-mean_photons)


def mean_photons_for_detection_rate(rate: float) -> float:
    if not 0 <= rate < 1:
        raise OutOfWindowException(f"detection rate must lie in [0, 1): {rate}")
    return -math.log1p(-rate)


def tof_from_distance(distance: float) -> float:
    return 2 * distance / SPEED_OF_LIGHT
