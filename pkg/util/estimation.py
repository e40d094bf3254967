import math
from dataclasses import dataclass, replace
from enum import Enum, unique
from typing import Iterable, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import bisect

from .detectors import (
    DetectorConfig,
    Histogram,
    Scheme,
    acquire_or_discard_from_timestamps,
    linearized_times,
    pooled_times,
)
from .exceptions import (
    ConfigException,
    DegenerateFitException,
    HistogramRangeException,
    InsufficientTrialsException,
    NoSignalException,
    OutOfWindowException,
)
from .photon_model import (
    PS,
    LaserPulse,
    SceneConfig,
    laser_mean_time,
    laser_time_variance,
)

# 低于该 λL 视为平坦（拟合退化）
DEGENERATE_RATE_LENGTH = 1e-2


@unique
class Phase(Enum):
    BACKGROUND = "background"
    TOTAL = "total"


@dataclass(frozen=True)
class AccumulatorState:
    """两个计数器与时间戳累加器（皮秒）。

    sum_t_bg 仅在 track_bg_sum 时累加；windows_* 记录各阶段的窗口数，
    两阶段窗口数不等时估计器按比例换算 N_bg。
    """

    n_bg: int = 0
    n_tot: int = 0
    sum_t_tot: int = 0
    sum_t_bg: int = 0
    windows_bg: int = 0
    windows_tot: int = 0
    overflow: bool = False
    track_bg_sum: bool = False
    counter_bits: int = 16
    tdc_bits: int = 10
    t_ts_ps: int = 100

    @property
    def counter_max(self) -> int:
        return 2**self.counter_bits - 1

    @property
    def accumulator_max_ps(self) -> int:
        return (2 ** (3 * self.tdc_bits) - 1) * self.t_ts_ps

    @property
    def background_scale(self) -> float:
        if self.windows_bg and self.windows_tot and self.windows_bg != self.windows_tot:
            return self.windows_tot / self.windows_bg
        return 1.0

    @property
    def t_bar_tot(self) -> float:
        return self.sum_t_tot * PS / self.n_tot if self.n_tot else math.nan

    @property
    def t_bar_bg(self) -> float:
        return self.sum_t_bg * PS / self.n_bg if self.n_bg else math.nan

    def _saturate(self, counter: int, accumulator: int) -> tuple[int, int, bool]:
        overflow = counter > self.counter_max or accumulator > self.accumulator_max_ps
        return (
            min(counter, self.counter_max),
            min(accumulator, self.accumulator_max_ps),
            overflow,
        )


def accumulate(
    state: AccumulatorState, times: ArrayLike, phase: Phase, windows: int = 1
) -> AccumulatorState:
    times = np.asarray(times, dtype=np.int64)
    n = len(times)
    total = int(times.sum(dtype=np.int64)) if n else 0

    if phase is Phase.BACKGROUND:
        added = total if state.track_bg_sum else 0
        n_bg, sum_bg, overflow = state._saturate(state.n_bg + n, state.sum_t_bg + added)
        return replace(
            state,
            n_bg=n_bg,
            sum_t_bg=sum_bg,
            windows_bg=state.windows_bg + windows,
            overflow=state.overflow or overflow,
        )

    n_tot, sum_tot, overflow = state._saturate(state.n_tot + n, state.sum_t_tot + total)
    return replace(
        state,
        n_tot=n_tot,
        sum_t_tot=sum_tot,
        windows_tot=state.windows_tot + windows,
        overflow=state.overflow or overflow,
    )


def merge(a: AccumulatorState, b: AccumulatorState) -> AccumulatorState:
    layout = (a.track_bg_sum, a.counter_bits, a.tdc_bits, a.t_ts_ps)
    if layout != (b.track_bg_sum, b.counter_bits, b.tdc_bits, b.t_ts_ps):
        raise ConfigException("cannot merge accumulators of different layouts")

    n_bg, sum_bg, overflow_bg = a._saturate(a.n_bg + b.n_bg, a.sum_t_bg + b.sum_t_bg)
    n_tot, sum_tot, overflow_tot = a._saturate(a.n_tot + b.n_tot, a.sum_t_tot + b.sum_t_tot)
    return replace(
        a,
        n_bg=n_bg,
        n_tot=n_tot,
        sum_t_bg=sum_bg,
        sum_t_tot=sum_tot,
        windows_bg=a.windows_bg + b.windows_bg,
        windows_tot=a.windows_tot + b.windows_tot,
        overflow=a.overflow or b.overflow or overflow_bg or overflow_tot,
    )


@dataclass(frozen=True)
class CalibrationData:
    t_laser_mean: float
    pulse_width: float = 0.0

    @classmethod
    def from_pulse(cls, pulse: LaserPulse) -> "CalibrationData":
        return cls(laser_mean_time(pulse), pulse.t_w)


@unique
class Invalid(Enum):
    OVERFLOW = "overflow"
    OUT_OF_WINDOW = "out_of_window"


@dataclass(frozen=True)
class ToFEstimate:
    tof: float
    alpha_hat: float
    valid: bool
    n_bg: float
    n_tot: int
    reason: Optional[Invalid] = None

    def to_record(self) -> dict:
        return {
            "tof_ps": self.tof / PS,
            "alpha_hat": self.alpha_hat,
            "n_bg": self.n_bg,
            "n_tot": self.n_tot,
            "valid": self.valid,
            "reason": self.reason.value if self.reason else None,
        }


def _estimate(
    state: AccumulatorState,
    numerator: float,
    n_bg: float,
    calib: CalibrationData,
    t_acq: Optional[float],
) -> ToFEstimate:
    alpha_hat = n_bg / state.n_tot if state.n_tot else math.nan
    # 计数器饱和时比较 N_tot 与 N_bg 没有意义
    if state.overflow:
        tof = numerator / (state.n_tot - n_bg) if state.n_tot > n_bg else math.nan
        tof -= calib.t_laser_mean
        return ToFEstimate(tof, alpha_hat, False, n_bg, state.n_tot, Invalid.OVERFLOW)
    if state.n_tot <= n_bg:
        raise NoSignalException(f"N_tot = {state.n_tot} does not exceed N_bg = {n_bg}")

    tof = numerator / (state.n_tot - n_bg) - calib.t_laser_mean
    inside = math.isfinite(tof)
    if t_acq is not None:
        inside = inside and 0 <= tof <= t_acq - calib.pulse_width
    reason = None if inside else Invalid.OUT_OF_WINDOW
    return ToFEstimate(tof, alpha_hat, inside, n_bg, state.n_tot, reason)


def estimate_tof_simplified(
    state: AccumulatorState, calib: CalibrationData, t_acq: float
) -> ToFEstimate:
    """均匀背景下的直方图无关估计器，背景平均时间取 T_acq/2。"""
    n_bg = state.n_bg * state.background_scale
    numerator = state.sum_t_tot * PS - n_bg * t_acq / 2
    return _estimate(state, numerator, n_bg, calib, t_acq)


def estimate_tof_full(
    state: AccumulatorState, calib: CalibrationData, t_acq: Optional[float] = None
) -> ToFEstimate:
    """使用实测背景平均时间 t̄_bg 的估计器，对非均匀背景无偏。"""
    if not state.track_bg_sum:
        raise ConfigException("background timestamps were not accumulated")
    scale = state.background_scale
    n_bg = state.n_bg * scale
    numerator = (state.sum_t_tot - state.sum_t_bg * scale) * PS
    return _estimate(state, numerator, n_bg, calib, t_acq)


def naive_difference_estimate(t_bar_tot: float, t_bar_bg: float) -> float:
    return t_bar_tot - t_bar_bg


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    degenerate: bool
    counts: int


def _truncated_mean_fraction(x: float) -> float:
    """截断于 [0, L] 的指数分布均值与 L 之比，x = λL。"""
    if x < 1e-4:
        return 0.5 - x / 12 + x**3 / 720
    if x > 700:
        return 1 / x
    return 1 / x - 1 / math.expm1(x)


def exponential_fit(
    h: Histogram, region: tuple[float, float], censored: bool = False
) -> ExponentialFit:
    """区域内指数分布的最大似然速率，计数取格中心。

    默认只用区域内的形状（截断指数）。censored 时把区域之后的采集（含空采集）
    当作在区域末端截尾的观测，需要直方图带有总采集次数。
    """
    window = h.region(*region)
    counts = h.counts[window]
    n = int(counts.sum())
    if n == 0:
        raise DegenerateFitException(f"no counts in region {region}")

    start = window.start * h.bin_width_ps
    length = (window.stop - window.start) * h.bin_width_ps
    offsets = h.centers_ps[window] - start
    if censored:
        if h.acquisitions is None:
            raise DegenerateFitException("censored fit needs the number of acquisitions")
        survivors = h.acquisitions - int(h.counts[: window.stop].sum())
        exposure = float(np.dot(counts, offsets)) + survivors * length
        if exposure <= 0:
            raise DegenerateFitException(f"no exposure in region {region}")
        return ExponentialFit(n / (exposure * PS), False, n)

    fraction = float(np.dot(counts, offsets)) / n / length
    if fraction >= 0.5:
        return ExponentialFit(0.0, True, n)

    x = bisect(
        lambda v: _truncated_mean_fraction(v) - fraction,
        1e-12,
        1 / fraction,
        rtol=1e-10,
        maxiter=500,
    )
    rate = x / (length * PS)
    return ExponentialFit(rate, x < DEGENERATE_RATE_LENGTH, n)


def rate_from_linearized(h: Histogram, region: tuple[float, float], windows: int) -> float:
    if windows <= 0:
        raise OutOfWindowException(f"windows must be positive: {windows}")
    window = h.region(*region)
    duration = (window.stop - window.start) * h.bin_width
    if duration <= 0:
        raise OutOfWindowException(f"region {region} covers no bins")
    return int(h.counts[window].sum()) / (windows * duration)


@dataclass(frozen=True)
class BackgroundRecovery:
    """线性化直方图在激光峰前后估计的背景光通量，以原始直方图的截尾指数拟合为参照。"""

    rate_fit: float
    rate_before: float
    rate_after: float
    counts_before: int
    counts_after: int

    @property
    def deviation_before(self) -> float:
        return self.rate_before / self.rate_fit - 1

    @property
    def deviation_after(self) -> float:
        return self.rate_after / self.rate_fit - 1

    def within(self, tolerance: float) -> bool:
        # 计数少时放宽到 4 倍泊松相对涨落
        pairs = (
            (self.deviation_before, self.counts_before),
            (self.deviation_after, self.counts_after),
        )
        return all(
            counts > 0 and abs(dev) <= max(tolerance, 4 / math.sqrt(counts))
            for dev, counts in pairs
        )

    def to_record(self) -> dict:
        return {
            "rate_fit": self.rate_fit,
            "rate_before_linearized": self.rate_before,
            "rate_after_linearized": self.rate_after,
            "deviation_before": self.deviation_before,
            "deviation_after": self.deviation_after,
            "counts_before": self.counts_before,
            "counts_after": self.counts_after,
        }


def recover_background(
    scene: SceneConfig,
    original: Histogram,
    linearized: Histogram,
    windows: int,
    horizon: Optional[float] = None,
) -> BackgroundRecovery:
    half = linearized.bin_width / 2
    # 跨越脉冲边界的格不计入
    before = (0.0, scene.tof - half)
    # 记录值达到 horizon 减一格即结束 run，其后的格不再线性
    after = (scene.signal_end + half, (horizon or scene.t_acq) - linearized.bin_width)
    try:
        fitted = exponential_fit(original, before, censored=True).rate
    except DegenerateFitException:
        fitted = math.nan
    return BackgroundRecovery(
        fitted,
        rate_from_linearized(linearized, before, windows),
        rate_from_linearized(linearized, after, windows),
        int(linearized.counts[linearized.region(*before)].sum()),
        int(linearized.counts[linearized.region(*after)].sum()),
    )


@dataclass(frozen=True)
class PeakEstimate:
    time: float
    bin_index: int
    low_confidence: bool


def peak_estimate(h: Histogram) -> PeakEstimate:
    """三格滑动平均后取最大值所在格中心。"""
    if h.total == 0:
        raise HistogramRangeException("peak of an all-zero histogram")

    smooth = h.counts.astype(np.float64)
    if h.n_bins >= 3:
        kernel = np.ones(3)
        smooth = np.convolve(smooth, kernel, mode="same") / np.convolve(
            np.ones(h.n_bins), kernel, mode="same"
        )
    candidates = np.flatnonzero(np.isclose(smooth, smooth.max(), rtol=1e-12, atol=0))
    # 平滑后并列时原始计数大者优先，再取最早
    best = int(candidates[np.argmax(h.counts[candidates])])
    low_confidence = bool(np.all(h.counts == h.counts[0]))
    return PeakEstimate(float(h.centers_ps[best] * PS), best, low_confidence)


@dataclass(frozen=True)
class TrialStats:
    mean_error: float
    std_dev: float
    rel_accuracy: float
    rel_precision: float
    trials: int
    valid_trials: int

    def to_record(self) -> dict:
        return {
            "mean_error_ps": self.mean_error / PS,
            "std_ps": self.std_dev / PS,
            "rel_accuracy": self.rel_accuracy,
            "rel_precision": self.rel_precision,
            "trials": self.trials,
            "valid_trials": self.valid_trials,
        }


def accuracy_precision(estimates: Iterable[ToFEstimate], truth: float) -> TrialStats:
    estimates = list(estimates)
    values = np.asarray([e.tof for e in estimates if e.valid], dtype=np.float64)
    if len(values) < 2:
        raise InsufficientTrialsException(
            f"{len(values)} valid estimates out of {len(estimates)}"
        )

    mean_error = float(values.mean() - truth)
    std_dev = float(values.std(ddof=1))
    return TrialStats(
        mean_error,
        std_dev,
        mean_error / truth if truth else math.nan,
        std_dev / truth if truth else math.nan,
        len(estimates),
        len(values),
    )


def predicted_tof_std(scene: SceneConfig, n_windows: int) -> float:
    """理想线性探测器、两阶段各 n_windows 个窗口时估计器的标准差（一阶近似）。"""
    signal = scene.pulse.mean_photons
    if signal <= 0:
        raise NoSignalException("no laser photons")

    t = scene.t_acq
    background = scene.background_photons
    tau = scene.tof + laser_mean_time(scene.pulse)
    spread = laser_time_variance(scene.pulse)
    numerator = (
        background * (t**2 / 3 - tau * t + tau**2)
        + signal * spread
        + background * (tau - t / 2) ** 2
    )
    return math.sqrt(numerator / (n_windows * signal**2))


def measure_tof(
    scene: SceneConfig,
    calib: CalibrationData,
    scheme: Scheme,
    n_windows: int,
    rng: np.random.Generator,
    cfg: Optional[DetectorConfig] = None,
    bg_windows: Optional[int] = None,
    counter_bits: int = 16,
    track_bg_sum: bool = False,
) -> ToFEstimate:
    """先关闭激光采集背景，再采集背景加信号，得到一次 ToF 估计。"""
    cfg = cfg or DetectorConfig()
    bg_windows = bg_windows or n_windows
    state = AccumulatorState(
        track_bg_sum=track_bg_sum,
        counter_bits=counter_bits,
        tdc_bits=cfg.tdc_bits,
        t_ts_ps=cfg.t_ts_ps,
    )

    times, _ = linearized_times(scene.with_laser_off(), cfg, scheme, bg_windows, rng)
    state = accumulate(state, times, Phase.BACKGROUND, bg_windows)
    times, _ = linearized_times(scene, cfg, scheme, n_windows, rng)
    state = accumulate(state, times, Phase.TOTAL, n_windows)

    if track_bg_sum:
        return estimate_tof_full(state, calib, scene.t_acq)
    return estimate_tof_simplified(state, calib, scene.t_acq)


def calibrate_laser_mean(
    pulse: LaserPulse,
    rng: np.random.Generator,
    cfg: Optional[DetectorConfig] = None,
    scheme: Scheme = Scheme.TIME_GATED,
    n_timestamps: int = 100_000,
    t_acq: float = 100e-9,
) -> CalibrationData:
    """零背景、零距离的标定采集，得到 t̄_l（同时吸收 TDC 量化偏移）。"""
    if pulse.mean_photons <= 0:
        raise NoSignalException("calibration needs laser photons")
    cfg = cfg or DetectorConfig()
    scene = SceneConfig(0.0, pulse, 0.0, t_acq)
    windows = max(1, math.ceil(n_timestamps / pulse.mean_photons))

    times, _ = linearized_times(scene, cfg, scheme, windows, rng)
    if not len(times):
        raise NoSignalException("calibration run recorded no timestamps")
    return CalibrationData(float(times.mean()) * PS, pulse.t_w)


def calibrate_from_timestamps(
    relative_first_arrivals: Iterable[int],
    pulse_width: float,
    t_acq: float = 100e-9,
    t_ts: float = 100e-12,
    max_discards: int = 10_000,
) -> CalibrationData:
    """回放模式的标定：零背景、近零距离的首光子记录先经 acquire-or-discard 线性化。"""
    runs, _ = acquire_or_discard_from_timestamps(
        relative_first_arrivals, t_acq, t_ts, max_discards
    )
    times = pooled_times(runs, complete_only=True)
    if not len(times):
        raise NoSignalException("calibration record holds no complete run")
    return CalibrationData(float(times.mean()) * PS, pulse_width)
