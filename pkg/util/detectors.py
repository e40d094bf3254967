import math
from dataclasses import dataclass
from enum import Enum, unique
from typing import Iterable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import HistogramRangeException, OutOfWindowException
from .photon_model import (
    PS,
    PhotonStream,
    SceneConfig,
    cumulative_intensity,
    inverse_cumulative_intensity,
    sample_photon_stream,
)

# 空采集（窗口内无光子）的时间戳编码
EMPTY = -1
# e^{Λ} 次丢弃需要落在 int64 范围内
MAX_DISCARD_EXPONENT = 40.0


@unique
class Scheme(Enum):
    ACQUIRE_OR_DISCARD = "acquire_or_discard"
    TIME_GATED = "time_gated"
    IDEAL = "ideal"


@dataclass(frozen=True)
class DetectorConfig:
    t_ts: float = 100e-12
    tdc_bits: int = 10
    apply_quantization: bool = False

    def __post_init__(self):
        if not self.t_ts > 0:
            raise OutOfWindowException(f"TDC resolution must be positive: {self.t_ts}")
        if self.tdc_bits < 1:
            raise OutOfWindowException(f"TDC needs at least one bit: {self.tdc_bits}")

    @property
    def t_ts_ps(self) -> int:
        return max(1, int(round(self.t_ts / PS)))

    @property
    def bins(self) -> int:
        return 2**self.tdc_bits

    @property
    def grid_ps(self) -> int:
        return self.t_ts_ps if self.apply_quantization else 1

    def check_covers(self, t_acq: float) -> None:
        if self.apply_quantization and self.bins * self.t_ts < t_acq * (1 - 1e-12):
            raise OutOfWindowException(
                f"{self.bins} TDC bins of {self.t_ts} s do not cover {t_acq} s"
            )

    def quantize(self, times_ps):
        """TDC 量化，记录时间格中心。"""
        if not self.apply_quantization:
            return times_ps
        step = self.t_ts_ps
        return (np.asarray(times_ps) // step) * step + step // 2

    def gate_after(self, times_ps):
        """下一次允许记录的最早时间（皮秒），即所在格子的上边沿。"""
        step = self.grid_ps
        return (np.asarray(times_ps) // step + 1) * step


@dataclass
class RunStats:
    acquisitions_used: int = 0
    raw_detections: int = 0
    recorded: int = 0

    def __add__(self, other: "RunStats") -> "RunStats":
        return RunStats(
            self.acquisitions_used + other.acquisitions_used,
            self.raw_detections + other.raw_detections,
            self.recorded + other.recorded,
        )


@dataclass(frozen=True)
class LinearizedRun:
    times: NDArray[np.int64]
    stats: RunStats
    complete: bool = True


@dataclass(frozen=True)
class RunBatch:
    """多次线性化 run 的结果，times 按 run 顺序拼接。"""

    times: NDArray[np.int64]
    run_index: NDArray[np.int64]
    acquisitions: NDArray[np.int64]
    raw_detections: NDArray[np.int64]
    recorded: NDArray[np.int64]

    @property
    def n_runs(self) -> int:
        return len(self.recorded)

    @property
    def totals(self) -> RunStats:
        return RunStats(
            int(self.acquisitions.sum()),
            int(self.raw_detections.sum()),
            int(self.recorded.sum()),
        )

    def runs(self) -> list[LinearizedRun]:
        bounds = np.concatenate(([0], np.cumsum(self.recorded)))
        return [
            LinearizedRun(
                self.times[bounds[i] : bounds[i + 1]],
                RunStats(
                    int(self.acquisitions[i]),
                    int(self.raw_detections[i]),
                    int(self.recorded[i]),
                ),
            )
            for i in range(self.n_runs)
        ]


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    counts: NDArray[np.int64]
    depth_limit: Optional[int] = None
    saturated: bool = False
    acquisitions: Optional[int] = None

    @property
    def bin_width_ps(self) -> int:
        return int(round(self.bin_width / PS))

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def empty(self) -> int:
        if self.acquisitions is None or self.saturated:
            return 0
        return self.acquisitions - self.total

    @property
    def starts_ps(self) -> NDArray[np.int64]:
        return np.arange(self.n_bins, dtype=np.int64) * self.bin_width_ps

    @property
    def centers_ps(self) -> NDArray[np.int64]:
        return self.starts_ps + self.bin_width_ps // 2

    @property
    def edges(self) -> NDArray[np.float64]:
        return np.arange(self.n_bins + 1) * self.bin_width

    def region(self, start: float, end: float) -> slice:
        """中心落在 [start, end) 内的时间格。"""
        centers = self.centers_ps * PS
        inside = np.flatnonzero((centers >= start) & (centers < end))
        if not len(inside):
            return slice(0, 0)
        return slice(int(inside[0]), int(inside[-1]) + 1)


def _recorded_ps(
    scene: SceneConfig, t: ArrayLike, cfg: Optional[DetectorConfig] = None
) -> NDArray[np.int64]:
    ps = np.clip(np.floor(np.asarray(t) / PS), 0, scene.t_acq_ps - 1).astype(np.int64)
    if cfg is not None:
        ps = np.minimum(cfg.quantize(ps), scene.t_acq_ps - 1)
    return ps


def detect_first_photon(stream: PhotonStream, cfg: DetectorConfig) -> Optional[int]:
    first = stream.first
    if first is None:
        return None
    return int(cfg.quantize(first))


def acquire_or_discard_run(
    scene: SceneConfig, cfg: DetectorConfig, rng: np.random.Generator
) -> LinearizedRun:
    cfg.check_covers(scene.t_acq)
    stats = RunStats()
    recorded: list[int] = list()
    # 每轮第一个时间戳总是有效
    largest: Optional[int] = None
    while True:
        stats.acquisitions_used += 1
        t = detect_first_photon(sample_photon_stream(scene, rng), cfg)
        if t is None:
            break

        stats.raw_detections += 1
        if largest is not None and t <= largest:
            continue
        recorded.append(t)
        largest = t

    stats.recorded = len(recorded)
    return LinearizedRun(np.asarray(recorded, dtype=np.int64), stats)


def time_gated_run(
    scene: SceneConfig, cfg: DetectorConfig, rng: np.random.Generator
) -> LinearizedRun:
    cfg.check_covers(scene.t_acq)
    stats = RunStats()
    recorded: list[int] = list()
    gate = 0
    while True:
        stats.acquisitions_used += 1
        stream = sample_photon_stream(scene, rng)
        later = stream.times[stream.times >= gate]
        if not len(later):
            break

        stats.raw_detections += 1
        t = int(cfg.quantize(later[0]))
        recorded.append(t)
        gate = int(cfg.gate_after(t))

    stats.recorded = len(recorded)
    return LinearizedRun(np.asarray(recorded, dtype=np.int64), stats)


def simulate_runs(
    scene: SceneConfig,
    cfg: DetectorConfig,
    scheme: Scheme,
    n_runs: int,
    rng: np.random.Generator,
) -> RunBatch:
    """批量模拟线性化 run。

    在 Λ 空间中从当前门限出发抽取下一次被接受的到达时间；对于 acquire-or-discard，
    门限 m 之前被丢弃的周期数服从成功概率为 e^{-Λ(m)} 的几何分布。
    """
    if scheme is Scheme.IDEAL:
        raise OutOfWindowException("the ideal detector has no runs")
    cfg.check_covers(scene.t_acq)
    total = scene.total_photons
    discarding = scheme is Scheme.ACQUIRE_OR_DISCARD
    if discarding and total > MAX_DISCARD_EXPONENT:
        raise OutOfWindowException(
            f"acquire-or-discard needs about e^{total:.1f} cycles per run"
        )

    threshold = np.zeros(n_runs)
    acquisitions = np.zeros(n_runs, dtype=np.int64)
    raw = np.zeros(n_runs, dtype=np.int64)
    recorded = np.zeros(n_runs, dtype=np.int64)
    index_chunks: list[NDArray[np.int64]] = list()
    time_chunks: list[NDArray[np.int64]] = list()

    active = np.arange(n_runs, dtype=np.int64)
    while active.size:
        if discarding:
            discards = rng.geometric(np.exp(-threshold[active])) - 1
            acquisitions[active] += discards
            raw[active] += discards

        candidate = threshold[active] + rng.standard_exponential(active.size)
        acquisitions[active] += 1
        hit = candidate < total
        active = active[hit]
        if not active.size:
            break

        t = inverse_cumulative_intensity(scene, candidate[hit])
        values = _recorded_ps(scene, t, cfg)
        raw[active] += 1
        recorded[active] += 1
        index_chunks.append(active)
        time_chunks.append(values)

        # 门限移到记录值所在格子的上边沿
        edge = np.minimum(cfg.gate_after(values) * PS, scene.t_acq)
        threshold[active] = cumulative_intensity(scene, edge)

    if index_chunks:
        run_index = np.concatenate(index_chunks)
        times = np.concatenate(time_chunks)
        order = np.argsort(run_index, kind="stable")
        run_index, times = run_index[order], times[order]
    else:
        run_index = np.zeros(0, dtype=np.int64)
        times = np.zeros(0, dtype=np.int64)

    return RunBatch(times, run_index, acquisitions, raw, recorded)


def ideal_detector_times(
    scene: SceneConfig,
    n_windows: int,
    rng: np.random.Generator,
    cfg: Optional[DetectorConfig] = None,
) -> NDArray[np.int64]:
    """无死时间探测器在 n_windows 个窗口内记录的全部时间戳（合并）。"""
    total = scene.total_photons
    n = rng.poisson(total * n_windows) if total > 0 else 0
    t = inverse_cumulative_intensity(scene, rng.random(n) * total)
    ps = _recorded_ps(scene, t, cfg)
    return ps


def linearized_times(
    scene: SceneConfig,
    cfg: DetectorConfig,
    scheme: Scheme,
    n_windows: int,
    rng: np.random.Generator,
) -> tuple[NDArray[np.int64], RunStats]:
    if scheme is Scheme.IDEAL:
        times = ideal_detector_times(scene, n_windows, rng, cfg)
        return times, RunStats(n_windows, len(times), len(times))

    batch = simulate_runs(scene, cfg, scheme, n_windows, rng)
    return batch.times, batch.totals


def expected_run_cost(scene: SceneConfig, scheme: Scheme) -> float:
    """每个 run 平均消耗的激光周期数。"""
    total = scene.total_photons
    if scheme is Scheme.ACQUIRE_OR_DISCARD:
        return math.exp(total)
    if scheme is Scheme.TIME_GATED:
        return total + 1
    return 1.0


def linearized_bin_probabilities(
    scene: SceneConfig, edges: ArrayLike
) -> NDArray[np.float64]:
    """线性化 run 在每个时间格中留下一个记录的概率 1 - e^{-ΔΛ}。

    同一格内的多个光子只能记录一次，格内强度低时退化为 ΔΛ。
    """
    return -np.expm1(-np.diff(cumulative_intensity(scene, np.asarray(edges))))


def first_photon_dataset(
    scene: SceneConfig,
    n_acquisitions: int,
    rng: np.random.Generator,
    cfg: Optional[DetectorConfig] = None,
) -> NDArray[np.int64]:
    """传统 d-ToF 传感器数据：每次采集一个相对首光子时间，空采集记为 EMPTY。"""
    exponent = rng.standard_exponential(n_acquisitions)
    hit = exponent < scene.total_photons
    t = inverse_cumulative_intensity(scene, exponent[hit])
    ps = _recorded_ps(scene, t, cfg)

    data = np.full(n_acquisitions, EMPTY, dtype=np.int64)
    data[hit] = ps
    return data


def build_histogram(
    times: ArrayLike,
    bin_width: float,
    depth_limit: Optional[int] = None,
    span: Optional[float] = None,
    acquisitions: Optional[int] = None,
) -> Histogram:
    """按 floor(t / bin_width) 统计时间戳。

    参数:
        times: 皮秒时间戳，EMPTY 表示空采集（此时采集次数取 len(times)）
        bin_width: 格宽（秒）
        depth_limit: 每格计数上限
        span: 直方图覆盖的时间长度（秒），缺省时取到最大时间戳
        acquisitions: 总采集次数
    """
    if not bin_width > 0:
        raise HistogramRangeException(f"bin width must be positive: {bin_width}")
    bin_width_ps = int(round(bin_width / PS))
    if bin_width_ps < 1:
        raise HistogramRangeException(f"bin width below 1 ps: {bin_width}")

    times = np.asarray(times, dtype=np.int64)
    detected = times[times != EMPTY]
    if len(detected) != len(times) and acquisitions is None:
        acquisitions = len(times)
    if len(detected) and detected.min() < 0:
        raise HistogramRangeException("negative timestamp")

    index = detected // bin_width_ps
    if span is not None:
        n_bins = int(math.ceil(round(span / PS) / bin_width_ps))
    else:
        n_bins = int(index.max()) + 1 if len(index) else 0
    if len(index) and index.max() >= n_bins:
        raise HistogramRangeException(
            f"timestamp {int(detected.max())} ps beyond {n_bins} bins of {bin_width_ps} ps"
        )

    counts = np.bincount(index, minlength=n_bins).astype(np.int64)
    saturated = False
    if depth_limit is not None:
        saturated = bool(np.any(counts > depth_limit))
        counts = np.minimum(counts, depth_limit)

    return Histogram(bin_width, counts, depth_limit, saturated, acquisitions)


def replay_histogram(h: Histogram, rng: np.random.Generator) -> NDArray[np.int64]:
    """解包并随机打乱直方图内容，得到首光子时间的一个实现。"""
    times = np.repeat(h.centers_ps, h.counts)
    if h.empty > 0:
        times = np.concatenate((times, np.full(h.empty, EMPTY, dtype=np.int64)))
    return rng.permutation(times)


def acquire_or_discard_from_timestamps(
    relative_first_arrivals: Iterable[int],
    t_acq: float,
    t_ts: float = 100e-12,
    max_discards: int = 10_000,
    horizon: Optional[float] = None,
) -> tuple[list[LinearizedRun], int]:
    """把已记录的首光子数据送入 acquire-or-discard 状态机。

    run 在以下情况结束：遇到空采集；记录值达到 horizon 减一个 TDC 格；
    连续丢弃超过 max_discards 次，此时当前候选成为下一轮的第一个时间戳。
    输入耗尽时最后一轮标记为不完整。递减输入在默认 max_discards 下只形成一轮
    （其余时间戳都被丢弃），max_discards=0 时每个时间戳各成一轮。
    """
    t_acq_ps = int(round(t_acq / PS))
    horizon_ps = int(round((horizon if horizon is not None else t_acq) / PS))
    horizon_ps -= int(round(t_ts / PS))

    runs: list[LinearizedRun] = list()
    consumed = 0
    recorded: list[int] = list()
    stats = RunStats()
    largest: Optional[int] = None
    discards = 0

    def close(complete: bool):
        nonlocal recorded, stats, largest, discards
        stats.recorded = len(recorded)
        runs.append(LinearizedRun(np.asarray(recorded, dtype=np.int64), stats, complete))
        recorded, stats, largest, discards = list(), RunStats(), None, 0

    for t in relative_first_arrivals:
        t = int(t)
        consumed += 1
        if t == EMPTY or t >= t_acq_ps:
            stats.acquisitions_used += 1
            close(True)
            continue

        if largest is not None and t <= largest:
            if discards < max_discards:
                discards += 1
                stats.acquisitions_used += 1
                stats.raw_detections += 1
                continue
            close(True)

        stats.acquisitions_used += 1
        stats.raw_detections += 1
        recorded.append(t)
        largest = t
        discards = 0
        if t >= horizon_ps:
            close(True)

    if stats.acquisitions_used:
        close(False)

    return runs, consumed


def cumulative_sum_linearize(
    relative_first_arrivals: Iterable[int], t_acq: float
) -> list[LinearizedRun]:
    """仅适用于单一均匀（纯背景）光源：相对时间的前缀和即绝对到达时间。"""
    t_acq_ps = int(round(t_acq / PS))
    runs: list[LinearizedRun] = list()
    recorded: list[int] = list()
    acquisitions = 0
    elapsed = 0

    for gap in relative_first_arrivals:
        gap = int(gap)
        acquisitions += 1
        # 越过窗口末端的间隔即终止本轮的空门控
        if gap == EMPTY or elapsed + gap >= t_acq_ps:
            runs.append(
                LinearizedRun(
                    np.asarray(recorded, dtype=np.int64),
                    RunStats(acquisitions, len(recorded), len(recorded)),
                )
            )
            recorded, acquisitions, elapsed = list(), 0, 0
            continue

        elapsed += max(gap, 1)
        recorded.append(elapsed)

    if acquisitions:
        runs.append(
            LinearizedRun(
                np.asarray(recorded, dtype=np.int64),
                RunStats(acquisitions, len(recorded), len(recorded)),
                complete=False,
            )
        )

    return runs


def pooled_times(
    runs: Iterable[LinearizedRun], complete_only: bool = False
) -> NDArray[np.int64]:
    arrays = [run.times for run in runs if run.complete or not complete_only]
    if not arrays:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(arrays)


def reduction_factor(runs: Iterable[LinearizedRun], consumed: int) -> float:
    accepted = sum(run.stats.recorded for run in runs)
    return consumed / accepted if accepted else math.inf


@dataclass(frozen=True)
class RecordedLinearization:
    histogram: Histogram
    windows: int
    reduction_factor: float
    replayed: NDArray[np.int64]


def linearize_histogram(
    h: Histogram,
    t_acq: float,
    rng: np.random.Generator,
    max_discards: int = 10_000,
    horizon: Optional[float] = None,
) -> RecordedLinearization:
    """重放首光子直方图，经 acquire-or-discard 得到线性化直方图。

    windows 为完整 run 的数量，即线性化直方图对应的激光周期数。
    """
    replayed = replay_histogram(h, rng)
    runs, consumed = acquire_or_discard_from_timestamps(
        replayed, t_acq, h.bin_width, max_discards, horizon
    )
    complete = [run for run in runs if run.complete]
    linearized = build_histogram(pooled_times(complete), h.bin_width, span=t_acq)
    return RecordedLinearization(
        linearized, len(complete), reduction_factor(runs, consumed), replayed
    )
