"""直方图无关方案与传统直方图的逐像素存储比较。"""

import math
from dataclasses import dataclass
from typing import Iterable

from loguru import logger

from util.data import write_csv, write_json
from util.exceptions import ConfigException
from util.experiment import ExperimentConfig
from util.photon_model import tof_from_distance

from .config import defaults

COMMAND = "memory"

HEADER = (
    "tdc_bits",
    "ours_bits",
    "standard_bits",
    "ratio",
    "ours_doubling_delta",
    "standard_doubling_delta",
)

SENSOR_HEADER = ("sensor", "group", "tdc_bits", "histogram_depth_bits", "ratio")


@dataclass(frozen=True)
class MemorySpec:
    tdc_bits: int
    histogram_depth_bits: int = 8
    counter_bits: int = 16

    def __post_init__(self):
        if min(self.tdc_bits, self.histogram_depth_bits, self.counter_bits) < 1:
            raise ConfigException(f"memory widths must be positive: {self}")

    @property
    def ours_bits(self) -> int:
        """两个计数器加一个 3 倍 TDC 位宽的累加器。"""
        return 2 * self.counter_bits + 3 * self.tdc_bits

    @property
    def standard_bits(self) -> int:
        return 2**self.tdc_bits * self.histogram_depth_bits

    @property
    def ratio(self) -> float:
        return self.standard_bits / self.ours_bits

    @property
    def ours_doubling_delta(self) -> float:
        """TDC 多一位（量程翻倍）时存储的相对增量。"""
        return 3 / self.ours_bits

    @property
    def standard_doubling_delta(self) -> float:
        return 1.0


def ratio_summary(specs: Iterable[MemorySpec]) -> dict:
    ratios = [spec.ratio for spec in specs]
    if not ratios:
        raise ConfigException("no sensors to compare")
    return {
        "min_ratio": min(ratios),
        "mean_ratio": sum(ratios) / len(ratios),
        "max_ratio": max(ratios),
    }


def array_histogram_bytes(
    pixels: int, range_m: float, bin_width: float, depth_bits: int
) -> int:
    bins = math.ceil(round(tof_from_distance(range_m) / bin_width, 6))
    return pixels * bins * depth_bits // 8


def _sensors(experiment: ExperimentConfig, depth: int, counters: int) -> dict[str, list]:
    groups = {
        "standard": [
            (f"standard_{i}", MemorySpec(int(bits), depth, counters))
            for i, bits in enumerate(experiment.get("standard", list()))
        ]
    }
    on_chip = list()
    for i, sensor in enumerate(experiment.get("on_chip", list())):
        try:
            spec = MemorySpec(
                int(sensor["tdc_bits"]),
                int(sensor["histogram_depth_bits"]),
                counters,
            )
        except KeyError as ex:
            raise ConfigException(f"on-chip sensor {i} lacks {ex}") from ex
        on_chip.append((sensor.get("name", f"on_chip_{i}"), spec))
    groups["on_chip"] = on_chip
    return groups


async def run(experiment: ExperimentConfig):
    depth = experiment.count("histogram_depth_bits")
    counters = experiment.count("counter_bits")
    specs = [MemorySpec(int(bits), depth, counters) for bits in experiment.grid("tdc_bits")]
    rows = [
        (
            spec.tdc_bits,
            spec.ours_bits,
            spec.standard_bits,
            spec.ratio,
            spec.ours_doubling_delta,
            spec.standard_doubling_delta,
        )
        for spec in specs
    ]
    array = experiment.get("array")
    array_bytes = array_histogram_bytes(
        int(array["pixels"]),
        float(array["range_m"]),
        float(array["bin_width"]),
        int(array["depth_bits"]),
    )
    summary = {**ratio_summary(specs), "array_histogram_bytes": array_bytes}

    sensor_rows = list()
    for group, sensors in _sensors(experiment, depth, counters).items():
        for name, spec in sensors:
            logger.debug(
                f"[memory] {group} {name}: {spec.tdc_bits} bits, ratio {spec.ratio:.1f}"
            )
            sensor_rows.append(
                (name, group, spec.tdc_bits, spec.histogram_depth_bits, spec.ratio)
            )
        if sensors:
            summary[group] = ratio_summary(spec for _, spec in sensors)

    await write_csv(experiment.output / "memory.csv", HEADER, rows)
    await write_csv(experiment.output / "sensors.csv", SENSOR_HEADER, sensor_rows)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()
    logger.info(
        f"[memory] ratio {summary['min_ratio']:.1f}..{summary['max_ratio']:.1f}, "
        f"array histogram {array_bytes / 1e6:.1f} MB"
    )

    by_bits = {spec.tdc_bits: spec for spec in specs}
    checks = dict()
    if 16 in by_bits:
        checks["ratio at 16 bits"] = math.isclose(by_bits[16].ratio, 6553.6)
    if 9 in by_bits:
        checks["ratio at 9 bits"] = abs(by_bits[9].ratio - 69.4) <= 0.05
    if 15 in by_bits:
        checks["range doubling at 15 bits"] = (
            round(by_bits[15].ours_doubling_delta, 3) == 0.039
        )
    if experiment.get("standard") == [9, 12, 14, 14, 16] and depth == 8 and counters == 16:
        standard = summary["standard"]
        checks["standard sensors min/avg/max"] = (
            abs(standard["min_ratio"] - 69.4) <= 0.05
            and abs(standard["mean_ratio"] - 2129.48) <= 0.01
            and math.isclose(standard["max_ratio"], 6553.6)
        )
    experiment.verify(checks)
    return summary
