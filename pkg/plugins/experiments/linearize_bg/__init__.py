"""仅背景与背景加激光两种记录数据上的背景光通量恢复。"""

import argparse
import math
from typing import Optional

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from util.data import (
    read_timestamps,
    write_csv,
    write_histogram,
    write_json,
    write_timestamps,
)
from util.detectors import (
    Histogram,
    LinearizedRun,
    build_histogram,
    cumulative_sum_linearize,
    first_photon_dataset,
    linearize_histogram,
    pooled_times,
)
from util.estimation import exponential_fit, rate_from_linearized, recover_background
from util.exceptions import NoSignalException
from util.experiment import ExperimentConfig
from util.pool import Pool, cell_rng
from util.photon_model import (
    LaserPulse,
    SceneConfig,
    detection_probability,
    five_percent_rule_flux,
    tof_from_distance,
)

from .config import defaults

COMMAND = "linearize-bg"

HEADER = (
    "lambda_b",
    "acquisitions",
    "windows",
    "rate_linearized",
    "rate_fit",
    "deviation_vs_truth",
    "deviation_vs_fit",
    "subset_min_deviation",
    "subset_max_deviation",
)

LASER_HEADER = (
    "lambda_b",
    "acquisitions",
    "windows",
    "reduction_factor",
    "rate_fit",
    "rate_before_linearized",
    "rate_after_linearized",
    "deviation_before",
    "deviation_after",
    "recovered",
)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--input", help="仅背景的相对首光子时间戳文件，替代模拟数据")
    parser.add_argument("--dump", help="写出第一个背景光通量的模拟首光子时间戳")


def subset_rates(runs: list[LinearizedRun], subsets: int, t_acq: float) -> np.ndarray:
    """按消耗的采集数把完整 run 分成 subsets 段，分别估计背景光通量。"""
    complete = [run for run in runs if run.complete]
    if not complete:
        raise NoSignalException("no complete run to split into subsets")
    consumed = np.cumsum([run.stats.acquisitions_used for run in complete])
    recorded = np.asarray([run.stats.recorded for run in complete], dtype=np.float64)
    edges = np.linspace(0, consumed[-1], subsets + 1)
    # 每个 run 归入其结束位置所在的分段
    segment = np.clip(np.searchsorted(edges, consumed, side="left") - 1, 0, subsets - 1)
    counts = np.bincount(segment, weights=recorded, minlength=subsets)
    windows = np.bincount(segment, minlength=subsets)
    return counts / np.maximum(windows, 1) / t_acq


def analyze(
    data: NDArray[np.int64],
    t_acq: float,
    subsets: int,
    bin_width: float,
    truth: Optional[float] = None,
) -> tuple[tuple, Histogram]:
    """前缀和线性化一段仅背景的首光子记录；truth 缺省时以指数拟合为参照。"""
    original = build_histogram(data, bin_width, span=t_acq)
    fitted = exponential_fit(original, (0.0, t_acq), censored=True).rate
    truth = truth or fitted

    runs = cumulative_sum_linearize(data, t_acq)
    complete = [run for run in runs if run.complete]
    linearized = build_histogram(pooled_times(complete), bin_width, span=t_acq)
    rate = rate_from_linearized(linearized, (0.0, t_acq), len(complete))
    deviations = subset_rates(runs, subsets, t_acq) / truth - 1

    row = (
        truth,
        len(data),
        len(complete),
        rate,
        fitted,
        rate / truth - 1,
        rate / fitted - 1,
        float(deviations.min()),
        float(deviations.max()),
    )
    return row, linearized


def simulate(
    scene: SceneConfig, timestamps: int, seed: int, index: int
) -> NDArray[np.int64]:
    acquisitions = round(timestamps / detection_probability(scene.total_photons))
    return first_photon_dataset(scene, acquisitions, cell_rng(seed, index))


def _cell(
    scene: SceneConfig,
    timestamps: int,
    subsets: int,
    bin_width: float,
    seed: int,
    index: int,
):
    data = simulate(scene, timestamps, seed, index)
    row, linearized = analyze(data, scene.t_acq, subsets, bin_width, scene.lambda_b)
    return row, linearized, data


def _laser_cell(
    scene: SceneConfig,
    timestamps: int,
    bin_width: float,
    max_discards: int,
    horizon: float,
    tolerance: float,
    seed: int,
    index: int,
) -> tuple:
    data = simulate(scene, timestamps, seed, index)
    original = build_histogram(data, bin_width, span=scene.t_acq)
    result = linearize_histogram(
        original, scene.t_acq, cell_rng(seed, index + 1), max_discards, horizon
    )
    recovery = recover_background(
        scene, original, result.histogram, result.windows, horizon
    )
    return (
        scene.lambda_b,
        len(data),
        result.windows,
        result.reduction_factor,
        recovery.rate_fit,
        recovery.rate_before,
        recovery.rate_after,
        recovery.deviation_before,
        recovery.deviation_after,
        recovery.within(tolerance),
    )


async def _background_only(experiment: ExperimentConfig, pool: Pool) -> list[tuple]:
    t_acq = experiment.number("t_acq")
    subsets = experiment.count("subsets")
    bin_width = experiment.number("bin_width")
    source = experiment.path("input")
    if source is not None:
        data = await read_timestamps(source)
        logger.info(f"[linearize-bg] {len(data)} recorded acquisitions from {source}")
        row, linearized = analyze(data, t_acq, subsets, bin_width)
        await write_histogram(experiment.output / "linearized_input.csv", linearized)
        return [row]

    timestamps = experiment.count("timestamps")
    fluxes = experiment.grid("lambda_b")
    cells = [
        (
            SceneConfig(lambda_b, LaserPulse(t_acq, 0.0), 0.0, t_acq),
            timestamps,
            subsets,
            bin_width,
            experiment.master_seed,
            index,
        )
        for index, lambda_b in enumerate(fluxes)
    ]
    logger.info(f"[linearize-bg] {len(cells)} fluxes, {timestamps} timestamps each")
    results = await pool.map(_cell, cells)

    for index, (row, linearized, _) in enumerate(results):
        logger.debug(
            f"[linearize-bg] λ_B={row[0]:.3g} rate={row[3]:.4g} "
            f"deviation={row[5]:+.3%}"
        )
        await write_histogram(experiment.output / f"linearized_{index}.csv", linearized)
    dump = experiment.get("dump")
    if dump is not None:
        await write_timestamps(dump, results[0][2])
    return [row for row, _, _ in results]


async def _with_laser(experiment: ExperimentConfig, pool: Pool) -> list[tuple]:
    laser = experiment.get("laser")
    t_acq = experiment.number("t_acq")
    pulse = LaserPulse(float(laser["t_w"]), float(laser["mean_photons"]))
    tof = tof_from_distance(float(laser["distance"]))
    # 每格占用两个随机流：采集与重放
    offset = len(experiment.grid("lambda_b"))
    cells = [
        (
            SceneConfig(float(lambda_b), pulse, tof, t_acq),
            int(laser["timestamps"]),
            experiment.number("bin_width"),
            int(laser["max_discards"]),
            float(laser["horizon"]),
            float(laser["tolerance"]),
            experiment.master_seed,
            offset + 2 * index,
        )
        for index, lambda_b in enumerate(laser["lambda_b"])
    ]
    rows = await pool.map(_laser_cell, cells)
    for row in rows:
        logger.debug(
            f"[linearize-bg] laser λ_B={row[0]:.3g} before {row[7]:+.2%} "
            f"after {row[8]:+.2%} reduction {row[3]:.1f}"
        )
    return rows


async def run(experiment: ExperimentConfig):
    t_acq = experiment.number("t_acq")
    tolerance = experiment.number("tolerance")
    pool = Pool(experiment.workers)

    rows = await _background_only(experiment, pool)
    laser_rows = await _with_laser(experiment, pool)

    top = max(row[0] for row in rows)
    summary = {
        "max_deviation_vs_truth": max(abs(row[5]) for row in rows),
        "max_deviation_vs_fit": max(abs(row[6]) for row in rows),
        "detections_per_window_at_max_flux": top * t_acq,
        "times_five_percent_rule": top / five_percent_rule_flux(t_acq),
        "laser": {
            "max_deviation_before": max(abs(row[7]) for row in laser_rows),
            "max_deviation_after": max(abs(row[8]) for row in laser_rows),
            "reduction_factor_min": min(row[3] for row in laser_rows),
            "reduction_factor_max": max(row[3] for row in laser_rows),
        }
        if laser_rows
        else None,
    }
    await write_csv(experiment.output / "linearize_bg.csv", HEADER, rows)
    await write_csv(experiment.output / "linearize_bg_laser.csv", LASER_HEADER, laser_rows)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()
    logger.info(
        f"[linearize-bg] worst deviation {summary['max_deviation_vs_truth']:.3%}"
    )

    laser_tolerance = float(experiment.get("laser")["tolerance"])
    if experiment.path("input") is None:
        checks = {
            f"rate recovered within {tolerance:.1%}": (
                summary["max_deviation_vs_truth"] <= tolerance
            ),
        }
    else:
        # 记录数据没有真值，只能与拟合比较
        checks = {
            f"rate agrees with the fit within {tolerance:.1%}": (
                summary["max_deviation_vs_fit"] <= tolerance
            ),
        }
    if laser_rows:
        checks[f"background around the laser peak within {laser_tolerance:.0%}"] = all(
            row[9] for row in laser_rows
        )
    experiment.verify(checks)
    return summary
