"""高探测率下首光子直方图的堆积失真与线性化后的恢复。"""

import argparse
from typing import Optional

import numpy as np
from loguru import logger

from util.data import read_histogram, write_histogram, write_json, write_timestamps
from util.detectors import (
    Histogram,
    RecordedLinearization,
    build_histogram,
    first_photon_dataset,
    linearize_histogram,
    linearized_bin_probabilities,
)
from util.estimation import recover_background
from util.experiment import ExperimentConfig
from util.pool import Pool, cell_rng
from util.photon_model import (
    LaserPulse,
    PulseShape,
    SceneConfig,
    mean_photons_for_detection_rate,
)
from util.stats import binned_ks, chi_square_gof

from .config import defaults

COMMAND = "pileup"

SCENES = ("high_rate", "low_rate")


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--input", help="高探测率场景的首光子直方图 CSV，替代模拟数据")
    parser.add_argument("--dump", help="写出高探测率场景重放后的首光子时间戳")


def shape_tests(h: Histogram, scene: SceneConfig) -> dict:
    """与线性化响应的逐格期望比较：全窗口 binned KS 与脉冲区域卡方。"""
    edges = h.edges
    probabilities = linearized_bin_probabilities(scene, edges)
    cumulative = np.concatenate(([0.0], np.cumsum(probabilities)))
    ks, ks_p = binned_ks(h.counts, edges, lambda x: np.interp(x, edges, cumulative))

    pulse = h.region(scene.tof, scene.signal_end)
    chi2, chi2_p, dof = chi_square_gof(h.counts[pulse], probabilities[pulse])
    return {"ks": ks, "ks_p": ks_p, "chi2": chi2, "chi2_p": chi2_p, "chi2_dof": dof}


def linearize_recorded(
    scene: SceneConfig,
    original: Histogram,
    max_discards: int,
    horizon: Optional[float],
    tolerance: float,
    rng: np.random.Generator,
) -> tuple[RecordedLinearization, dict]:
    """首光子直方图 → 重放 → acquire-or-discard → 线性化直方图。"""
    result = linearize_histogram(original, scene.t_acq, rng, max_discards, horizon)
    linearized = result.histogram
    before = original.counts[original.region(0.0, scene.tof)]
    after = original.counts[original.region(scene.signal_end, scene.t_acq)]
    recovery = recover_background(scene, original, linearized, result.windows, horizon)

    metrics = {
        "lambda_b": scene.lambda_b,
        "mean_photons": scene.pulse.mean_photons,
        "acquisitions": original.acquisitions,
        "windows": result.windows,
        "reduction_factor": result.reduction_factor,
        "original": shape_tests(original, scene),
        "linearized": shape_tests(linearized, scene),
        "background": recovery.to_record(),
        "background_recovered": recovery.within(tolerance),
        "original_mean_before": float(before.mean()),
        "original_mean_after": float(after.mean()),
    }
    return result, metrics


def _simulated(
    scene: SceneConfig, acquisitions: int, bin_width: float, seed: int, index: int
) -> Histogram:
    data = first_photon_dataset(scene, acquisitions, cell_rng(seed, index))
    return build_histogram(data, bin_width, span=scene.t_acq)


def _scene(experiment: ExperimentConfig, lambda_b: float, rate: float) -> SceneConfig:
    pulse = LaserPulse(
        experiment.number("t_w"),
        mean_photons_for_detection_rate(rate),
        PulseShape(experiment.get("shape")),
    )
    return SceneConfig(
        lambda_b, pulse, experiment.number("tof"), experiment.number("t_acq")
    )


def _passes(metrics: dict) -> bool:
    return metrics["linearized"]["chi2_p"] > 0.01 and metrics["linearized"]["ks_p"] > 0.01


async def run(experiment: ExperimentConfig):
    low = experiment.get("low_rate")
    scenes = [
        _scene(
            experiment,
            experiment.number("lambda_b"),
            experiment.number("detection_rate"),
        ),
        _scene(experiment, float(low["lambda_b"]), float(low["detection_rate"])),
    ]
    acquisitions = experiment.count("acquisitions")
    bin_width = experiment.number("bin_width")
    max_discards = experiment.count("max_discards")
    tolerance = experiment.number("tolerance")
    horizon = experiment.get("horizon")
    horizon = float(horizon) if horizon is not None else None
    seed = experiment.master_seed
    pool = Pool(experiment.workers)

    originals = await pool.map(
        _simulated,
        [
            (scene, acquisitions, bin_width, seed, index)
            for index, scene in enumerate(scenes)
        ],
    )
    source = experiment.path("input")
    if source is not None:
        originals[0] = await read_histogram(source, bin_width)
        logger.info(f"[pileup] high-rate histogram read from {source}")
    logger.info(f"[pileup] {acquisitions} acquisitions per simulated scene")

    # 重放与线性化使用独立的随机流
    results = await pool.map(
        linearize_recorded,
        [
            (
                scene,
                original,
                max_discards,
                horizon,
                tolerance,
                cell_rng(seed, len(scenes) + index),
            )
            for index, (scene, original) in enumerate(zip(scenes, originals))
        ],
    )

    summary = dict()
    output = experiment.output
    for name, original, (result, metrics) in zip(SCENES, originals, results):
        logger.debug(
            f"[pileup] {name}: chi2_p original {metrics['original']['chi2_p']:.3g}, "
            f"linearized {metrics['linearized']['chi2_p']:.3g}, "
            f"reduction {metrics['reduction_factor']:.2f}"
        )
        await write_histogram(output / f"original_{name}.csv", original)
        await write_histogram(output / f"linearized_{name}.csv", result.histogram)
        summary[name] = metrics
    dump = experiment.get("dump")
    if dump is not None:
        await write_timestamps(dump, results[0][0].replayed)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()

    high, low = summary["high_rate"], summary["low_rate"]
    logger.info(
        f"[pileup] chi-square p: linearized {high['linearized']['chi2_p']:.3g}, "
        f"original {high['original']['chi2_p']:.3g}"
    )

    experiment.verify(
        {
            "linearized pulse shape passes chi-square": high["linearized"]["chi2_p"] > 0.01,
            "linearized histogram passes binned KS": high["linearized"]["ks_p"] > 0.01,
            "first-photon histogram fails chi-square": high["original"]["chi2_p"] < 1e-6,
            "first-photon histogram shows pile-up": (
                high["original_mean_after"] < high["original_mean_before"]
            ),
            f"background recovered within {tolerance:.0%}": high["background_recovered"],
            "low-rate linearized histogram passes": _passes(low),
            "low-rate first-photon histogram passes": (
                low["original"]["chi2_p"] > 0.01 and low["original"]["ks_p"] > 0.01
            ),
        }
    )
    return summary
