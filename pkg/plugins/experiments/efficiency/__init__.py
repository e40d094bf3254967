"""acquire-or-discard 与 time-gated 的采集效率和帧率上限。"""

import math
from typing import Sequence

import numpy as np
from loguru import logger

from util.data import write_csv, write_json
from util.detectors import DetectorConfig, Scheme, expected_run_cost, simulate_runs
from util.experiment import ExperimentConfig
from util.pool import Pool, cell_rng
from util.photon_model import LaserPulse, SceneConfig

from .config import defaults

HEADER = (
    "lambda_b",
    "aod_acquisitions",
    "aod_raw_detections",
    "aod_recorded",
    "tg_acquisitions",
    "tg_recorded",
    "ratio",
    "expected_aod_acquisitions",
    "expected_tg_acquisitions",
    "aod_time_s",
    "tg_time_s",
    "aod_meets_fps",
    "tg_meets_fps",
)

COMMAND = "efficiency"


def analytic_cutoff(t_acq: float, target_runs: int, fps: float) -> float:
    """acquire-or-discard 刚好满足帧率时的背景光通量：N·e^{λT}·T = 1/fps。"""
    return math.log(1 / (fps * target_runs * t_acq)) / t_acq


def fps_cutoff(fluxes: Sequence[float], times: Sequence[float], budget: float) -> float:
    """在 (λ, log t) 上线性插值，求采集时间首次超过预算的通量。"""
    fluxes = np.asarray(fluxes, dtype=np.float64)
    log_times = np.log(np.asarray(times, dtype=np.float64))
    over = np.flatnonzero(log_times > math.log(budget))
    if not len(over) or over[0] == 0:
        return math.nan

    i = int(over[0])
    weight = (math.log(budget) - log_times[i - 1]) / (log_times[i] - log_times[i - 1])
    return float(fluxes[i - 1] + weight * (fluxes[i] - fluxes[i - 1]))


def _cell(
    scene: SceneConfig,
    runs: int,
    target_runs: int,
    budget: float,
    seed: int,
    index: int,
) -> tuple:
    rng = cell_rng(seed, index)
    cfg = DetectorConfig()
    discard = simulate_runs(scene, cfg, Scheme.ACQUIRE_OR_DISCARD, runs, rng)
    gated = simulate_runs(scene, cfg, Scheme.TIME_GATED, runs, rng)

    aod_acquisitions = float(discard.acquisitions.mean())
    tg_acquisitions = float(gated.acquisitions.mean())
    # 一个激光周期等于一个采集窗口
    aod_time = target_runs * aod_acquisitions * scene.t_acq
    tg_time = target_runs * tg_acquisitions * scene.t_acq
    return (
        scene.lambda_b,
        aod_acquisitions,
        float(discard.raw_detections.mean()),
        float(discard.recorded.mean()),
        tg_acquisitions,
        float(gated.recorded.mean()),
        float(discard.raw_detections.mean()) / tg_acquisitions,
        expected_run_cost(scene, Scheme.ACQUIRE_OR_DISCARD),
        expected_run_cost(scene, Scheme.TIME_GATED),
        aod_time,
        tg_time,
        aod_time <= budget,
        tg_time <= budget,
    )


async def run(experiment: ExperimentConfig):
    t_acq = experiment.number("t_acq")
    t_w = experiment.number("t_w")
    runs = experiment.count("runs")
    target_runs = experiment.count("target_runs")
    fps = experiment.number("fps")
    budget = 1 / fps
    fluxes = experiment.grid("lambda_b")
    experiment.notes.append(
        "acquisition time only, laser cycle period equal to the acquisition window"
    )

    cells = [
        (
            SceneConfig(lambda_b, LaserPulse(t_w, 0.0), 0.0, t_acq),
            runs,
            target_runs,
            budget,
            experiment.master_seed,
            index,
        )
        for index, lambda_b in enumerate(fluxes)
    ]
    logger.info(f"[efficiency] {len(cells)} fluxes, {runs} runs per scheme")
    rows = await Pool(experiment.workers).map(_cell, cells)
    for row in rows:
        logger.debug(
            f"[efficiency] λ_B={row[0]:.3g} AoD {row[1]:.4g} TG {row[4]:.4g} acquisitions"
        )

    cutoff = fps_cutoff(fluxes, [row[9] for row in rows], budget)
    analytic = analytic_cutoff(t_acq, target_runs, fps)
    top = max(rows, key=lambda row: row[0])
    summary = {
        "aod_fps_cutoff": cutoff,
        "aod_fps_cutoff_analytic": analytic,
        "ratio_at_max_flux": top[6],
        "max_flux": top[0],
    }
    await write_csv(experiment.output / "efficiency.csv", HEADER, rows)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()
    logger.info(
        f"[efficiency] {fps:g} FPS cutoff {cutoff:.3e} (analytic {analytic:.3e})"
    )

    experiment.verify(
        {
            "ratio at the highest flux above 1e3": top[6] >= 1e3,
            "cutoff within a factor of two": analytic / 2 <= cutoff <= analytic * 2,
        }
    )
    return summary
