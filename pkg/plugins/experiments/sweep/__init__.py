"""背景与信号光通量网格上的 ToF 估计。"""

import math
from typing import Optional

from loguru import logger

from util.data import write_csv, write_json
from util.detectors import Scheme
from util.estimation import CalibrationData, ToFEstimate, measure_tof, predicted_tof_std
from util.exceptions import NoSignalException
from util.experiment import ExperimentConfig
from util.pool import Pool, cell_rng
from util.photon_model import PS, SceneConfig

from .config import defaults

COMMAND = "sweep"

HEADER = (
    "lambda_b",
    "lambda_s",
    "tof_hat_ps",
    "rel_error",
    "alpha_hat",
    "valid",
    "predicted_std_ps",
    "expected_success",
    "success",
)

CRITERION = (
    "cells with 3*predicted_std <= tolerance*tof must succeed; "
    "cells with predicted_std <= tolerance*tof must give a valid estimate "
    "within z_limit predicted standard deviations; "
    "NaN is only allowed where predicted_std > tolerance*tof"
)


def _cell(
    scene: SceneConfig,
    scheme: Scheme,
    windows: int,
    counter_bits: int,
    seed: int,
    index: int,
) -> tuple[Optional[ToFEstimate], float]:
    try:
        predicted = predicted_tof_std(scene, windows)
    except NoSignalException:
        # 没有激光光子的格直接记为 NaN
        return None, math.inf
    try:
        estimate = measure_tof(
            scene,
            CalibrationData.from_pulse(scene.pulse),
            scheme,
            windows,
            cell_rng(seed, index),
            counter_bits=counter_bits,
        )
    except NoSignalException:
        estimate = None
    return estimate, predicted


def judge(
    scene: SceneConfig,
    estimate: Optional[ToFEstimate],
    predicted: float,
    tolerance: float,
    z_limit: float,
) -> dict:
    """按预测标准差判定一格：该成功的是否成功，可分辨的是否落在 z_limit 内。"""
    bound = tolerance * scene.tof
    expected = 3 * predicted <= bound
    resolvable = predicted <= bound
    if estimate is None or not math.isfinite(estimate.tof):
        return {
            "expected": expected,
            "success": False,
            "passed": not resolvable,
            "rel_error": math.nan,
        }

    rel_error = (estimate.tof - scene.tof) / scene.tof
    success = estimate.valid and abs(rel_error) <= tolerance
    passed = True
    if expected:
        passed = success
    elif resolvable:
        passed = estimate.valid and abs(estimate.tof - scene.tof) <= z_limit * predicted
    return {
        "expected": expected,
        "success": success,
        "passed": passed,
        "rel_error": rel_error,
    }


def _row(
    scene: SceneConfig,
    estimate: Optional[ToFEstimate],
    predicted: float,
    verdict: dict,
) -> tuple:
    lambda_s = scene.pulse.mean_photons / scene.pulse.t_w
    nan = math.nan
    return (
        scene.lambda_b,
        lambda_s,
        estimate.tof / PS if estimate else nan,
        verdict["rel_error"],
        estimate.alpha_hat if estimate else nan,
        estimate.valid if estimate else False,
        predicted / PS,
        verdict["expected"],
        verdict["success"],
    )


async def run(experiment: ExperimentConfig):
    tof = experiment.number("tof")
    t_w = experiment.number("t_w")
    t_acq = experiment.number("t_acq")
    windows = experiment.count("windows")
    counter_bits = experiment.count("counter_bits")
    tolerance = experiment.number("tolerance")
    z_limit = experiment.number("z_limit")
    scheme = experiment.scheme

    scenes = [
        SceneConfig.from_rates(lambda_b, lambda_s, tof, t_w, t_acq)
        for lambda_b in experiment.grid("lambda_b")
        for lambda_s in experiment.grid("lambda_s")
    ]
    logger.info(
        f"[sweep] {len(scenes)} cells, {windows} windows per phase, {scheme.value}"
    )

    results = await Pool(experiment.workers).map(
        _cell,
        [
            (scene, scheme, windows, counter_bits, experiment.master_seed, index)
            for index, scene in enumerate(scenes)
        ],
    )

    rows, records, failures = list(), list(), list()
    for scene, (estimate, predicted) in zip(scenes, results):
        verdict = judge(scene, estimate, predicted, tolerance, z_limit)
        row = _row(scene, estimate, predicted, verdict)
        logger.debug(
            f"[sweep] λ_B={row[0]:.3g} λ_S={row[1]:.3g} "
            f"tof={row[2]:.1f}ps σ={row[6]:.1f}ps passed={verdict['passed']}"
        )
        rows.append(row)
        records.append(
            {
                "lambda_b": row[0],
                "lambda_s": row[1],
                "predicted_std_ps": row[6],
                "estimate": estimate.to_record() if estimate else None,
            }
        )
        if not verdict["passed"]:
            failures.append({"lambda_b": row[0], "lambda_s": row[1]})

    expected = [row for row in rows if row[7]]
    succeeded = sum(1 for row in rows if row[8])
    summary = {
        "cells": len(rows),
        "succeeded": succeeded,
        "expected": len(expected),
        "expected_failures": sum(1 for row in expected if not row[8]),
        "resolvable": sum(
            1 for row in rows if row[6] <= tolerance * tof / PS
        ),
        "failures": failures,
        "criterion": CRITERION,
    }
    await write_csv(experiment.output / "sweep.csv", HEADER, rows)
    await write_json(experiment.output / "estimates.json", records)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()
    logger.info(
        f"[sweep] {succeeded}/{len(rows)} cells within {tolerance:.0%}, "
        f"{len(failures)} failed the predicted-precision gate"
    )

    experiment.verify({"cells agree with the predicted precision": not failures})
    return summary
