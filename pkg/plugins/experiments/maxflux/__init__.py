"""给定多光子概率上限时的最大可承受光通量。"""

import math

from loguru import logger

from util.data import write_csv, write_json
from util.experiment import ExperimentConfig
from util.photon_model import (
    five_percent_rule_flux,
    max_sustainable_flux,
    multi_photon_probability,
)

from .config import defaults

HEADER = ("threshold", "max_flux", "multi_photon_probability", "ratio_vs_five_percent")

COMMAND = "maxflux"


async def run(experiment: ExperimentConfig):
    t_ts = experiment.number("t_ts")
    threshold = experiment.number("threshold")
    conventional = five_percent_rule_flux(experiment.number("t_acq"))

    thresholds = sorted(set(experiment.grid("thresholds")) | {threshold})
    fluxes = [max_sustainable_flux(t_ts, p) for p in thresholds]
    rows = [
        (p, flux, multi_photon_probability(flux, t_ts), flux / conventional)
        for p, flux in zip(thresholds, fluxes)
    ]
    for p, value in zip(thresholds, fluxes):
        logger.debug(f"[maxflux] threshold {p:g}: {value:.4e} ph/s")
    flux = fluxes[thresholds.index(threshold)]
    summary = {
        "t_ts": t_ts,
        "threshold": threshold,
        "max_flux": flux,
        "five_percent_rule_flux": conventional,
        "ratio": flux / conventional,
    }
    await write_csv(experiment.output / "maxflux.csv", HEADER, rows)
    await write_json(experiment.output / "summary.json", summary)
    await experiment.write_manifest()
    logger.info(f"[maxflux] {flux:.4e} ph/s, {flux / conventional:.0f}x the 5% rule")

    checks = {"monotone in threshold": all(a < b for a, b in zip(fluxes, fluxes[1:]))}
    if math.isclose(t_ts, 100e-12) and math.isclose(threshold, 0.01):
        checks["100 ps at 1% near 1.48e9"] = abs(flux / 1.48e9 - 1) <= 0.01
        checks["about 3000x the 5% rule"] = 2700 <= flux / conventional <= 3300
    experiment.verify(checks)
    return summary
