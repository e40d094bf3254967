from typing import Callable

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from .exceptions import HistogramRangeException

Cdf = Callable[[np.ndarray], np.ndarray]


def ks_test(samples: ArrayLike, cdf: Cdf) -> tuple[float, float]:
    result = stats.kstest(np.asarray(samples, dtype=np.float64), cdf)
    return float(result.statistic), float(result.pvalue)


def binned_ks(counts: ArrayLike, edges: ArrayLike, cdf: Cdf) -> tuple[float, float]:
    """按格比较经验分布与理论分布，适用于已被量化到时间格的样本。

    理论分布在 edges 的覆盖范围内重新归一化。
    """
    counts = np.asarray(counts, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if len(edges) != len(counts) + 1:
        raise HistogramRangeException("edges must have one more entry than counts")
    n = counts.sum()
    if n <= 0:
        raise HistogramRangeException("no samples to compare")

    model = np.asarray(cdf(edges), dtype=np.float64)
    model = (model[1:] - model[0]) / (model[-1] - model[0])
    empirical = np.cumsum(counts) / n
    statistic = float(np.max(np.abs(empirical - model)))
    return statistic, float(stats.kstwo.sf(statistic, int(n)))


def chi_square_gof(
    counts: ArrayLike, probabilities: ArrayLike, min_expected: float = 5.0
) -> tuple[float, float, int]:
    """皮尔逊卡方拟合优度检验，期望计数不足 min_expected 的相邻格合并。

    返回 (统计量, p 值, 自由度)。
    """
    counts = np.asarray(counts, dtype=np.float64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    n = counts.sum()
    expected = n * probabilities / probabilities.sum()

    observed_groups: list[float] = list()
    expected_groups: list[float] = list()
    observed_acc = expected_acc = 0.0
    for observed, wanted in zip(counts, expected):
        observed_acc += observed
        expected_acc += wanted
        if expected_acc >= min_expected:
            observed_groups.append(observed_acc)
            expected_groups.append(expected_acc)
            observed_acc = expected_acc = 0.0
    if expected_groups:
        observed_groups[-1] += observed_acc
        expected_groups[-1] += expected_acc
    if len(expected_groups) < 2:
        raise HistogramRangeException("too few populated bins for a chi-square test")

    observed = np.asarray(observed_groups)
    wanted = np.asarray(expected_groups)
    statistic = float(np.sum((observed - wanted) ** 2 / wanted))
    dof = len(wanted) - 1
    return statistic, float(stats.chi2.sf(statistic, dof)), dof


def bin_probabilities(cdf: Cdf, edges: ArrayLike) -> np.ndarray:
    return np.diff(np.asarray(cdf(np.asarray(edges, dtype=np.float64))))


def exponential_gap_ks(gaps: ArrayLike, rate: float) -> tuple[float, float]:
    """相邻到达间隔与 Exp(rate) 的 KS 检验。"""
    return ks_test(gaps, stats.expon(scale=1 / rate).cdf)
