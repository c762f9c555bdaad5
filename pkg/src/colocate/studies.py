"""
Workload characterization studies over task profiles: normality of summed
usage, Gaussian percentile prediction errors, histogram clustering, time
invariance of usage, convergence of inst means and inst/avg variability.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import stats
from .ingest import TaskProfile
from .stats import GaussianParams


def _group_sum(tasks: Sequence[TaskProfile], picks, realizations: int, rng) -> np.ndarray:
    total = np.zeros(realizations)
    for i in picks:
        total += stats.sample_realizations(tasks[i].inst, realizations, rng)
    return total


def _pick(n_pool: int, size: int, rng) -> np.ndarray:
    return rng.choice(n_pool, size=size, replace=size > n_pool)


def percentile_prediction_error(tasks: Sequence[TaskProfile], n_per_group: int, k: float, trials: int,
                                seed: int, realizations: int = 10_000) -> list[float]:
    """
    Relative error (G - P_k) / P_k per trial, where G is the k-th percentile of
    the Gaussian fitted from summed task means and variances and P_k the
    empirical k-th percentile of the group's summed realizations. A zero P_k
    yields NaN.
    """
    if n_per_group < 2:
        raise ValueError("n_per_group must be at least 2")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(trials):
        picks = _pick(len(tasks), n_per_group, rng)
        total = _group_sum(tasks, picks, realizations, rng)
        # Same summation order as the realizations, so constant groups give exactly 0.
        mu = 0.0
        for i in picks:
            mu += tasks[i].mu
        sigma = math.sqrt(math.fsum(tasks[i].sigma ** 2 for i in picks))
        predicted = stats.gaussian_inv_cdf(k / 100, GaussianParams(mu, sigma)) if sigma > 0 else mu
        observed = stats.percentile(total, k)
        errors.append((predicted - observed) / observed if observed != 0 else math.nan)
    return errors


def total_usage_normality_study(tasks: Sequence[TaskProfile], group_sizes: Sequence[int], trials: int,
                                seed: int, realizations: int = 10_000) -> dict[int, float]:
    """Fraction of random task groups whose summed usage the A-D test rejects as normal, per group size."""
    out = {}
    for n in group_sizes:
        if n < 8:
            raise ValueError("group sizes must be at least 8")
        rng = np.random.default_rng([seed, n])
        rejected = 0
        for _ in range(trials):
            total = _group_sum(tasks, _pick(len(tasks), n, rng), realizations, rng)
            if total.min() == total.max():
                rejected += 1
                continue
            rejected += stats.anderson_darling_normality(total)[1]
        out[n] = rejected / trials
    return out


def cluster_profiles(tasks: Sequence[TaskProfile], k: int = 16, seed: int = 0):
    """k-means over the tasks' 100-bin histograms. Returns (result, share of tasks per cluster)."""
    result = stats.kmeans([t.histogram for t in tasks], k, seed)
    shares = np.bincount(result.assignments, minlength=k) / len(tasks)
    return result, shares


def time_invariance(tasks: Sequence[TaskProfile], window: int = 12, seed: int = 0) -> dict:
    """
    Two-window KS test per task: two distinct non-overlapping windows of
    `window` consecutive records are drawn at random and compared. Tasks with
    fewer than two windows are skipped.
    """
    rng = np.random.default_rng(seed)
    tested = rejected = 0
    for t in tasks:
        n_windows = t.duration_records // window
        if n_windows < 2:
            continue
        a, b = rng.choice(n_windows, size=2, replace=False)
        x = t.inst.samples
        _, rej = stats.ks_two_sample(x[a * window:(a + 1) * window], x[b * window:(b + 1) * window])
        tested += 1
        rejected += rej
    return {"tested": tested, "rejected": rejected,
            "rejection_rate": rejected / tested if tested else math.nan}


def mean_convergence(tasks: Sequence[TaskProfile], sample_counts: Sequence[int], seed: int = 0) -> dict[int, np.ndarray]:
    """
    For each k, the relative differences (avg_mean - inst_mean_k) / avg_mean over
    tasks with at least k records, inst_mean_k being the mean of k random inst
    records. Tasks with a zero avg mean are skipped.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for k in sample_counts:
        diffs = []
        for t in tasks:
            if t.duration_records < k:
                continue
            y = stats.mean(t.avg)
            if y == 0:
                continue
            sub = rng.choice(t.inst.samples, size=k, replace=False)
            diffs.append((y - float(sub.mean())) / y)
        out[k] = np.array(diffs)
    return out


def variability(tasks: Sequence[TaskProfile]) -> dict:
    """Per-task inst / avg deviations and least-squares sigma-vs-mean trend lines."""
    mu = np.array([t.mu for t in tasks])
    s_inst = np.array([t.sigma for t in tasks])
    s_avg = np.array([stats.std_dev(t.avg) for t in tasks])
    out = {"mu": mu, "sigma_inst": s_inst, "sigma_avg": s_avg}
    if len(tasks) >= 2 and np.ptp(mu) > 0:
        out["trend_inst"] = tuple(np.polyfit(mu, s_inst, 1))
        out["trend_avg"] = tuple(np.polyfit(mu, s_avg, 1))
    return out
