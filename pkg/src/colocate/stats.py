"""
Empirical-distribution statistics, Gaussian distribution functions,
normality / equality tests and histogram clustering.

Everything here is a pure function; random generators are always passed in
by the caller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_ndtr

HISTOGRAM_BINS = 100

# Stephens (1974) 5% critical value, normality with estimated mean and variance.
AD_CRITICAL_5PCT = 0.752
# Asymptotic two-sample Kolmogorov-Smirnov coefficient c(0.05).
KS_COEFF_5PCT = 1.358


class StatsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Ordered CPU-usage samples of one task (normalized units)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float).reshape(-1)
        if arr.size == 0:
            raise StatsError("empty sample")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size


class GaussianParams(NamedTuple):
    mu: float
    sigma: float


class KMeansResult(NamedTuple):
    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: list


def _values(d) -> np.ndarray:
    if isinstance(d, EmpiricalDistribution):
        return d.samples
    arr = np.asarray(d, dtype=float).reshape(-1)
    if arr.size == 0:
        raise StatsError("empty sample")
    return arr


def mean(d) -> float:
    x = _values(d)
    # Exact for constant samples, matching the exact zero deviation below.
    if x.min() == x.max():
        return float(x[0])
    return float(np.mean(x))


def std_dev(d) -> float:
    """Population standard deviation (n in the denominator)."""
    x = _values(d)
    if x.min() == x.max():
        return 0.0
    return float(np.std(x))


def percentile(d, k: float) -> float:
    """Nearest-rank percentile: the ceil(k/100 * n)-th smallest sample (1-based)."""
    if not 0 < k <= 100:
        raise StatsError(f"percentile rank must be in (0, 100], got {k}")
    x = _values(d)
    n = x.size
    # round() absorbs representation error such as 95 * 100 / 100 != 95.
    rank = max(1, math.ceil(round(k * n / 100.0, 9)))
    if rank >= n:
        return float(np.max(x))
    return float(np.partition(x, rank - 1)[rank - 1])


def histogram(d) -> np.ndarray:
    """100-bin histogram of shares; bin k covers [k/100, (k+1)/100), values >= 1 go to bin 99."""
    x = _values(d)
    k = np.floor(x * HISTOGRAM_BINS).astype(np.int64)
    # x*100 may round below an exact bin edge (0.29*100 = 28.999...).
    k += x >= (k + 1) / HISTOGRAM_BINS
    k = np.clip(k, 0, HISTOGRAM_BINS - 1)
    counts = np.bincount(k, minlength=HISTOGRAM_BINS).astype(float)
    return counts / x.size


def gaussian_cdf(x, g: GaussianParams):
    """Normal CDF via the complementary error function. sigma == 0 is a unit step at mu."""
    mu, sigma = g
    if sigma < 0:
        raise StatsError("sigma must be non-negative")
    if sigma == 0:
        if np.ndim(x) == 0:
            return 1.0 if x >= mu else 0.0
        return (np.asarray(x) >= mu).astype(float)
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-(x - mu) / (sigma * math.sqrt(2.0)))
    from scipy.special import erfc

    return 0.5 * erfc(-(np.asarray(x, dtype=float) - mu) / (sigma * math.sqrt(2.0)))


def gaussian_sf(x, mu, sigma) -> np.ndarray:
    """
    Upper tail P[N(mu, sigma^2) > x], elementwise over arrays of mu and sigma.

    Computed directly with erfc to keep precision far in the tail; a zero sigma
    gives the step 0 for mu <= x and 1 otherwise.
    """
    from scipy.special import erfc

    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = 0.5 * erfc((x - mu) / (sigma * math.sqrt(2.0)))
    return np.where(sigma > 0, tail, (mu > x).astype(float))


# Acklam's rational approximation coefficients for the standard normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _std_normal_quantile(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        z = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        z = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    # One Newton step on Phi(z) - p.
    err = 0.5 * math.erfc(-z / math.sqrt(2.0)) - p
    z -= err * math.sqrt(2 * math.pi) * math.exp(0.5 * z * z)
    return z


def gaussian_inv_cdf(p: float, g: GaussianParams) -> float:
    mu, sigma = g
    if not 0 < p < 1:
        raise StatsError(f"probability must be in (0, 1), got {p}")
    if sigma <= 0:
        raise StatsError("inverse CDF undefined for sigma == 0")
    return mu + sigma * _std_normal_quantile(p)


def anderson_darling_normality(d) -> tuple[float, bool]:
    """
    Anderson-Darling test of normality with mean and variance estimated from data.

    Returns the modified statistic A*^2 = A^2 (1 + 0.75/n + 2.25/n^2) and whether
    normality is rejected at the 5% level (A*^2 > 0.752). The standardization
    uses the n-1 sample deviation, as the critical value tables assume.
    """
    x = np.sort(_values(d))
    n = x.size
    if n < 8:
        raise StatsError("degenerate sample: need at least 8 points")
    if x[0] == x[-1]:
        raise StatsError("degenerate sample: zero variance")
    s = np.std(x, ddof=1)
    if not s > 0:
        raise StatsError("degenerate sample: zero variance")
    z = (x - x.mean()) / s
    i = np.arange(1, n + 1)
    # log Phi(z_i) + log(1 - Phi(z_{n+1-i})); log_ndtr keeps far tails finite.
    terms = (2 * i - 1) * (log_ndtr(z) + log_ndtr(-z[::-1]))
    a2 = -n - terms.sum() / n
    a2_star = a2 * (1 + 0.75 / n + 2.25 / n**2)
    return float(a2_star), bool(a2_star > AD_CRITICAL_5PCT)


def ks_two_sample(a, b) -> tuple[float, bool]:
    """Two-sample Kolmogorov-Smirnov D = sup |F_a - F_b| with the asymptotic 5% threshold."""
    a = np.sort(_values(a))
    b = np.sort(_values(b))
    n, m = a.size, b.size
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / n
    fb = np.searchsorted(b, grid, side="right") / m
    stat = float(np.max(np.abs(fa - fb)))
    crit = KS_COEFF_5PCT * math.sqrt((n + m) / (n * m))
    return stat, stat > crit


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def kmeans(histograms: Sequence, k: int, seed: int, max_iter: int = 300) -> KMeansResult:
    """
    Lloyd's k-means on histogram vectors with k-means++ seeding.

    Stops when no assignment changes or after `max_iter` iterations. A cluster
    that empties is re-seeded with the point farthest from its centroid.
    `inertia_history` holds the within-cluster sum of squares after each
    assignment step.
    """
    x = np.asarray(histograms, dtype=float)
    if x.ndim != 2:
        raise StatsError("histograms must be a 2-D collection")
    n = x.shape[0]
    if k < 1 or k > n:
        raise StatsError(f"k={k} must be between 1 and the number of histograms ({n})")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        dist = _sq_dists(x, centroids)
        new_labels = dist.argmin(1)
        cost = dist[np.arange(n), new_labels]
        for j in range(k):
            if not np.any(new_labels == j):
                counts = np.bincount(new_labels, minlength=k)
                candidates = np.where(counts[new_labels] > 1, cost, -1.0)
                far = int(candidates.argmax())
                new_labels[far] = j
                centroids[j] = x[far]
                cost[far] = 0.0
        history.append(float(cost.sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for j in range(k):
            c = x[labels == j].mean(0)
            total = c.sum()
            centroids[j] = c / total if total > 0 else c
    return KMeansResult(labels, centroids, history)


def sample_realizations(d, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` i.i.d. draws with replacement from the samples of `d`."""
    x = _values(d)
    if count < 1:
        raise StatsError("count must be at least 1")
    return x[rng.integers(0, x.size, size=count)]
