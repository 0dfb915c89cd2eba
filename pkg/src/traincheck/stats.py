"""Statistical kernels behind the training checks.

Small, pure functions: label-balance entropy, variance and slope tests,
series shape measures, activation saturation, and representation similarity.
Everything consumes plain arrays and returns floats or small result records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as spstats

from .errors import InvalidParameterError

DIVERGING = "diverging"
VANISHING = "vanishing"
STAGNATING = "stagnating"


@dataclass(frozen=True)
class Series:
    """An ordered sequence of scalar observations with their step indices."""

    values: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        indices = np.asarray(self.indices, dtype=np.int64)
        if values.ndim != 1 or indices.ndim != 1 or values.size != indices.size:
            raise InvalidParameterError("series needs matching 1-d values and indices")
        if indices.size > 1 and not np.all(np.diff(indices) > 0):
            raise InvalidParameterError("series indices must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "indices", indices)

    def __len__(self):
        return int(self.values.size)


@dataclass(frozen=True)
class FTestResult:
    passed: bool
    f_stat: float
    p_value: float


@dataclass(frozen=True)
class SlopeResult:
    improving: bool
    slope: float
    p_value: float


def shannon_equitability(counts) -> float:
    """Normalized Shannon entropy of label counts, in [0, 1].

    1 means perfectly balanced classes, 0 means a single class holds all
    the mass.  Zero counts contribute nothing; a single class yields 0.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise InvalidParameterError("counts must be a non-empty 1-d array")
    if np.any(c < 0):
        raise InvalidParameterError("counts must be non-negative")
    total = c.sum()
    if total == 0:
        raise InvalidParameterError("counts must not all be zero")
    k = c.size
    if k == 1:
        return 0.0
    p = c[c > 0] / total
    entropy = float(-(p * np.log(p)).sum())
    return entropy / float(np.log(k))


def f_test_variance(sample_var: float, n: int, target_var: float, alpha: float) -> FTestResult:
    """Two-sided test of a sample variance against a target variance.

    Under the null the statistic follows an F distribution with (n-1, inf)
    degrees of freedom, i.e. a scaled chi-square; the CDF is evaluated with
    the regularized incomplete gamma function, the exact large-denominator
    limit of the incomplete-beta F form.
    """
    if n < 2:
        raise InvalidParameterError(f"variance test needs n >= 2, got {n}")
    if target_var <= 0 or sample_var < 0:
        raise InvalidParameterError("variances must be positive")
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    f_stat = sample_var / target_var
    df = n - 1
    cdf = float(special.gammainc(df / 2.0, df * f_stat / 2.0))
    p_value = 2.0 * min(cdf, 1.0 - cdf)
    return FTestResult(passed=p_value >= alpha, f_stat=float(f_stat), p_value=p_value)


def pearson_correlation(a, b) -> float:
    """Pearson r between two equal-length series; 0 when either is constant."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameterError("correlation needs two equal-length 1-d arrays")
    if x.size < 2:
        raise InvalidParameterError("correlation needs at least 2 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return 0.0
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def smoothness_ratio(values) -> float:
    """Fraction of samples not spent reversing direction, in [0, 1].

    Counts sign flips between consecutive first differences; zero
    differences inherit the preceding direction so plateaus do not count
    as reversals.  A monotone series scores 1.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise InvalidParameterError("smoothness needs at least 2 observations")
    diffs = np.diff(v)
    changes = 0
    prev_sign = 0
    for d in diffs:
        sign = int(np.sign(d))
        if sign == 0:
            sign = prev_sign
        if prev_sign != 0 and sign != 0 and sign != prev_sign:
            changes += 1
        if sign != 0:
            prev_sign = sign
    n = v.size
    return float(n - changes) / float(n)


def _step_ratios(values: np.ndarray):
    """Consecutive ratios q_t / q_{t-1} with division guards.

    A zero previous value followed by a nonzero one maps to +inf (counts
    as growth); 0/0 maps to 0 (counts as decay).  Inputs are magnitudes,
    so negatives are rejected.
    """
    q = np.abs(np.asarray(values, dtype=np.float64))
    ratios = np.empty(q.size - 1, dtype=np.float64)
    for i in range(1, q.size):
        prev, cur = q[i - 1], q[i]
        if prev == 0.0:
            ratios[i - 1] = 0.0 if cur == 0.0 else np.inf
        else:
            ratios[i - 1] = cur / prev
    return ratios


def trend_test(
    values,
    mode: str,
    window: int,
    *,
    low_bound: float = 2.0,
    high_bound: float = 0.5,
    min_change: float = 0.05,
) -> bool:
    """Test whether the last ``window`` steps of a magnitude series trend.

    ``diverging``: every consecutive ratio exceeds ``low_bound`` (strictly).
    ``vanishing``: every consecutive ratio is below ``high_bound``.
    ``stagnating``: every relative step change is below ``min_change``.
    Needs ``window + 1`` observations; fewer observations never trend.
    """
    if mode not in (DIVERGING, VANISHING, STAGNATING):
        raise InvalidParameterError(f"unknown trend mode {mode!r}")
    if window < 2:
        raise InvalidParameterError(f"trend window must be >= 2, got {window}")
    v = np.asarray(values, dtype=np.float64)
    if v.size < window + 1:
        return False
    tail = v[-(window + 1):]
    ratios = _step_ratios(tail)
    if mode == DIVERGING:
        return bool(np.all(ratios > low_bound))
    if mode == VANISHING:
        return bool(np.all(ratios < high_bound))
    rel = np.abs(ratios - 1.0)
    rel[~np.isfinite(ratios)] = np.inf
    return bool(np.all(rel < min_change))


def saturation_rho(outputs, bounds, bins: int = 10) -> np.ndarray:
    """Per-neuron saturation score over bounded activation outputs.

    ``outputs`` is (samples, neurons) and ``bounds`` the activation's finite
    (low, high) range.  Values are rescaled affinely to [-1, 1], histogrammed
    into ``bins`` equal bins, and scored as the bin-count-weighted mean of
    absolute bin-center means: mass at the asymptotes scores near 1, mass at
    the midpoint scores near 0, a uniform spread scores near 0.5.
    """
    low, high = bounds
    if not (np.isfinite(low) and np.isfinite(high)) or not low < high:
        raise InvalidParameterError(
            f"saturation needs a finite activation range, got ({low}, {high})"
        )
    if bins < 2:
        raise InvalidParameterError(f"saturation needs >= 2 bins, got {bins}")
    a = np.asarray(outputs, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.size == 0:
        raise InvalidParameterError("saturation needs at least one output sample")
    scaled = np.clip(2.0 * (a - low) / (high - low) - 1.0, -1.0, 1.0)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    rhos = np.empty(scaled.shape[1], dtype=np.float64)
    for j in range(scaled.shape[1]):
        col = scaled[:, j]
        counts = np.zeros(bins, dtype=np.float64)
        sums = np.zeros(bins, dtype=np.float64)
        idx = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, bins - 1)
        np.add.at(counts, idx, 1.0)
        np.add.at(sums, idx, col)
        mask = counts > 0
        means = np.zeros(bins, dtype=np.float64)
        means[mask] = sums[mask] / counts[mask]
        rhos[j] = float((np.abs(means) * counts).sum() / counts.sum())
    return rhos


def linear_cka(x, y) -> float:
    """Linear centered-kernel alignment between two (samples, features) maps.

    Columns are centered first; the score is ||Y^T X||_F^2 over the product
    of ||X^T X||_F and ||Y^T Y||_F.  1 means identical up to orthogonal
    transform and scale; degenerate all-zero inputs score 0.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise InvalidParameterError(
            f"cka needs 2-d inputs with matching sample counts, got {a.shape} and {b.shape}"
        )
    if a.shape[0] < 2:
        raise InvalidParameterError("cka needs at least 2 samples")
    ac = a - a.mean(axis=0, keepdims=True)
    bc = b - b.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(bc.T @ ac, ord="fro") ** 2
    denom = np.linalg.norm(ac.T @ ac, ord="fro") * np.linalg.norm(bc.T @ bc, ord="fro")
    if denom == 0.0:
        return 0.0
    return float(cross / denom)


def slope_significance(values, alpha: float) -> SlopeResult:
    """One-sided least-squares test that a series is decreasing.

    Fits value ~ index and reports ``improving`` when the slope is negative
    with one-sided p below ``alpha``.  Constant series never improve.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 4:
        raise InvalidParameterError("slope test needs at least 4 observations")
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if np.allclose(v, v[0]):
        return SlopeResult(improving=False, slope=0.0, p_value=1.0)
    fit = spstats.linregress(np.arange(v.size, dtype=np.float64), v)
    two_sided = float(fit.pvalue) if np.isfinite(fit.pvalue) else 1.0
    if fit.slope < 0:
        one_sided = two_sided / 2.0
    else:
        one_sided = 1.0 - two_sided / 2.0
    return SlopeResult(
        improving=bool(fit.slope < 0 and one_sided < alpha),
        slope=float(fit.slope),
        p_value=one_sided,
    )


def relative_error(a: float, b: float) -> float:
    """|a - b| scaled by the larger magnitude; 0 when both are 0."""
    if not (np.isfinite(a) and np.isfinite(b)):
        return float("inf")
    denom = max(abs(a), abs(b))
    if denom == 0.0:
        return 0.0
    return abs(a - b) / denom
