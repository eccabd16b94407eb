"""Correlation diagnostics between dequantized weight vectors."""
import numpy as np
from scipy import stats

from .errors import UndefinedCorrelationError


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError("need at least two samples")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    return a, b


def pearson(a, b) -> float:
    a, b = _pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    return float(np.clip(da @ db / np.sqrt((da @ da) * (db @ db)), -1.0, 1.0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x).reshape(-1)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], sx.size]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def spearman(a, b) -> float:
    a, b = _pair(a, b)
    return pearson(average_ranks(a), average_ranks(b))


def kendall(a, b) -> float:
    """Kendall tau-b (tie-corrected), O(n log n)."""
    a, b = _pair(a, b)
    return float(stats.kendalltau(a, b, variant="b").statistic)


def correlations(a, b) -> tuple[float, float, float]:
    return pearson(a, b), spearman(a, b), kendall(a, b)
