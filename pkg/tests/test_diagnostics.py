import itertools

import numpy as np
import pytest
from scipy import stats

from nestquant.diagnostics import average_ranks, correlations, kendall, pearson, spearman
from nestquant.errors import UndefinedCorrelationError


def kendall_brute(a, b):
    """O(n^2) tau-b straight from concordant / discordant / tied pair counts."""
    conc = disc = ties_a = ties_b = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da, db = np.sign(a[i] - a[j]), np.sign(b[i] - b[j])
        if da == 0 and db == 0:
            continue
        if da == 0:
            ties_a += 1
        elif db == 0:
            ties_b += 1
        elif da == db:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / np.sqrt((conc + disc + ties_a) * (conc + disc + ties_b))


def test_against_scipy(rng):
    a = rng.normal(size=300)
    b = 0.7 * a + rng.normal(size=300)
    assert pearson(a, b) == pytest.approx(stats.pearsonr(a, b).statistic, abs=1e-12)
    assert spearman(a, b) == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)


def test_kendall_brute_force_with_ties(rng):
    for _ in range(20):
        a = rng.integers(-4, 5, size=40).astype(float)
        b = a + rng.integers(-3, 4, size=40)
        assert kendall(a, b) == pytest.approx(kendall_brute(a, b), abs=1e-12)


def test_spearman_with_ties():
    a = [1, 2, 2, 3, 4]
    b = [1, 3, 2, 2, 5]
    assert spearman(a, b) == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)
    np.testing.assert_array_equal(average_ranks([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


def test_perfect_and_inverse():
    x = np.arange(10.0)
    assert correlations(x, 2 * x + 1) == pytest.approx((1, 1, 1))
    assert correlations(x, -x) == pytest.approx((-1, -1, -1))


def test_undefined():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        spearman([1], [2])
    with pytest.raises(ValueError):
        kendall([1, 2, 3], [1, 2])
