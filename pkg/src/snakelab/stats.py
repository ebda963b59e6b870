"""Small hypothesis-test helpers used by the verification experiments."""
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy import stats as sps


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class TestReport:
    name: str
    statistic: float
    sample_size: int
    passed: bool
    threshold: float
    p_value: Optional[float] = None
    z_score: Optional[float] = None

    def as_dict(self):
        return asdict(self)


def poisson_mean_test(counts, mean0, z_max=3.0):
    """Two-sided z-test of the sample mean against a Poisson mean."""
    if mean0 <= 0:
        raise ValueError("mean0 must be positive")
    x = np.asarray(counts, dtype=float)
    if x.size == 0:
        raise InsufficientData("counts is empty")
    z = (x.mean() - mean0) / np.sqrt(mean0 / x.size)
    p = 2.0 * sps.norm.sf(abs(z))
    return TestReport("poisson_mean", float(x.mean()), int(x.size),
                      bool(abs(z) <= z_max), z_max, p_value=float(p), z_score=float(z))


def ks_exponential_test(samples, mean0, alpha=0.01):
    if mean0 <= 0:
        raise ValueError("mean0 must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise InsufficientData("samples is empty")
    if np.any(x <= 0):
        raise ValueError("samples must be positive")
    res = sps.kstest(x, "expon", args=(0.0, mean0), method="asymp")
    return TestReport("ks_exponential", float(res.statistic), int(x.size),
                      bool(res.pvalue > alpha), alpha, p_value=float(res.pvalue))


def _pool(a, b, min_expected):
    # merge adjacent bins from both tails until every expected count is large enough
    groups = [[i] for i in range(len(a))]
    tot_a, tot_b = a.sum(), b.sum()
    n = tot_a + tot_b

    def ok(g):
        col = a[g].sum() + b[g].sum()
        return col * min(tot_a, tot_b) / n >= min_expected

    changed = True
    while changed and len(groups) > 1:
        changed = False
        for end in (0, -1):
            if len(groups) > 1 and not ok(groups[end]):
                if end == 0:
                    groups[1] = groups[0] + groups[1]
                    groups.pop(0)
                else:
                    groups[-2] = groups[-2] + groups[-1]
                    groups.pop()
                changed = True
        if not changed:
            bad = [i for i, g in enumerate(groups) if not ok(g)]
            if bad:
                i = bad[0]
                j = i + 1 if i + 1 < len(groups) else i - 1
                lo, hi = min(i, j), max(i, j)
                groups[lo] = groups[lo] + groups[hi]
                groups.pop(hi)
                changed = True
    if not all(ok(g) for g in groups):
        raise InsufficientData("cannot pool bins to the expected-count threshold")
    return (np.array([a[g].sum() for g in groups]),
            np.array([b[g].sum() for g in groups]))


def chi_square_two_sample(hist_a, hist_b, alpha=0.01, min_expected=5.0):
    """Two-sample chi-square homogeneity test on matching bins."""
    a = np.asarray(hist_a, dtype=float)
    b = np.asarray(hist_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("histograms must have matching bins")
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    if a.sum() == 0 or b.sum() == 0:
        raise InsufficientData("empty histogram")
    a, b = _pool(a, b, min_expected)
    if len(a) < 2:
        return TestReport("chi_square_two_sample", 0.0, int(a.sum() + b.sum()),
                          True, alpha, p_value=1.0)
    table = np.vstack([a, b])
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    p = float(sps.chi2.sf(stat, len(a) - 1))
    return TestReport("chi_square_two_sample", stat, int(table.sum()),
                      bool(p > alpha), alpha, p_value=p)


def mean_ci(samples):
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientData("need at least two samples")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def z_gate(mean, se, target, z_max=3.0):
    if se == 0:
        z = 0.0 if mean == target else np.inf
    else:
        z = (mean - target) / se
    return float(z), bool(abs(z) <= z_max)


def histogram_2d_counts(pairs, shape=None):
    """Flatten (i, j) integer pairs into a joint histogram vector."""
    arr = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if shape is None:
        shape = (arr[:, 0].max() + 1, arr[:, 1].max() + 1)
    h = np.zeros(shape, dtype=int)
    np.add.at(h, (arr[:, 0], arr[:, 1]), 1)
    return h.ravel()
