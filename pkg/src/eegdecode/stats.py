"""Significance tests for decoding accuracies and for paired method comparisons."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvalidInputError, UndefinedStatisticError
from .numerics import pearson_r

__all__ = [
    "PermTestResult",
    "WilcoxonResult",
    "CorrelationTestResult",
    "label_permutation_test",
    "exact_permutation_null",
    "exact_tail_probability",
    "wilcoxon_signed_rank",
    "correlation_permutation_test",
]

DEFAULT_N_PERM = 1_000_000
WILCOXON_EXACT_MAX_N = 25
_CHUNK = 1 << 16


@dataclass(frozen=True)
class PermTestResult:
    observed_correct: int
    n_trials: int
    n_permutations: int
    p_value: float
    seed: int
    n_at_least: int  # permutations with #correct >= observed

    @property
    def accuracy(self) -> float:
        return self.observed_correct / self.n_trials


def _as_labels(a, name):
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-D label vector")
    return arr


def _count_at_least_binary(pred, truth, observed, n_perm, rng) -> int:
    # Shuffling the truth vector against fixed predictions only matters through
    # X = #(pred == 1 and truth == 1), which is hypergeometric; draw X directly.
    n = pred.size
    m1 = int((pred == 1).sum())
    k1 = int((truth == 1).sum())
    count = 0
    remaining = n_perm
    while remaining > 0:
        size = min(remaining, 1 << 20)
        hits = rng.hypergeometric(k1, n - k1, m1, size=size) if m1 > 0 else np.zeros(size, int)
        correct = 2 * hits + (n - m1 - k1)
        count += int(np.count_nonzero(correct >= observed))
        remaining -= size
    return count


def _count_at_least_shuffle(pred, truth, observed, n_perm, rng) -> int:
    count = 0
    remaining = n_perm
    chunk = max(1, min(_CHUNK, (1 << 24) // max(truth.size, 1)))
    while remaining > 0:
        size = min(remaining, chunk)
        perms = rng.permuted(np.broadcast_to(truth, (size, truth.size)), axis=1)
        correct = (perms == pred).sum(axis=1)
        count += int(np.count_nonzero(correct >= observed))
        remaining -= size
    return count


def label_permutation_test(
    predictions, truth, n_perm: int = DEFAULT_N_PERM, seed: int = 0, method: str = "auto"
) -> PermTestResult:
    """Significance of a decoder's number of correct predictions.

    The true labels are randomly re-assigned to the trials ``n_perm`` times
    while the predictions stay fixed; ``p = (#{correct_perm >= observed} + 1) / (n_perm + 1)``.

    ``method="auto"`` uses an exact hypergeometric sampler of the shuffled
    match count for two-class labels and explicit shuffles otherwise;
    ``method="shuffle"`` forces explicit shuffles.
    """
    pred = _as_labels(predictions, "predictions")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise InvalidInputError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    if pred.size < 2:
        raise InvalidInputError("need at least 2 trials")
    if n_perm < 100:
        raise InvalidInputError("n_perm must be at least 100")
    if method not in ("auto", "shuffle"):
        raise InvalidInputError(f"unknown method {method!r}")
    observed = int((pred == truth).sum())
    rng = np.random.default_rng(seed)
    binary = set(np.unique(pred)) <= {0, 1} and set(np.unique(truth)) <= {0, 1}
    if method == "auto" and binary:
        count = _count_at_least_binary(pred, truth, observed, n_perm, rng)
    else:
        count = _count_at_least_shuffle(pred, truth, observed, n_perm, rng)
    return PermTestResult(
        observed_correct=observed,
        n_trials=int(pred.size),
        n_permutations=int(n_perm),
        p_value=(count + 1) / (n_perm + 1),
        seed=int(seed),
        n_at_least=count,
    )


def exact_permutation_null(predictions, truth) -> np.ndarray:
    """Exact distribution of #correct under uniform re-assignment of ``truth``.

    Entry ``k`` is P(#correct == k), k = 0..n. Two-class labels use the
    hypergeometric closed form; other label sets are enumerated (n <= 10).
    """
    pred = _as_labels(predictions, "predictions")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise InvalidInputError("length mismatch")
    n = pred.size
    probs = np.zeros(n + 1)
    if set(np.unique(pred)) <= {0, 1} and set(np.unique(truth)) <= {0, 1}:
        m1 = int((pred == 1).sum())
        k1 = int((truth == 1).sum())
        total = math.comb(n, m1)
        for x in range(max(0, m1 + k1 - n), min(m1, k1) + 1):
            ways = math.comb(k1, x) * math.comb(n - k1, m1 - x)
            probs[2 * x + n - m1 - k1] += ways / total
        return probs
    if n > 10:
        raise InvalidInputError("exact enumeration is limited to n <= 10 for multi-class labels")
    counts = Counter()
    for perm in itertools.permutations(truth.tolist()):
        counts[sum(p == t for p, t in zip(pred.tolist(), perm))] += 1
    total = math.factorial(n)
    for k, c in counts.items():
        probs[k] = c / total
    return probs


def exact_tail_probability(null: np.ndarray, observed: int) -> float:
    return float(np.sum(null[observed:]))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float  # two-sided
    n_eff: int
    w_plus: float
    w_minus: float
    method: str  # "exact" or "normal"


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _signed_rank_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W+ (subset-sum counting)."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are discarded, tied magnitudes get mid-ranks. The p-value
    is exact (all 2**n sign patterns) for ``n_eff <= 25`` and otherwise uses the
    normal approximation with tie-corrected variance.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size}")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise UndefinedStatisticError("all paired differences are zero; the test is undefined")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= WILCOXON_EXACT_MAX_N:
        counts = _signed_rank_null_counts(2 * ranks)
        # W+ and W- are symmetric around n(n+1)/4, so P(W+ <= stat) is the lower tail
        lower = sum(counts[: int(round(2 * stat)) + 1])
        p = min(1.0, 2 * float(lower) / 2**n)
        method = "exact"
    else:
        mean = n * (n + 1) / 4
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts**3 - tie_counts) / 48
        z = (stat - mean) / math.sqrt(var)
        p = min(1.0, float(2 * norm.cdf(z)))
        method = "normal"
    return WilcoxonResult(stat, p, n, w_plus, w_minus, method)


# ---------------------------------------------------------------------------
# correlation permutation test


@dataclass(frozen=True)
class CorrelationTestResult:
    r: float
    p_one_sided: float  # P(r_perm >= r), add-one smoothed
    n_permutations: int
    seed: int

    @property
    def p_two_sided(self) -> float:
        """Doubled one-sided p, capped at 1."""
        return min(1.0, 2 * self.p_one_sided)


def correlation_permutation_test(x, y, n_perm: int = DEFAULT_N_PERM, seed: int = 0):
    """Pearson r and its one-sided permutation p-value.

    The order of ``y`` is randomized ``n_perm`` times; the p-value counts
    permutations whose correlation is at least the observed one.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    r = pearson_r(x, y)
    if n_perm < 1:
        raise InvalidInputError("n_perm must be positive")
    xc = x - x.mean()
    yc = y - y.mean()
    scale = math.sqrt((xc @ xc) * (yc @ yc))
    # permuting y leaves its mean and norm unchanged; compare numerators only
    observed = float(yc @ xc)
    tol = 1e-12 * scale
    rng = np.random.default_rng(seed)
    count = 0
    remaining = n_perm
    chunk = max(1, min(_CHUNK, (1 << 24) // y.size))
    while remaining > 0:
        size = min(remaining, chunk)
        perms = rng.permuted(np.broadcast_to(yc, (size, y.size)), axis=1)
        count += int(np.count_nonzero(perms @ xc >= observed - tol))
        remaining -= size
    return CorrelationTestResult(r=r, p_one_sided=(count + 1) / (n_perm + 1),
                                 n_permutations=int(n_perm), seed=int(seed))
