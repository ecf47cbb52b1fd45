"""Plain-text result tables: accuracy summaries and pairwise method correlations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = ["MethodResult", "CorrelationEntry", "format_accuracy", "format_correlation", "run_report"]

_N1_MARK = "*"


@dataclass(frozen=True)
class MethodResult:
    """Accuracies of one decoder across subjects or folds."""

    method: str
    accuracies: tuple[float, ...]
    paradigm: str = "-"
    interval: str = "-"
    p_values: tuple[float, ...] = ()

    def __post_init__(self):
        accs = tuple(float(a) for a in self.accuracies)
        if not accs:
            raise InvalidInputError(f"no accuracies for method {self.method!r}")
        if any(not (0.0 <= a <= 1.0) for a in accs):
            raise InvalidInputError(f"accuracies of {self.method!r} must lie in [0, 1]")
        object.__setattr__(self, "accuracies", accs)
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))


@dataclass(frozen=True)
class CorrelationEntry:
    method_a: str
    method_b: str
    r: float
    p: float


def format_accuracy(accuracies) -> str:
    """``"(mean ± sd) %"`` with one decimal; sd uses the n-1 denominator (0.0 for n=1)."""
    accs = np.asarray(accuracies, dtype=np.float64)
    if accs.size == 0:
        raise InvalidInputError("no accuracies to summarize")
    mean = 100 * accs.mean()
    sd = 100 * accs.std(ddof=1) if accs.size > 1 else 0.0
    text = f"({mean:.1f} ± {sd:.1f}) %"
    return text + _N1_MARK if accs.size == 1 else text


def format_correlation(r: float, p: float) -> str:
    return f"{r:.3f} ({p:.3g})"


def _table(rows: list[list[str]]) -> list[str]:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    out = []
    for k, row in enumerate(rows):
        out.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            out.append("-+-".join("-" * w for w in widths))
    return out


def run_report(results, correlations=()) -> str:
    """Render an accuracy table and, if given, a pairwise correlation table."""
    results = list(results)
    if not results:
        raise InvalidInputError("no results to report")
    rows = [["paradigm", "interval", "method", "n", "mean accuracy ± sd", "p"]]
    any_single = False
    for res in results:
        any_single |= len(res.accuracies) == 1
        if res.p_values:
            p_cell = ", ".join(f"{p:.3g}" for p in res.p_values)
        else:
            p_cell = "-"
        rows.append([res.paradigm, res.interval, res.method, str(len(res.accuracies)),
                     format_accuracy(res.accuracies), p_cell])
    lines = ["Decoding accuracy"] + _table(rows)
    if any_single:
        lines.append(f"{_N1_MARK} n=1: standard deviation undefined, shown as 0.0")
    correlations = list(correlations)
    if correlations:
        methods = []
        for c in correlations:
            for m in (c.method_a, c.method_b):
                if m not in methods:
                    methods.append(m)
        cells = {}
        for c in correlations:
            if math.isnan(c.r):
                raise InvalidInputError(f"undefined correlation for {c.method_a}/{c.method_b}")
            cells[(c.method_a, c.method_b)] = cells[(c.method_b, c.method_a)] = (
                format_correlation(c.r, c.p)
            )
        grid = [[""] + methods]
        for a in methods:
            grid.append([a] + [cells.get((a, b), "-") for b in methods])
        lines += ["", "Linear correlation r (p)"] + _table(grid)
    return "\n".join(lines) + "\n"
