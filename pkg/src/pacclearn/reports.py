"""Evaluation reports: accuracy, counterfactual sensitivity, robust accuracy
under PGD, and the dual-variable sensitivity tables."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .losses import NLL
from .models import predict_labels
from .perturb import counterfactual, pgd_attack


def accuracy(model, theta, data):
    return float(np.mean(predict_labels(model, theta, data.features) == data.labels))


def sensitivity_rate(model, theta, data, cmap):
    """Fraction of samples whose predicted class changes under ``cmap``."""
    if data is None or len(data) == 0:
        raise DataError("sensitivity needs a nonempty test set")
    a = predict_labels(model, theta, data.features)
    b = predict_labels(model, theta, counterfactual(data.features, cmap))
    return float(np.mean(a != b))


def robust_accuracy_sweep(model, theta, data, eps_grid, attack, loss=NLL, seed=0):
    """Accuracy under the PGD attack at each radius in ascending ``eps_grid``.

    A sample counts as correct at radius eps only if it also resisted every
    smaller radius, which makes the curve nonincreasing (adversaries found
    inside a smaller ball are also inside the larger one).
    """
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ValueError("epsilon grid must be nonempty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    X, y = data.features, data.labels
    correct = predict_labels(model, theta, X) == y
    rows = []
    for k, eps in enumerate(grid):
        if eps > 0:
            rng = np.random.default_rng([seed, k])
            X_adv = pgd_attack(model, theta, X, y, eps, attack, loss, rng)
            correct = correct & (predict_labels(model, theta, X_adv) == y)
        rows.append((eps, float(np.mean(correct))))
    return rows


@dataclass
class DualReport:
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    zero_fraction: float
    threshold: float
    top_count: int
    degenerate: bool
    prevalence: dict = field(default_factory=dict)

    def histogram_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return buf.getvalue()

    def prevalence_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["column", "level", "top_prevalence", "base_prevalence"])
        for col, levels in self.prevalence.items():
            for lv, (top, base) in levels.items():
                w.writerow([col, lv, repr(top), repr(base)])
        return buf.getvalue()


def dual_sensitivity_report(lam, table, quantile=0.2, bins=20):
    """Histogram of pointwise duals and group prevalence among the largest ones.

    ``table`` maps a categorical column name to the per-sample level array.
    The top set holds samples with dual at or above the (1 - quantile)
    empirical quantile; zero duals never count as "top" unless every dual is
    zero, in which case the report is flagged degenerate and the top set is
    the whole sample.
    """
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.size
    hi = float(lam.max()) if n else 0.0
    edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
    counts, edges = np.histogram(lam, bins=edges)
    degenerate = not np.any(lam > 0)
    thr = float(np.quantile(lam, 1.0 - quantile))
    top = np.ones(n, dtype=bool) if degenerate else (lam >= thr) & (lam > 0)
    prevalence = {}
    for col, levels in table.items():
        levels = np.asarray(levels)
        if levels.shape != (n,):
            raise DataError(f"column {col!r} has {levels.shape} entries, expected {n}")
        out = {}
        for lv in sorted(set(levels.tolist())):
            hit = levels == lv
            out[lv] = (float(np.mean(hit[top])), float(np.mean(hit)))
        prevalence[col] = out
    return DualReport(counts, edges, float(np.mean(lam == 0)), thr, int(top.sum()), degenerate, prevalence)
