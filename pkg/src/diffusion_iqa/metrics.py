"""Rank and linear correlation between predicted scores and reference opinion scores.

SRCC is the Pearson correlation of fractional ranks (ties get the average of
the positions they span), PLCC the Pearson correlation of the raw values.
Both are implemented directly so tests can cross-check them against
independent references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeMismatchError

__all__ = [
    "CorrelationSummary",
    "fractional_ranks",
    "is_degenerate",
    "logistic_rescale",
    "pearson",
    "plcc",
    "srcc",
    "summarize_correlations",
]

# Relative spread below which a score vector counts as constant.
DEGENERATE_RTOL = 1e-12


def _as_pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.ndim != 1 or ref.ndim != 1:
        raise ShapeMismatchError("scores must be 1-D vectors")
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"length mismatch: {pred.shape[0]} vs {ref.shape[0]}")
    if pred.shape[0] < 2:
        raise DegenerateInputError("need at least two scores to correlate")
    return pred, ref


def is_degenerate(values) -> bool:
    """True when the values are constant up to relative rounding noise."""
    values = np.asarray(values, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    return bool(np.ptp(values) <= DEGENERATE_RTOL * scale)


def fractional_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    """Pearson correlation; degenerate (constant) inputs raise."""
    x, y = _as_pair(x, y)
    if is_degenerate(x):
        raise DegenerateInputError("first argument is constant")
    if is_degenerate(y):
        raise DegenerateInputError("second argument is constant")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def srcc(pred, ref) -> float:
    """Spearman rank correlation: Pearson over fractional ranks."""
    pred, ref = _as_pair(pred, ref)
    return pearson(fractional_ranks(pred), fractional_ranks(ref))


def plcc(pred, ref) -> float:
    """Pearson linear correlation of the raw scores."""
    pred, ref = _as_pair(pred, ref)
    return pearson(pred, ref)


@dataclass(frozen=True)
class CorrelationSummary:
    """SRCC/PLCC pair with an explicit degenerate-prediction flag.

    When ``degenerate`` is set both correlations are reported as 0.0 rather
    than NaN, so downstream comparisons still order such runs last.
    """

    srcc: float
    plcc: float
    degenerate: bool


def summarize_correlations(pred, ref) -> CorrelationSummary:
    pred, ref = _as_pair(pred, ref)
    if is_degenerate(pred) or is_degenerate(ref):
        return CorrelationSummary(srcc=0.0, plcc=0.0, degenerate=True)
    return CorrelationSummary(srcc=srcc(pred, ref), plcc=plcc(pred, ref), degenerate=False)


def logistic_rescale(pred, ref) -> np.ndarray:
    """Optional 4-parameter logistic remap of predictions onto the reference scale.

    Some evaluation protocols correlate raw predictions, others apply a
    monotone nonlinear fit first; all correlations in this package are raw,
    and this hook provides the fitted variant for callers that want it.
    The returned values are a strictly monotone transform of ``pred`` (in
    the fitted direction), so SRCC magnitude is preserved while PLCC
    typically rises.  Raises ``RuntimeError`` when the fit fails to
    converge.
    """
    from scipy.optimize import curve_fit

    pred, ref = _as_pair(pred, ref)
    if is_degenerate(pred) or is_degenerate(ref):
        raise DegenerateInputError("cannot fit a curve through constant scores")

    def curve(x, top, bottom, center, width):
        return bottom + (top - bottom) / (1.0 + np.exp(-(x - center) / width))

    span = float(np.ptp(pred)) or 1.0
    start = (float(ref.max()), float(ref.min()), float(pred.mean()), span / 4.0)
    params, _ = curve_fit(curve, pred, ref, p0=start, maxfev=20000)
    return curve(pred, *params)
