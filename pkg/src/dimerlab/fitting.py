"""Least-squares fits of power laws and logarithmic laws with jackknife errors."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentEstimate:
    """Result of fitting ``y = A t^value`` (power) or ``y = value log t + b`` (log).

    For the log model ``value`` is the prefactor of ``log t``.
    """

    value: float
    stderr: float
    intercept: float
    r2: float
    window: tuple[float, float]
    model: str
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), min(max(r2, 0.0), 1.0)


def fit_exponent(
    t,
    y,
    model: Literal["power", "log"] = "power",
    window: tuple[float, float] | None = None,
) -> ExponentEstimate:
    """Fit a growth law to ``(t, y)`` restricted to ``window`` (inclusive).

    The standard error is the leave-one-point-out jackknife of the slope.
    At least five points are required inside the window, and the power model
    requires positive ``t`` and ``y``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise FitError("t and y must have the same shape")
    if window is None:
        window = (float(t.min()), float(t.max()))
    sel = (t >= window[0]) & (t <= window[1])
    ts, ys = t[sel], y[sel]
    if ts.size < 5:
        raise FitError(f"need at least 5 points in window {window}, got {ts.size}")
    if np.ptp(ts) == 0:
        raise FitError("degenerate fit window: all abscissae coincide")
    if np.any(ts <= 0):
        raise FitError("both models need positive t")
    x = np.log(ts)
    if model == "power":
        if np.any(ys <= 0):
            raise FitError("power-law fit needs positive values")
        yy = np.log(ys)
    elif model == "log":
        yy = ys
    else:
        raise FitError(f"unknown model {model!r}")
    slope, icpt, r2 = _linfit(x, yy)
    n = ts.size
    loo = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        loo[i] = _linfit(x[keep], yy[keep])[0]
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return ExponentEstimate(slope, se, icpt, r2, (float(ts.min()), float(ts.max())), model, int(n))


def compare_models(t, y, window=None) -> dict:
    """Fit both models; ``preferred`` is the one with the larger R²."""
    power = fit_exponent(t, y, "power", window)
    log = fit_exponent(t, y, "log", window)
    return {"power": power, "log": log, "preferred": "log" if log.r2 >= power.r2 else "power"}


def jackknife(values, statistic=np.mean) -> tuple[float, float]:
    """Delete-one jackknife estimate and standard error of ``statistic`` over the first axis."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    full = statistic(values)
    if n < 2:
        return float(full), float("nan")
    loo = np.array([statistic(np.delete(values, i, axis=0)) for i in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


def latter_half(t) -> tuple[float, float]:
    """Window covering the latter half of a (log-spaced or linear) time grid."""
    t = np.asarray(t, dtype=float)
    k = t.size // 2
    return float(t[k]), float(t[-1])
