"""Log-log regression shared by the exponent estimators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class ExponentEstimate:
    """A fitted power-law exponent with its uncertainty."""

    slope: float
    stderr: float
    r_squared: float
    scale_window: tuple[float, float]
    replicas: int
    seed: int | None = None
    intercept: float = float("nan")

    def __post_init__(self):
        if not self.stderr >= 0 and not math.isnan(self.stderr):
            raise ParameterError("stderr must be nonnegative")
        lo, hi = self.scale_window
        if not lo < hi:
            raise ParameterError(f"degenerate scale window {self.scale_window}")

    def within(self, expected: float, tol: float) -> bool:
        return abs(self.slope - expected) <= tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_window"] = list(self.scale_window)
        return d


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slopes and intercepts of y (..., k) regressed on x (k,)."""
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = (y - y.mean(axis=-1, keepdims=True)) @ xc / sxx
    return slope, y.mean(axis=-1) - slope * x.mean()


def r_squared(x: np.ndarray, y: np.ndarray) -> float:
    slope, icpt = _ols(x, y)
    resid = y - (icpt + slope * x)
    tot = float(np.sum((y - y.mean()) ** 2))
    if tot == 0.0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - np.sum(resid**2) / tot)))


def fit_loglog(
    scales,
    per_replica: np.ndarray,
    seed: int | None = None,
) -> ExponentEstimate:
    """Fit ``log mean_j v[j, k]`` against ``log scales[k]``.

    ``per_replica`` has one row per independent replica. The standard error
    of the slope is the delete-one jackknife over replicas, which accounts
    for the correlation between scales within a replica.
    """
    s = np.asarray(scales, dtype=float)
    v = np.asarray(per_replica, dtype=float)
    if v.ndim != 2 or v.shape[1] != s.size:
        raise ParameterError("per_replica must have shape (replicas, len(scales))")
    if s.size < 2:
        raise ParameterError("need at least two scales")
    n = v.shape[0]
    x = np.log(s)
    mean = v.mean(axis=0)
    if np.any(mean <= 0) or not np.all(np.isfinite(mean)):
        raise ParameterError("moment estimates must be positive and finite")
    y = np.log(mean)
    slope, icpt = _ols(x, y)
    stderr = 0.0
    if n >= 2:
        loo = (v.sum(axis=0)[None, :] - v) / (n - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ly = np.log(loo)
        ok = np.all(np.isfinite(ly), axis=1)
        if ok.sum() >= 2:
            js, _ = _ols(x, ly[ok])
            m = ok.sum()
            stderr = float(math.sqrt((m - 1) / m * np.sum((js - js.mean()) ** 2)))
    return ExponentEstimate(
        slope=float(slope),
        stderr=stderr,
        r_squared=r_squared(x, y),
        scale_window=(float(s.min()), float(s.max())),
        replicas=int(n),
        seed=seed,
        intercept=float(icpt),
    )


def fit_line(scales, values, seed: int | None = None, replicas: int = 1) -> ExponentEstimate:
    """Ordinary least squares of ``log values`` on ``log scales`` with the OLS standard error."""
    s = np.asarray(scales, dtype=float)
    x = np.log(s)
    y = np.log(np.asarray(values, dtype=float))
    slope, icpt = _ols(x, y)
    k = s.size
    stderr = 0.0
    if k > 2:
        resid = y - (icpt + slope * x)
        stderr = float(math.sqrt(np.sum(resid**2) / (k - 2) / np.sum((x - x.mean()) ** 2)))
    return ExponentEstimate(
        float(slope), stderr, r_squared(x, y), (float(s.min()), float(s.max())), int(replicas), seed, float(icpt)
    )
