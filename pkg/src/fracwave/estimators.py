"""Point estimators built on quadratic variations, with plug-in confidence intervals.

All estimators take raw increments.  Each returns an :class:`EstimateReport`
whose interval is ``estimate ± 1.96 * asymptotic_sd`` with unknown
parameters replaced by their estimates.  Intervals are withheld (``None``)
where no Gaussian limit applies.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .asymptotics import sigma2
from .kernels import PhysicalParams, RectGrid, as_hurst

__all__ = [
    "EstimateReport",
    "ESTIMATE_SCHEMA",
    "hurst_from_s",
    "estimate_hurst",
    "estimate_c",
    "estimate_p",
    "estimate_q",
    "estimate_c_rect",
    "identifiability_check",
]

ESTIMATE_SCHEMA = "fracwave.estimate/1"
Z95 = 1.959963984540054
# Hurst estimates this close to 3/4 get a boundary warning.
BOUNDARY_BUFFER = 0.02


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    target: str
    asymptotic_sd: float | None
    ci95: tuple[float, float] | None
    inputs: dict[str, Any] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["schema"] = ESTIMATE_SCHEMA
        out["ci95"] = list(self.ci95) if self.ci95 is not None else None
        out["notes"] = list(self.notes)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EstimateReport":
        if data.get("schema") != ESTIMATE_SCHEMA:
            raise ValueError(f"unknown estimate schema {data.get('schema')!r}")
        ci = data.get("ci95")
        return cls(
            estimate=data["estimate"],
            target=data["target"],
            asymptotic_sd=data.get("asymptotic_sd"),
            ci95=tuple(ci) if ci is not None else None,
            inputs=dict(data.get("inputs", {})),
            notes=tuple(data.get("notes", ())),
        )


def _ci(estimate, sd):
    return (estimate - Z95 * sd, estimate + Z95 * sd)


def _mean_square(increments) -> float:
    d = np.asarray(increments, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no increments given")
    s = float(np.mean(d * d))
    if not s > 0:
        raise ValueError("mean squared increment is zero; estimator undefined")
    return s


def hurst_from_s(s: float, n: int) -> float:
    """``-(log 4 + log S) / (2 log N)``."""
    if not s > 0:
        raise ValueError("S_N must be positive")
    if n < 2:
        raise ValueError("need n >= 2")
    return -(math.log(4.0) + math.log(s)) / (2.0 * math.log(n))


def estimate_hurst(path_increments, n: int | None = None) -> EstimateReport:
    """Estimate ``H`` from ``n`` temporal increments of ``u(·, x)`` on ``[0, 1]``.

    The interval uses ``sqrt(N) log(N) (H_hat - H) -> N(0, 4 sigma^2)``, with
    ``sigma^2`` evaluated at the estimate.  Above 3/4 the limit is not
    Gaussian and no interval is produced.
    """
    d = np.asarray(path_increments, dtype=float)
    n = d.size if n is None else n
    if d.size != n:
        raise ValueError(f"expected {n} increments, got {d.size}")
    s = _mean_square(d)
    est = hurst_from_s(s, n)
    inputs = {"n": n, "s_n": s}
    notes = []
    sd = ci = None
    if abs(est - 0.75) <= BOUNDARY_BUFFER:
        notes.append("near-boundary: estimate within 0.02 of 3/4, CI unreliable")
    if 0.5 <= est < 0.75:
        sig2 = sigma2(est).value
        sd = 2.0 * math.sqrt(sig2) / (math.sqrt(n) * math.log(n))
        ci = _ci(est, sd)
        inputs["sigma2"] = sig2
        notes.append("plug-in asymptotic")
    elif est >= 0.75:
        notes.append("noncentral regime: limit is second-chaos, no Gaussian CI")
    else:
        notes.append("estimate below 1/2: outside the model, no CI")
    return EstimateReport(est, "H", sd, ci, inputs, tuple(notes))


def _drift_like(path_increments, n, h_known, target, scale_name):
    hp = as_hurst(h_known)
    d = np.asarray(path_increments, dtype=float)
    n = d.size if n is None else n
    if d.size != n:
        raise ValueError(f"expected {n} increments, got {d.size}")
    s = _mean_square(d)
    est = 1.0 / (4.0 * s * float(n) ** (2.0 * hp.h))
    inputs = {"n": n, "h_known": hp.h, "s_n": s}
    if hp.regime != "low":
        return EstimateReport(est, target, None, None, inputs, ("CI refused: known H must be below 3/4",))
    sig2 = sigma2(hp.h).value
    sd = 4.0 * abs(est) * math.sqrt(sig2) / math.sqrt(n)
    inputs["sigma2"] = sig2
    return EstimateReport(est, target, sd, _ci(est, sd), inputs, ("plug-in asymptotic", scale_name))


def estimate_c(path_increments, n: int | None = None, h_known=0.5) -> EstimateReport:
    """Estimate the wave speed ``c`` from temporal increments of ``u^c``, ``H`` known.

    ``c_hat = 1 / (4 S_N N^2H)`` with ``sqrt(N)(c_hat - c) -> N(0, 16 c^2 sigma^2)``.
    """
    return _drift_like(path_increments, n, h_known, "c", "sd = 4 c sigma / sqrt(N)")


def estimate_p(path_increments, n: int | None = None, h_known=0.5) -> EstimateReport:
    """Estimate ``p = c / sigma_vol^2``; same statistic as :func:`estimate_c`."""
    return _drift_like(path_increments, n, h_known, "p", "sd = 4 p sigma / sqrt(N)")


def estimate_q(spatial_increments, n: int | None = None, h_known=0.5, t: float = 1.0) -> EstimateReport:
    """Estimate ``q = c^2 / sigma_vol^2`` from spatial increments at a fixed time ``t``.

    ``q_hat = (t/2) / (N^2H * mean squared increment)``.  The spatial law for
    ``H > 1/2`` is not modelled here, so an interval is only given at
    ``H = 1/2``, where the normalized spatial variation has limit variance 2,
    giving ``sqrt(N)(q_hat - q) -> N(0, 2 q^2)``.
    """
    hp = as_hurst(h_known)
    if not t > 0:
        raise ValueError("observation time must be positive")
    d = np.asarray(spatial_increments, dtype=float)
    n = d.size if n is None else n
    if d.size != n:
        raise ValueError(f"expected {n} increments, got {d.size}")
    s = _mean_square(d)
    est = (t / 2.0) / (float(n) ** (2.0 * hp.h) * s)
    inputs = {"n": n, "h_known": hp.h, "t": t, "s_n": s}
    if hp.h != 0.5:
        return EstimateReport(est, "q", None, None, inputs, ("no CI: spatial law only available at H = 1/2",))
    sd = math.sqrt(2.0) * est / math.sqrt(n)
    return EstimateReport(
        est, "q", sd, _ci(est, sd), inputs,
        ("plug-in asymptotic", "variance constant from an external spatial CLT"),
    )


def estimate_c_rect(rect_increments, grid: RectGrid, h=0.5) -> EstimateReport:
    """Estimate ``c`` from rectangular increments (``H = 1/2`` only).

    ``c_tilde = 1 / (8 m^(2 alpha - 2) n^-1 sum (Delta_ij)^2)`` with interval
    from ``sqrt(m n)(c_tilde - c) -> N(0, 8 c^2)``.  Admissibility of the grid
    is checked against the estimate after the fact.
    """
    if as_hurst(h).h != 0.5:
        raise ValueError("rectangular estimator is defined only for H = 1/2")
    d = np.asarray(rect_increments, dtype=float).ravel()
    if d.size != grid.size:
        raise ValueError(f"expected {grid.size} increments, got {d.size}")
    total = float(np.sum(d * d))
    if not total > 0:
        raise ValueError("sum of squared increments is zero; estimator undefined")
    est = 1.0 / (8.0 * float(grid.m) ** (2.0 * grid.alpha - 2.0) / grid.n * total)
    notes = ["plug-in asymptotic"]
    if not grid.is_admissible(est):
        msg = f"grid not admissible for c_tilde = {est:.6g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    sd = math.sqrt(8.0) * abs(est) / math.sqrt(grid.size)
    inputs = {"n": grid.n, "m": grid.m, "alpha": grid.alpha, "h": 0.5, "sum_sq": total}
    return EstimateReport(est, "c", sd, _ci(est, sd), inputs, tuple(notes))


def identifiability_check(c1: float, sigma1: float, c2: float, sigma2_: float, rtol: float = 1e-12) -> bool:
    """Whether ``(c1, sigma1)`` and ``(c2, sigma2_)`` give the same temporal law."""
    a = PhysicalParams(c1, sigma1)
    b = PhysicalParams(c2, sigma2_)
    ra = a.sigma_vol / math.sqrt(abs(a.c))
    rb = b.sigma_vol / math.sqrt(abs(b.c))
    return abs(ra - rb) <= rtol * max(abs(ra), abs(rb))
