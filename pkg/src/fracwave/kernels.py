"""Closed-form covariances of the fractional-white wave equation.

The solution of ``u_tt = u_xx + dW^H`` with zero initial data is the Wiener
integral ``u(t, x) = int int G1(t - r, x - y) W^H(dr, dy)`` against the wave
kernel ``G1(t, x) = 1{|x| < t} / 2``.  The noise has covariance
``R_H(t, s) * min(x, y)``, i.e. fractional Brownian in time and Brownian in
space.  By the isometry for ``H > 1/2``::

    E[u(t,x) u(s,x)] = (alpha_H / 4) int_0^t int_0^s 2 min(t-u, s-v) |u-v|^(2H-2) dv du

with ``alpha_H = H (2H - 1)``.  Carrying out the integrals gives the closed
form implemented in :func:`temporal_cov`.  At ``H = 1/2`` the noise is white
in both coordinates and :func:`field_cov_white` gives the full space-time
covariance.

Increment indexing is 0-based everywhere: increment ``i`` of an ``n``-point
grid is ``u((i+1)/n) - u(i/n)``.  The ψ-representation uses a 1-based index
``i' = i + 1`` for the later increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import binom

__all__ = [
    "HurstParam",
    "SpaceTimePoint",
    "PhysicalParams",
    "RectGrid",
    "GridConstraintError",
    "as_hurst",
    "temporal_cov",
    "increment_cov",
    "increment_cov_psi",
    "temporal_increment_matrix",
    "psi1",
    "psi2",
    "phi",
    "psi1_asym",
    "psi2_asym",
    "field_cov_white",
    "rect_increment_cov",
    "rect_increment_cov_expanded",
]

# Above this lag the second difference of k**p is summed as a binomial series.
_SERIES_LAG = 64
_SERIES_TERMS = 12


class GridConstraintError(ValueError):
    """A rectangular grid violates ``2 * delta_M * M < Delta_N / c``."""


@dataclass(frozen=True)
class HurstParam:
    """Hurst index of the temporal noise, restricted to ``[1/2, 1)`` minus ``3/4``."""

    h: float

    def __post_init__(self):
        h = float(self.h)
        if not (0.5 <= h < 1.0):
            raise ValueError(f"Hurst parameter must lie in [1/2, 1), got {h!r}")
        if h == 0.75:
            raise ValueError("H = 3/4 is the log-corrected boundary case and is not supported")
        object.__setattr__(self, "h", h)

    @property
    def alpha(self) -> float:
        """``H (2H - 1)``, the fBm covariance density constant."""
        return self.h * (2.0 * self.h - 1.0)

    @property
    def regime(self) -> str:
        return "low" if self.h < 0.75 else "high"

    def __float__(self) -> float:
        return self.h


HurstLike = Union[HurstParam, float]


def as_hurst(h: HurstLike) -> HurstParam:
    return h if isinstance(h, HurstParam) else HurstParam(h)


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    x: float = 0.0

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"time must be nonnegative, got {self.t!r}")


@dataclass(frozen=True)
class PhysicalParams:
    """Wave speed ``c`` and noise volatility ``sigma_vol``.

    Temporal laws depend on the pair only through ``sigma_vol**2 / c``.
    """

    c: float = 1.0
    sigma_vol: float = 1.0

    def __post_init__(self):
        if self.c == 0 or not math.isfinite(self.c):
            raise ValueError("wave speed c must be finite and nonzero")
        if not self.sigma_vol > 0:
            raise ValueError("volatility must be positive")

    @property
    def scale(self) -> float:
        """Covariance multiplier ``sigma_vol**2 / |c|`` relative to ``c = sigma_vol = 1``.

        Only ``c**2`` enters the equation, so the sign of ``c`` is irrelevant.
        """
        return self.sigma_vol ** 2 / abs(self.c)

    @property
    def p(self) -> float:
        return abs(self.c) / self.sigma_vol ** 2

    @property
    def q(self) -> float:
        return self.c ** 2 / self.sigma_vol ** 2


@dataclass(frozen=True)
class RectGrid:
    """Space-time grid ``x_i = i / n`` (space), ``t_j = j * m**-alpha`` (time).

    Increment cells are indexed by ``i in [0, n)`` (space) and ``j in [0, m)``
    (time); flattened vectors are space-major, cell ``(i, j)`` at ``i * m + j``.
    """

    n: int
    m: int
    alpha: float

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("grid sizes must be positive")

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def dt(self) -> float:
        return float(self.m) ** (-self.alpha)

    @property
    def size(self) -> int:
        return self.n * self.m

    def is_admissible(self, c: float = 1.0) -> bool:
        return 2.0 * self.dt * self.m < self.dx / abs(c)

    def check(self, c: float = 1.0) -> None:
        if not self.is_admissible(c):
            raise GridConstraintError(
                f"grid (n={self.n}, m={self.m}, alpha={self.alpha}) violates "
                f"2*dt*m = {2 * self.dt * self.m:.6g} < dx/c = {self.dx / abs(c):.6g}"
            )


def _powabs(d, p):
    """``|d|**p`` with ``0**p = 0``."""
    d = np.abs(np.asarray(d, dtype=float))
    return np.where(d > 0, np.power(np.where(d > 0, d, 1.0), p), 0.0)


# Below this ratio s/d the excess (1+x)^p - 1 - p x is summed as a binomial series.
_EXCESS_SERIES_X = 0.25
_EXCESS_TERMS = 40


def _pow_excess(lo, d, p):
    """``(lo + d)**p - d**p - p lo d**(p-1)``, i.e. ``d**p g(lo/d)`` with ``g(x) = (1+x)^p - 1 - p x``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(d > 0, lo / np.where(d > 0, d, 1.0), np.inf)
    direct = _powabs(lo + d, p) - _powabs(d, p) - p * lo * _powabs(d, p - 1.0)
    small = x < _EXCESS_SERIES_X
    if not np.any(small):
        return direct
    xs = np.where(small, x, 0.0)
    acc = np.zeros_like(xs)
    term = xs.copy()
    for r in range(2, _EXCESS_TERMS + 2):
        term = term * xs
        acc = acc + binom(p, r) * term
    return np.where(small, _powabs(d, p) * acc, direct)


def temporal_cov(h: HurstLike, t, s):
    """Covariance ``E[u(t, x) u(s, x)]`` at a fixed space point.

    Vectorized over ``t`` and ``s``.  For ``t >= s``::

        (H/4) [ (t^(2H+1) + s^(2H+1)) / (H (2H+1)) - (1/H) t (t-s)^(2H)
                + (2/(2H+1)) (t-s)^(2H+1) ]

    At ``H = 1/2`` this reduces to ``min(t, s)**2 / 4``.

    Writing ``t = s + d`` and ``p = 2H + 1`` the bracket collapses to
    ``((s+d)^p - d^p - p s d^(p-1) + s^p) / (H p)``, a sum of nonnegative
    terms.  That form is evaluated here, so there is no cancellation when
    ``s << t``.
    """
    H = as_hurst(h).h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be nonnegative")
    hi = np.maximum(t, s)
    lo = np.minimum(t, s)
    d = hi - lo
    p = 2.0 * H + 1.0
    out = (_pow_excess(lo, d, p) + _powabs(lo, p)) / (4.0 * p)
    return out[()] if out.ndim == 0 else out


def increment_cov(h: HurstLike, n: int, i: int, j: int) -> float:
    """Covariance of increments ``i`` and ``j`` by bilinear expansion of :func:`temporal_cov`."""
    if n < 1:
        raise ValueError("grid size must be positive")
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"increment indices must lie in [0, {n}), got ({i}, {j})")
    a0, a1 = i / n, (i + 1) / n
    b0, b1 = j / n, (j + 1) / n
    return float(
        temporal_cov(h, a1, b1) - temporal_cov(h, a1, b0)
        - temporal_cov(h, a0, b1) + temporal_cov(h, a0, b0)
    )


def _first_diff_pow(k, p):
    """``k**p - (k-1)**p`` for integer ``k >= 1``, without cancellation."""
    k = np.asarray(k, dtype=float)
    safe = np.where(k > 1, k, 2.0)
    out = -np.exp(p * np.log(safe)) * np.expm1(p * np.log1p(-1.0 / safe))
    return np.where(k > 1, out, 1.0)


def _second_diff_pow(k, p):
    """``(k+1)**p - 2 k**p + |k-1|**p`` for integer ``k >= 0``.

    Large lags use ``2 k**p sum_{r>=1} C(p, 2r) k**(-2r)``, which avoids the
    leading-order cancellation of the direct form.
    """
    k = np.asarray(k, dtype=float)
    direct = _powabs(k + 1, p) - 2.0 * _powabs(k, p) + _powabs(k - 1, p)
    big = k >= _SERIES_LAG
    if not np.any(big):
        return direct
    kb = np.where(big, k, float(_SERIES_LAG))
    x2 = 1.0 / (kb * kb)
    acc = np.zeros_like(kb)
    term = np.ones_like(kb)
    for r in range(1, _SERIES_TERMS + 1):
        term = term * x2
        acc = acc + binom(p, 2 * r) * term
    series = 2.0 * np.exp(p * np.log(kb)) * acc
    return np.where(big, series, direct)


def _check_lag(k, lo):
    k = np.asarray(k)
    if np.any(k < lo) or np.any(np.asarray(k, dtype=float) != np.floor(np.asarray(k, dtype=float))):
        raise ValueError(f"lag must be an integer >= {lo}")


def psi1(h: HurstLike, k):
    """``(1/H)(k^2H - (k-1)^2H) - (2/(2H+1)) Δ²[k^(2H+1)]`` for ``k >= 1``."""
    H = as_hurst(h).h
    _check_lag(k, 1)
    p = 2.0 * H
    out = (2.0 / p) * _first_diff_pow(k, p) - (2.0 / (p + 1.0)) * _second_diff_pow(k, p + 1.0)
    return out[()] if np.ndim(out) == 0 else out


def psi2(h: HurstLike, k):
    """``(1/H)((k+1)^2H - 2 k^2H + (k-1)^2H)`` for ``k >= 1``."""
    H = as_hurst(h).h
    _check_lag(k, 1)
    out = (1.0 / H) * _second_diff_pow(k, 2.0 * H)
    return out[()] if np.ndim(out) == 0 else out


def phi(h: HurstLike, k):
    """Fractional Gaussian noise autocovariance ``Δ²[|k|^2H] / 2`` for ``k >= 0``."""
    H = as_hurst(h).h
    _check_lag(k, 0)
    out = 0.5 * _second_diff_pow(k, 2.0 * H)
    return out[()] if np.ndim(out) == 0 else out


def psi1_asym(h: HurstLike, k):
    H = as_hurst(h).h
    return 2.0 * (1.0 - 2.0 * H) * np.asarray(k, dtype=float) ** (2.0 * H - 1.0)


def psi2_asym(h: HurstLike, k):
    H = as_hurst(h).h
    return 2.0 * (2.0 * H - 1.0) * np.asarray(k, dtype=float) ** (2.0 * H - 2.0)


def increment_cov_psi(h: HurstLike, n: int, i: int, j: int) -> float:
    """Increment covariance from the ψ-representation.

    For ``i > j``: ``H / (4 n^(2H+1)) * (psi1(i-j) + (i+1) psi2(i-j))``;
    on the diagonal: ``H / (2 n^(2H+1)) * (i/H + 1/(H(2H+1)))``.
    """
    H = as_hurst(h).h
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"increment indices must lie in [0, {n}), got ({i}, {j})")
    if i < j:
        i, j = j, i
    pref = H / (4.0 * float(n) ** (2.0 * H + 1.0))
    if i == j:
        return 2.0 * pref * (i / H + 1.0 / (H * (2.0 * H + 1.0)))
    k = i - j
    return float(pref * (psi1(H, k) + (i + 1) * psi2(H, k)))


def temporal_increment_matrix(h: HurstLike, n: int) -> np.ndarray:
    """Full ``n x n`` increment covariance matrix (``c = sigma_vol = 1``).

    Uses the ψ-representation, which keeps full relative precision for large
    ``n`` where the bilinear expansion loses digits to cancellation.
    """
    H = as_hurst(h).h
    if n < 1:
        raise ValueError("grid size must be positive")
    pref = H / (4.0 * float(n) ** (2.0 * H + 1.0))
    lags = np.arange(1, n)
    p1 = psi1(H, lags) if n > 1 else np.empty(0)
    p2 = psi2(H, lags) if n > 1 else np.empty(0)
    ii, jj = np.indices((n, n))
    lo = np.minimum(ii, jj)
    k = np.abs(ii - jj)
    kk = np.maximum(k, 1) - 1
    cov = np.empty((n, n))
    off = k > 0
    if n > 1:
        cov[off] = pref * (p1[kk[off]] + (lo[off] + k[off] + 1) * p2[kk[off]])
    diag = np.arange(n)
    cov[diag, diag] = 2.0 * pref * (diag / H + 1.0 / (H * (2.0 * H + 1.0)))
    return cov


def field_cov_white(p1: SpaceTimePoint, p2: SpaceTimePoint) -> float:
    """Space-time covariance of the white-white (``H = 1/2``) solution field."""
    return float(_field_cov_white(p1.t, p1.x, p2.t, p2.x))


def _field_cov_white(t, x, s, y):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    hi = np.maximum(t, s)
    lo = np.minimum(t, s)
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    inner = hi - lo >= d
    cone = (~inner) & (d < hi + lo)
    return np.where(inner, lo * lo / 4.0, np.where(cone, (hi + lo - d) ** 2 / 16.0, 0.0))


def rect_increment_cov(grid: RectGrid, i: int, k: int, j: int, l: int) -> float:
    """Tabulated rectangular-increment covariance pattern.

    Returns ``(2j+1) / (8 m^(2 alpha))`` on the diagonal, its negative for
    spatial neighbours at the same time index, and zero otherwise.  Only
    defined for admissible grids.

    Note that this table does not equal the covariance implied by
    :func:`field_cov_white`; see :func:`rect_increment_cov_expanded` for the
    exact value.
    """
    grid.check()
    _check_cell(grid, i, j)
    _check_cell(grid, k, l)
    if j != l:
        return 0.0
    base = (2 * j + 1) / (8.0 * float(grid.m) ** (2.0 * grid.alpha))
    if i == k:
        return base
    if abs(i - k) == 1:
        return -base
    return 0.0


def _check_cell(grid, i, j):
    if not (0 <= i < grid.n and 0 <= j < grid.m):
        raise IndexError(f"cell ({i}, {j}) outside grid {grid.n}x{grid.m}")


def _corners(grid, i, j, c):
    c = abs(c)
    x0, x1 = i * grid.dx / c, (i + 1) * grid.dx / c
    t0, t1 = j * grid.dt, (j + 1) * grid.dt
    return [(1.0, t1, x1), (-1.0, t0, x1), (-1.0, t1, x0), (1.0, t0, x0)]


def rect_increment_cov_expanded(
    grid: RectGrid, i: int, k: int, j: int, l: int, params: PhysicalParams | None = None
) -> float:
    """Exact covariance of cells ``(i, j)`` and ``(k, l)`` from the field covariance.

    Valid on any grid.  With physical parameters the field is
    ``u^{c,Σ}(t, x) = Σ c^(-1/2) u(t, x/c)`` in law.
    """
    params = params or PhysicalParams()
    _check_cell(grid, i, j)
    _check_cell(grid, k, l)
    total = 0.0
    for a, ta, xa in _corners(grid, i, j, params.c):
        for b, tb, xb in _corners(grid, k, l, params.c):
            total += a * b * float(_field_cov_white(ta, xa, tb, xb))
    return params.scale * total
