"""Limit constants of the temporal quadratic variation.

Below ``H = 3/4`` the variation ``V_N`` satisfies
``N^(4H+1) E[V_N^2] -> sigma^2 = (1/6) sum_k phi_H(k)^2``.  Above it,
``N^4 E[V_N^2] -> k`` and ``V_N / sd`` tends to a second-chaos law whose
cumulants are cyclic integrals of ``|x - y|^(2H-2) min(x, y)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import binom, zeta

from .kernels import _second_diff_pow, as_hurst, phi, psi1, psi2

__all__ = [
    "Cancelled",
    "CancelToken",
    "SeriesValue",
    "sigma2",
    "sigma2_partial",
    "sigma2_psi_partial",
    "temporal_second_moment",
    "HighNormalizer",
    "high_normalizer_closed_form",
    "three_sum_display",
    "limiting_variance_high",
    "cumulant_kernel",
    "limiting_cumulant_integral",
    "limiting_cumulant_integral_naive",
    "limiting_cumulant",
    "CltRate",
    "clt_rate",
]

SIGMA2_TERM_CAP = 10 ** 7
MAX_MESH = 4096


class Cancelled(RuntimeError):
    pass


class CancelToken:
    """Cooperative cancellation flag checked by long-running loops."""

    def __init__(self):
        self._cancelled = False

    def cancel(self) -> None:
        self._cancelled = True

    @property
    def cancelled(self) -> bool:
        return self._cancelled

    def check(self) -> None:
        if self._cancelled:
            raise Cancelled("evaluation cancelled by caller")


def _check(token):
    if token is not None:
        token.check()


@dataclass(frozen=True)
class SeriesValue:
    """A series evaluated as partial sum plus analytic tail.

    ``value`` includes ``tail_estimate``; ``tail_bound`` bounds
    ``|value - true sum|``.
    """

    value: float
    truncation: int
    tail_bound: float
    tail_estimate: float = 0.0


def sigma2_partial(h, terms: int) -> float:
    """``(1/6) sum_{|k| <= terms} phi(k)^2`` without any tail."""
    k = np.arange(1, terms + 1)
    p = phi(h, k) if terms > 0 else np.empty(0)
    return (1.0 + 2.0 * float(np.sum(p * p))) / 6.0


def sigma2_psi_partial(h, terms: int) -> float:
    """``(H^2/24) sum_{|j| <= terms} psi2(|j|)^2`` with ``psi2(0) = 2/H``."""
    H = as_hurst(h).h
    k = np.arange(1, terms + 1)
    p = psi2(H, k) if terms > 0 else np.empty(0)
    return H * H / 24.0 * ((2.0 / H) ** 2 + 2.0 * float(np.sum(p * p)))


def _phi_sq_tail(H: float, K: int, orders: int = 8):
    """Estimate ``sum_{k > K} phi(k)^2`` and bound the truncation error.

    Uses ``phi(k) = sum_{r>=1} C(2H, 2r) k^(2H-2r)`` squared and summed with
    Hurwitz zeta values; ``|C(2H, n)| <= 1`` bounds the omitted orders.
    """
    coef = [binom(2 * H, 2 * r) for r in range(1, orders + 1)]
    total = 0.0
    for t in range(2, orders + 2):
        d_t = sum(coef[r - 1] * coef[t - r - 1] for r in range(1, t))
        total += d_t * zeta(2 * t - 4 * H, K + 1)
    bound = 0.0
    for t in range(orders + 2, orders + 6):
        s = 2 * t - 4 * H
        bound += (t - 1) * float(K) ** (1 - s) / (s - 1)
    return float(total), 2.0 * bound


def sigma2(h, tol: float = 1e-12, max_terms: int = SIGMA2_TERM_CAP, cancel: CancelToken | None = None) -> SeriesValue:
    """Limiting variance constant ``sigma^2 = (1/6) sum_{k in Z} phi_H(k)^2`` for ``H < 3/4``.

    The partial sum over ``|k| <= K`` is completed with an asymptotic tail
    expansion; ``K`` doubles until the error bound drops below ``tol``.

    Raises
    ------
    ValueError
        If ``H > 3/4`` (the series diverges) or ``tol`` cannot be met within
        ``max_terms`` terms.
    """
    hp = as_hurst(h)
    if hp.regime != "low":
        raise ValueError("sigma^2 is finite only for H < 3/4")
    if not tol > 0:
        raise ValueError("tol must be positive")
    H = hp.h
    K = 256
    while True:
        _check(cancel)
        K = min(K, max_terms)
        partial = sigma2_partial(H, K)
        if H == 0.5:
            return SeriesValue(partial, K, 0.0, 0.0)
        tail, err = _phi_sq_tail(H, K)
        # Rounding in the partial sum, ~K ulps of the largest term.
        err += K * np.finfo(float).eps * partial
        bound = float(err) / 3.0
        if bound <= tol:
            return SeriesValue(partial + tail / 3.0, K, bound, tail / 3.0)
        if K >= max_terms:
            raise ValueError(f"sigma^2 tolerance {tol:g} unreachable within {max_terms} terms")
        K *= 2


def temporal_second_moment(h, n: int) -> float:
    """Exact ``E[V_N^2]`` for ``c = sigma_vol = 1`` in ``O(n)`` operations.

    Entries along each lag ``k`` are affine in the earlier index ``j``,
    ``pref * (A_k + j psi2(k))`` with ``A_k = psi1(k) + (k+1) psi2(k)``,
    so each diagonal band sums in closed form.
    """
    H = as_hurst(h).h
    if n < 1:
        raise ValueError("grid size must be positive")
    pref = H / (4.0 * float(n) ** (2 * H + 1))
    i = np.arange(n, dtype=float)
    diag = 2.0 * (i / H + 1.0 / (H * (2 * H + 1)))
    total = float(np.sum(diag * diag))
    if n > 1:
        k = np.arange(1, n, dtype=float)
        b = psi2(H, k)
        a = psi1(H, k) + (k + 1) * b
        L = n - k
        band = L * a * a + a * b * L * (L - 1) + b * b * (L - 1) * L * (2 * L - 1) / 6.0
        total += 2.0 * float(np.sum(band))
    return 2.0 / n ** 2 * pref * pref * total


def high_normalizer_closed_form(h) -> float:
    """``H (2H-1) / (4 (4H-1) (4H-3))``, the dominant-term evaluation of ``k``."""
    H = as_hurst(h).h
    return H * (2 * H - 1) / (4 * (4 * H - 1) * (4 * H - 3))


def three_sum_display(h, n: int, literal: bool = False) -> float:
    """Three-sum expression for ``N^4 E[V_N^2]`` plus the diagonal part.

    With ``literal=True`` the third sum uses ``i^2 psi2`` exactly as printed;
    otherwise ``i^2 psi2^2``.  The later increment index is the 0-based ``i``.
    """
    H = as_hurst(h).h
    n4h = float(n) ** (4 * H)
    k = np.arange(1, n, dtype=float)
    p1, p2 = psi1(H, k), psi2(H, k)
    # For fixed lag k the later index runs over i = k..n-1.
    cnt = n - k
    s_i = (k + n - 1) * cnt / 2.0
    s_i2 = ((n - 1) * n * (2 * n - 1) - (k - 1) * k * (2 * k - 1)) / 6.0
    first = H * H / (4 * n4h) * float(np.sum(cnt * p1 * p1))
    second = H * H / (2 * n4h) * float(np.sum(s_i * p1 * p2))
    third_terms = s_i2 * (p2 if literal else p2 * p2)
    third = H * H / (4 * n4h) * float(np.sum(third_terms))
    i = np.arange(n, dtype=float)
    v2 = H * H / (2.0 * float(n) ** (4 * H + 4)) * float(np.sum((i / H + 1 / (H * (2 * H + 1))) ** 2))
    return first + second + third + float(n) ** 4 * v2


@dataclass(frozen=True)
class HighNormalizer:
    """Numerical limit of ``N^4 E[V_N^2]`` for ``H > 3/4``."""

    value: float
    closed_form: float
    three_sum: float
    three_sum_literal: float
    grid: tuple = ()
    sequence: tuple = ()
    extrapolants: tuple = ()
    exponent: float = float("nan")
    exponent_fitted: bool = False
    converged: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def relative_gap(self) -> float:
        """``(value - closed_form) / closed_form``."""
        return (self.value - self.closed_form) / self.closed_form


def _fit_limit(ns, gs, gamma):
    x = np.asarray(ns, dtype=float) ** (-gamma)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, np.asarray(gs), rcond=None)
    resid = float(np.linalg.norm(design @ coef - gs))
    return float(coef[0]), resid


def _extrapolate(ns, gs, gamma_assumed):
    g0, g1, g2 = gs[-3:]
    ratio = (g0 - g1) / (g1 - g2) if g1 != g2 else float("nan")
    candidates = [(gamma_assumed, False)]
    if ratio > 0 and math.isfinite(ratio):
        candidates.append((math.log2(ratio), True))
    window = slice(max(0, len(ns) - 4), len(ns))
    best = None
    for gamma, fitted in candidates:
        if not gamma > 0:
            continue
        limit, resid = _fit_limit(ns[window], gs[window], gamma)
        if best is None or resid < best[1]:
            best = (limit, resid, gamma, fitted)
    return best


def limiting_variance_high(h, n_max: int = 2 ** 13, n_min: int = 2 ** 8, cancel: CancelToken | None = None) -> HighNormalizer:
    """Extrapolate ``k = lim N^4 E[V_N^2]`` for ``H > 3/4``.

    Exact values on ``N = n_min, 2 n_min, ..., n_max`` are Richardson
    extrapolated assuming ``g(N) = k + a N^(-gamma)``.  ``gamma`` defaults to
    ``4H - 3`` and is replaced by the fitted exponent whenever that fits the
    last points better.  ``converged`` requires the last two extrapolants to
    agree within 5%.
    """
    hp = as_hurst(h)
    if hp.regime != "high":
        raise ValueError("the N^-4 normalizer applies only for H > 3/4")
    H = hp.h
    ns = []
    n = n_min
    while n <= n_max:
        ns.append(n)
        n *= 2
    if len(ns) < 3:
        raise ValueError("need at least three grid sizes between n_min and n_max")
    gs = []
    for n in ns:
        _check(cancel)
        gs.append(float(n) ** 4 * temporal_second_moment(H, n))
    gamma0 = 4.0 * H - 3.0
    extrap, gammas = [], []
    fitted_flag = False
    for end in range(3, len(ns) + 1):
        limit, _, gamma, fitted = _extrapolate(np.array(ns[:end]), np.array(gs[:end]), gamma0)
        extrap.append(limit)
        gammas.append(gamma)
        fitted_flag = fitted
    converged = len(extrap) >= 2 and abs(extrap[-1] - extrap[-2]) <= 0.05 * abs(extrap[-1])
    if len(extrap) == 1:
        converged = True
    return HighNormalizer(
        value=extrap[-1],
        closed_form=high_normalizer_closed_form(H),
        three_sum=three_sum_display(H, ns[-1]),
        three_sum_literal=three_sum_display(H, ns[-1], literal=True),
        grid=tuple(ns),
        sequence=tuple(gs),
        extrapolants=tuple(extrap),
        exponent=gammas[-1],
        exponent_fitted=fitted_flag,
        converged=converged,
        diagnostics={"assumed_exponent": gamma0},
    )


def cumulant_kernel(h, mesh: int) -> np.ndarray:
    """Discretized kernel ``T[a, b] ~ h * |x_a - x_b|^(2H-2) min(x_a, x_b)`` on midpoints.

    The singular factor is averaged exactly over each pair of cells with
    ``int int |u - v|^(2H-2) = h^2H Δ²[|k|^2H] / (2H (2H-1))``, so the
    diagonal keeps its (finite) mass.
    """
    H = as_hurst(h).h
    if H <= 0.5:
        raise ValueError("the cumulant kernel needs H > 1/2")
    if mesh < 8:
        raise ValueError("mesh must be at least 8")
    if mesh > MAX_MESH:
        raise MemoryError(f"mesh {mesh} exceeds the guard of {MAX_MESH}")
    step = 1.0 / mesh
    x = (np.arange(mesh) + 0.5) * step
    lag = np.abs(np.arange(mesh)[:, None] - np.arange(mesh)[None, :])
    cell = step ** (2 * H) / (2 * H * (2 * H - 1)) * _second_diff_pow(lag, 2 * H)
    return cell / step * np.minimum(x[:, None], x[None, :])


def limiting_cumulant_integral(h, m: int, mesh: int = 128) -> float:
    """Approximate ``int_[0,1]^m prod_i |x_i - x_{i+1}|^(2H-2) min(x_i, x_{i+1}) dx`` (cyclic)."""
    if m < 2:
        raise ValueError("order must be at least 2")
    kernel = cumulant_kernel(h, mesh)
    eig = np.linalg.eigvalsh(kernel)
    return float(np.sum(eig ** m))


def limiting_cumulant_integral_naive(h, m: int, mesh: int) -> float:
    """Same cyclic sum by explicit enumeration of all ``mesh**m`` index tuples."""
    kernel = cumulant_kernel(h, mesh)
    total = 0.0
    for idx in itertools.product(range(mesh), repeat=m):
        prod = 1.0
        for a, b in zip(idx, idx[1:] + idx[:1]):
            prod *= kernel[a, b]
        total += prod
    return total


def limiting_cumulant(h, m: int, mesh: int = 128, k_norm: float | None = None) -> float:
    """``m``-th cumulant of the limit of ``V_N / sqrt(E[V_N^2])`` for ``H > 3/4``.

    ``kappa_m = 2^(m-1) (m-1)! (H (2H-1) / 2)^m k^(-m/2) I_m`` where ``I_m``
    is the cyclic integral and ``k`` the limit of ``N^4 E[V_N^2]``
    (defaults to the closed form).  The factor ``(H/2)^m`` comes from the
    increment covariance ``~ (H/2)(2H-1) N^-2 |x-y|^(2H-2) min(x, y)``.
    """
    hp = as_hurst(h)
    if hp.regime != "high":
        raise ValueError("the noncentral limit applies only for H > 3/4")
    if m < 3:
        raise ValueError("order must be at least 3")
    H = hp.h
    k = high_normalizer_closed_form(H) if k_norm is None else float(k_norm)
    if not k > 0:
        raise ValueError("normalizer must be positive")
    integral = limiting_cumulant_integral(H, m, mesh)
    return (
        2.0 ** (m - 1) * math.factorial(m - 1)
        * (H * (2 * H - 1) / 2.0) ** m * k ** (-m / 2.0) * integral
    )


@dataclass(frozen=True)
class CltRate:
    """Bound ``N^exponent * log(N)^log_power`` on the distance of ``F_N`` to ``N(0, 1)``."""

    exponent: float
    log_power: float
    label: str

    def __call__(self, n: float) -> float:
        return float(n) ** self.exponent * math.log(n) ** self.log_power


def clt_rate(h) -> CltRate:
    """Convergence-rate descriptor for ``1/2 <= H < 3/4``."""
    hp = as_hurst(h)
    if hp.regime != "low":
        raise ValueError("the central limit theorem holds only for H < 3/4")
    H = hp.h
    if H < 0.625:
        return CltRate(-0.5, 0.0, "N^{-1/2}")
    if H == 0.625:
        return CltRate(-0.5, 1.5, "N^{-1/2} log^{3/2} N")
    return CltRate(4 * H - 3, 0.0, f"N^{{{4 * H - 3:.6g}}}")
