"""Exact Gaussian sampling of increment vectors and quadratic-form oracles.

A :class:`CovarianceModel` holds the covariance of an increment vector and its
Cholesky factor.  Samples are ``L @ z`` with ``z`` drawn from a per-replication
random stream, so any partition of replications across workers yields the same
numbers.

For ``X ~ N(0, C)`` the centred quadratic form ``V = (|X|^2 - tr C) / norm``
has cumulants ``kappa_m = 2^(m-1) (m-1)! tr(C^m) / norm^m``; these are the
oracles used to check Monte Carlo output and limit constants.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from .kernels import (
    GridConstraintError,
    PhysicalParams,
    RectGrid,
    _field_cov_white,
    as_hurst,
    temporal_increment_matrix,
)

__all__ = [
    "CovarianceModel",
    "NotPositiveDefiniteError",
    "SeedSpec",
    "build_model",
    "build_temporal_model",
    "build_rect_model",
    "rect_covariance_matrix",
    "rect_difference_operator",
    "standard_normals",
    "replication_rng",
    "sample_increments",
    "wick_second_moment",
    "quadratic_form_cumulant",
    "trace_power",
    "dump_model",
    "load_model",
    "factorization_count",
]

logger = logging.getLogger(__name__)

JITTER_STEPS = (1e-14, 1e-12, 1e-10)
MODEL_MAGIC = b"FWCM"
MODEL_FORMAT_VERSION = 1

_FACTORIZATIONS = 0


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after the bounded jitter policy."""


def factorization_count() -> int:
    """Number of Cholesky factorizations performed in this process."""
    return _FACTORIZATIONS


def _cholesky(matrix: np.ndarray):
    global _FACTORIZATIONS
    _FACTORIZATIONS += 1
    try:
        return np.linalg.cholesky(matrix), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(matrix)))
    for eps in JITTER_STEPS:
        jitter = eps * scale
        try:
            factor = np.linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]))
        except np.linalg.LinAlgError:
            continue
        logger.warning("covariance needed diagonal jitter %.3g (eps=%g)", jitter, eps)
        return factor, jitter
    raise NotPositiveDefiniteError(
        f"covariance of dimension {matrix.shape[0]} is not positive definite "
        f"after jitter up to {JITTER_STEPS[-1]:g} * mean(diag)"
    )


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Gaussian law of an increment vector.

    Attributes
    ----------
    matrix : ndarray, shape (dim, dim)
        Symmetric covariance matrix.  Read-only.
    factor : ndarray, shape (dim, dim)
        Lower-triangular ``L`` with ``L @ L.T == matrix + jitter * I``.
    meta : mapping
        Generating parameters (kind, h, n, m, alpha, c, sigma_vol) and the
        diagonal jitter actually used.
    """

    matrix: np.ndarray
    factor: np.ndarray
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.matrix)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


def build_model(matrix, meta: Mapping[str, Any] | None = None) -> CovarianceModel:
    """Symmetrize, validate and factor a covariance matrix."""
    matrix = np.array(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
        raise ValueError("covariance must be a nonempty square matrix")
    asym = np.max(np.abs(matrix - matrix.T))
    if asym > 1e-14 * max(1.0, float(np.max(np.abs(matrix)))):
        raise ValueError(f"covariance is not symmetric (max asymmetry {asym:.3g})")
    matrix = 0.5 * (matrix + matrix.T)
    if np.any(np.diag(matrix) <= 0):
        raise NotPositiveDefiniteError("covariance has a nonpositive diagonal entry")
    factor, jitter = _cholesky(matrix)
    matrix.setflags(write=False)
    factor.setflags(write=False)
    info = dict(meta or {})
    info["jitter"] = jitter
    return CovarianceModel(matrix, factor, MappingProxyType(info))


def build_temporal_model(h, n: int, params: PhysicalParams | None = None) -> CovarianceModel:
    """Covariance of the ``n`` temporal increments of ``u^{c,Σ}(·, x)`` on ``[0, 1]``."""
    hp = as_hurst(h)
    params = params or PhysicalParams()
    if n < 1:
        raise ValueError("grid size must be positive")
    matrix = params.scale * temporal_increment_matrix(hp, n)
    meta = {"kind": "temporal", "h": hp.h, "n": n, "c": params.c, "sigma_vol": params.sigma_vol}
    return build_model(matrix, meta)


def _cell_corners(grid: RectGrid):
    """Node indices and signs of the four corners of every cell (space-major)."""
    m = grid.m
    i, j = np.divmod(np.arange(grid.n * m), m)
    node = lambda a, b: a * (m + 1) + b  # noqa: E731
    return [
        (node(i + 1, j + 1), 1.0),
        (node(i + 1, j), -1.0),
        (node(i, j + 1), -1.0),
        (node(i, j), 1.0),
    ]


def rect_difference_operator(grid: RectGrid) -> np.ndarray:
    """Dense matrix mapping field values on the ``(n+1) x (m+1)`` nodes to cell increments.

    Nodes are space-major (``a * (m+1) + b``); cells are space-major too.
    """
    ops = np.zeros((grid.n * grid.m, (grid.n + 1) * (grid.m + 1)))
    rows = np.arange(grid.n * grid.m)
    for nodes, sign in _cell_corners(grid):
        ops[rows, nodes] += sign
    return ops


def rect_covariance_matrix(grid: RectGrid, params: PhysicalParams | None = None) -> np.ndarray:
    """Exact rectangular-increment covariance on any grid (``H = 1/2``)."""
    params = params or PhysicalParams()
    c = abs(params.c)
    a, b = np.divmod(np.arange((grid.n + 1) * (grid.m + 1)), grid.m + 1)
    x = a * grid.dx / c
    t = b * grid.dt
    levels = _field_cov_white(t[:, None], x[:, None], t[None, :], x[None, :])
    corners = _cell_corners(grid)
    out = np.zeros((grid.size, grid.size))
    for rows, sr in corners:
        sub = levels[rows]
        for cols, sc in corners:
            out += (sr * sc) * sub[:, cols]
    return params.scale * out


def build_rect_model(grid: RectGrid, params: PhysicalParams | None = None) -> CovarianceModel:
    """Covariance of the ``n * m`` rectangular increments of the ``H = 1/2`` field.

    Raises
    ------
    GridConstraintError
        If ``2 * dt * m >= dx / c``.
    """
    params = params or PhysicalParams()
    grid.check(params.c)
    matrix = rect_covariance_matrix(grid, params)
    meta = {
        "kind": "rectangular", "h": 0.5, "n": grid.n, "m": grid.m, "alpha": grid.alpha,
        "c": params.c, "sigma_vol": params.sigma_vol,
    }
    return build_model(matrix, meta)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replication_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master seed must be a 64-bit unsigned integer")
        if self.replication_index < 0:
            raise ValueError("replication index must be nonnegative")


def replication_rng(master_seed: int, replication_index: int) -> np.random.Generator:
    """Counter-based stream for one replication, independent of scheduling."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(replication_index,))
    return np.random.Generator(np.random.Philox(seq))


def standard_normals(dim: int, reps: int, seed: SeedSpec) -> np.ndarray:
    z = np.empty((reps, dim))
    for r in range(reps):
        z[r] = replication_rng(seed.master_seed, seed.replication_index + r).standard_normal(dim)
    return z


def sample_increments(model: CovarianceModel, reps: int, seed: SeedSpec | int) -> np.ndarray:
    """Draw ``reps`` increment vectors, one per row.

    Row ``r`` uses the stream of replication ``seed.replication_index + r``,
    so a block of replications sampled on its own equals the corresponding
    rows of a larger call.
    """
    if isinstance(seed, int):
        seed = SeedSpec(seed)
    if reps < 0:
        raise ValueError("reps must be nonnegative")
    z = standard_normals(model.dim, reps, seed)
    out = np.empty_like(z)
    # Row-by-row products keep each replication's arithmetic independent of batch size.
    for r in range(reps):
        out[r] = model.factor @ z[r]
    return out


def _matrix_of(model_or_matrix) -> np.ndarray:
    if isinstance(model_or_matrix, CovarianceModel):
        return model_or_matrix.matrix
    return np.asarray(model_or_matrix, dtype=float)


def wick_second_moment(model, norm: float = 1.0) -> float:
    """Exact ``E[V^2] = (2 / norm^2) sum_ij C_ij^2`` for ``V = sum(X_i^2 - C_ii) / norm``."""
    c = _matrix_of(model)
    return 2.0 * float(np.sum(c * c)) / norm ** 2


def trace_power(model, m: int) -> float:
    """``tr(C^m)`` by repeated symmetric multiplication."""
    c = _matrix_of(model)
    if m < 1:
        raise ValueError("power must be positive")
    if m == 1:
        return float(np.trace(c))
    half = m // 2
    p = c
    for _ in range(half - 1):
        p = p @ c
    # tr(C^m) = <C^a, C^b> with a + b = m avoids one extra product.
    if m % 2 == 0:
        return float(np.sum(p * p))
    return float(np.sum((p @ c) * p))


def quadratic_form_cumulant(model, m: int, norm: float = 1.0) -> float:
    """Exact ``m``-th cumulant of ``V = sum(X_i^2 - C_ii) / norm``."""
    if m < 2:
        raise ValueError("cumulant order must be at least 2")
    return 2.0 ** (m - 1) * math.factorial(m - 1) * trace_power(model, m) / norm ** m


def dump_model(model: CovarianceModel, path) -> None:
    """Write a model as ``magic | version | dim | meta length | matrix | factor | meta``.

    Integers are little-endian unsigned 64-bit; arrays are row-major float64;
    the metadata block is UTF-8 JSON.
    """
    meta = json.dumps(dict(model.meta), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<QQQ", MODEL_FORMAT_VERSION, model.dim, len(meta)))
    buf.write(np.ascontiguousarray(model.matrix, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(model.factor, dtype="<f8").tobytes())
    buf.write(meta)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> CovarianceModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError("not a covariance model file")
    version, dim, meta_len = struct.unpack_from("<QQQ", raw, 4)
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    off = 4 + 24
    size = dim * dim * 8
    matrix = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=off).reshape(dim, dim).copy()
    factor = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=off + size).reshape(dim, dim).copy()
    meta = json.loads(raw[off + 2 * size: off + 2 * size + meta_len].decode("utf-8"))
    matrix.setflags(write=False)
    factor.setflags(write=False)
    return CovarianceModel(matrix, factor, MappingProxyType(meta))

