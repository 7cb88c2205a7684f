"""Replication harness for the temporal and rectangular variation experiments.

Replications are processed in fixed-size chunks.  Each replication draws from
its own counter-based stream, and chunk boundaries do not depend on the worker
count, so reports are identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .kernels import PhysicalParams, RectGrid, as_hurst
from .sampler import (
    CovarianceModel,
    SeedSpec,
    build_rect_model,
    build_temporal_model,
    quadratic_form_cumulant,
    sample_increments,
)
from .variations import variation_batch

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "REPORT_SCHEMA",
    "RunningMoments",
    "run_experiment",
    "build_experiment_model",
    "ks_statistic",
    "ks_critical_1pct",
    "empirical_cumulants",
    "skewness_se",
    "kstat_variance",
    "fd_histogram",
    "write_report",
]

REPORT_SCHEMA = "fracwave.report/1"
CHUNK = 64


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "temporal"
    h: float = 0.65
    n: int = 1000
    m: int = 0
    alpha: float = 0.0
    c: float = 1.0
    sigma_vol: float = 1.0
    reps: int = 500
    master_seed: int = 0
    max_cumulant: int = 4

    def __post_init__(self):
        if self.kind not in ("temporal", "rectangular"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 2 <= self.max_cumulant <= 4:
            raise ValueError("max_cumulant must be in 2..4")
        as_hurst(self.h)
        PhysicalParams(self.c, self.sigma_vol)
        if self.kind == "rectangular":
            if self.h != 0.5:
                raise ValueError("rectangular experiments require h = 0.5")
            RectGrid(self.n, self.m, self.alpha).check(self.c)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(kinds)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        out = {}
        for key, value in data.items():
            target = type(getattr(defaults, key))
            out[key] = value if target is str else target(value)
        return cls(**out)

    def to_mapping(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def grid(self) -> RectGrid:
        return RectGrid(self.n, self.m, self.alpha)


class RunningMoments:
    """One-pass central moments up to order four (Welford / Terriberry updates)."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.m3 = 0.0
        self.m4 = 0.0

    def push(self, x: float) -> None:
        n1 = self.count
        self.count += 1
        n = self.count
        delta = x - self.mean
        dn = delta / n
        dn2 = dn * dn
        term1 = delta * dn * n1
        self.mean += dn
        self.m4 += term1 * dn2 * (n * n - 3 * n + 3) + 6 * dn2 * self.m2 - 4 * dn * self.m3
        self.m3 += term1 * dn * (n - 2) - 3 * dn * self.m2
        self.m2 += term1

    def extend(self, xs) -> None:
        for x in xs:
            self.push(float(x))

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def skewness(self) -> float:
        if self.m2 == 0:
            return 0.0
        return math.sqrt(self.count) * self.m3 / self.m2 ** 1.5

    @property
    def kurtosis(self) -> float:
        """Excess kurtosis (population form)."""
        if self.m2 == 0:
            return 0.0
        return self.count * self.m4 / (self.m2 * self.m2) - 3.0

    def summary(self) -> dict[str, float]:
        return {
            "count": self.count,
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
        }


def ks_statistic(samples) -> float:
    """Sup distance between the empirical CDF of ``samples`` and the standard normal CDF."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    cdf = ndtr(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def ks_critical_1pct(n: int) -> float:
    """Asymptotic 1% critical value ``1.63 / sqrt(n)`` of the one-sample KS distance."""
    return 1.63 / math.sqrt(n)


def empirical_cumulants(samples, max_order: int = 4) -> list[float]:
    """Unbiased k-statistics ``[k_2, ..., k_max_order]``."""
    x = np.asarray(samples, dtype=float).ravel()
    if not 2 <= max_order <= 4:
        raise ValueError("max_order must be in 2..4")
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    if np.all(x == x[0]):
        return [0.0] * (max_order - 1)
    return [float(stats.kstat(x, k)) for k in range(2, max_order + 1)]


def kstat_variance(kappa: Mapping[int, float], order: int, n: int) -> float:
    """Leading-order sampling variance of the k-statistic ``k_order`` from the true cumulants.

    ``kappa`` maps order to cumulant and must cover ``2 * order``.
    """
    k = {r: float(kappa.get(r, 0.0)) for r in range(1, 2 * order + 1)}
    if order == 2:
        v = k[4] + 2 * k[2] ** 2
    elif order == 3:
        v = k[6] + 9 * k[4] * k[2] + 9 * k[3] ** 2 + 6 * k[2] ** 3
    elif order == 4:
        v = (k[8] + 16 * k[6] * k[2] + 48 * k[5] * k[3] + 34 * k[4] ** 2
             + 72 * k[4] * k[2] ** 2 + 144 * k[3] ** 2 * k[2] + 24 * k[2] ** 4)
    else:
        raise ValueError("order must be 2, 3 or 4")
    return v / n


def skewness_se(n: int) -> float:
    """Standard error of the sample skewness of ``n`` normal draws."""
    return math.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3)))


def fd_histogram(samples) -> dict[str, list]:
    """Freedman–Diaconis histogram; pure function of the samples."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins="fd")
    return {"counts": counts.tolist(), "edges": edges.tolist()}


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    records: dict[str, list[float]]
    summaries: dict[str, dict[str, float]]
    cumulants: dict[str, list[float]]
    ks: dict[str, float]
    histograms: dict[str, dict[str, list]]
    oracle: dict[str, Any]
    checks: dict[str, Any]
    model_meta: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        """Deterministic content; wall time is excluded."""
        out = asdict(self)
        out.pop("wall_time")
        out["schema"] = REPORT_SCHEMA
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.records[name])


def build_experiment_model(config: ExperimentConfig) -> CovarianceModel:
    params = PhysicalParams(config.c, config.sigma_vol)
    if config.kind == "temporal":
        return build_temporal_model(config.h, config.n, params)
    return build_rect_model(config.grid, params)


def _chunk_records(model, config, start, size):
    samples = sample_increments(model, size, SeedSpec(config.master_seed, start))
    stats_ = variation_batch(samples, model)
    s = stats_["s_raw"]
    rec = {"replication": np.arange(start, start + size, dtype=float)}
    rec.update(stats_)
    if config.kind == "temporal":
        n = config.n
        rec["h_hat"] = -(math.log(4.0) + np.log(s)) / (2.0 * math.log(n))
        rec["c_hat"] = 1.0 / (4.0 * s * float(n) ** (2.0 * config.h))
    else:
        rec["c_tilde"] = 1.0 / (8.0 * float(config.m) ** (2.0 * config.alpha - 1.0) * s)
    return rec


def run_experiment(config: ExperimentConfig, jobs: int = 1, model: CovarianceModel | None = None) -> ExperimentReport:
    """Sample, compute variations and estimators, and summarize.

    Parameters
    ----------
    config : ExperimentConfig
    jobs : int
        Worker threads.  Output does not depend on it.
    model : CovarianceModel, optional
        Prebuilt model for ``config``; built (one factorization) if omitted.
    """
    t0 = time.perf_counter()
    model = model if model is not None else build_experiment_model(config)
    starts = list(range(0, config.reps, CHUNK))
    sizes = [min(CHUNK, config.reps - s) for s in starts]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        chunks = list(pool.map(lambda a: _chunk_records(model, config, *a), zip(starts, sizes)))
    names = list(chunks[0])
    columns = {k: np.concatenate([c[k] for c in chunks]) for k in names}
    if not all(np.all(np.isfinite(v)) for v in columns.values()):
        raise FloatingPointError("nonfinite statistic in replication output")

    stat_names = [k for k in names if k != "replication"]
    summaries, cumulants, hists = {}, {}, {}
    for k in stat_names:
        acc = RunningMoments()
        acc.extend(columns[k])
        summaries[k] = acc.summary()
        if config.reps >= 10:
            cumulants[k] = empirical_cumulants(columns[k], config.max_cumulant)
        hists[k] = fd_histogram(columns[k])
    ks = {k: ks_statistic(columns[k]) for k in ("f_standardized", "f_asymptotic") if k in columns}
    for k in ("h_hat", "c_hat", "c_tilde"):
        if k in columns and summaries[k]["variance"] > 0:
            z = (columns[k] - summaries[k]["mean"]) / math.sqrt(summaries[k]["variance"])
            ks[f"{k}_fitted_normal"] = ks_statistic(z)

    dim = model.dim
    exact = {m: quadratic_form_cumulant(model, m, norm=dim) for m in range(2, 5)}
    oracle = {
        "mean_s": model.trace / dim,
        "v_second_moment": exact[2],
        "v_cumulants": [exact[2], exact[3], exact[4]],
        "f_standardized_cumulants": [1.0, exact[3] / exact[2] ** 1.5, exact[4] / exact[2] ** 2],
    }
    reps = config.reps
    var_v = summaries["v_centered"]["variance"]
    se_var = math.sqrt(exact[4] / reps + 2.0 * exact[2] ** 2 / max(reps - 1, 1))
    checks = {
        "variance_oracle_z": (var_v - exact[2]) / se_var,
        "variance_oracle_ok": abs(var_v - exact[2]) <= 4.0 * se_var,
        "ks_critical_1pct": ks_critical_1pct(reps),
        "skewness_se": skewness_se(reps) if reps > 2 else float("nan"),
    }
    return ExperimentReport(
        config=config.to_mapping(),
        records={k: columns[k].tolist() for k in names},
        summaries=summaries,
        cumulants=cumulants,
        ks=ks,
        histograms=hists,
        oracle=oracle,
        checks=checks,
        model_meta=dict(model.meta),
        wall_time=time.perf_counter() - t0,
    )


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write ``report.json``, ``replications.csv`` and ``histograms.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "replications": out / "replications.csv",
        "histograms": out / "histograms.csv",
    }
    paths["report"].write_text(report.to_json() + "\n", encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(report.records)
    writer.writerow(names)
    for row in zip(*(report.records[k] for k in names)):
        writer.writerow([str(int(row[0]))] + [_fmt(v) for v in row[1:]])
    paths["replications"].write_text(buf.getvalue(), encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["statistic", "bin", "left", "right", "count"])
    for stat, hist in report.histograms.items():
        edges = hist["edges"]
        for b, count in enumerate(hist["counts"]):
            writer.writerow([stat, b, _fmt(edges[b]), _fmt(edges[b + 1]), count])
    paths["histograms"].write_text(buf.getvalue(), encoding="utf-8")
    return paths
