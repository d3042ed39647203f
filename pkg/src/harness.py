"""
Monte Carlo experiment drivers.

Each experiment expands its config into sweep cells, runs ``trials`` seeded
jobs per cell (seed = base_seed + t, shared across cells) on the trial pool,
and aggregates the per-trial records in (cell, seed) order. Summaries are a
pure function of (config, per_trial), so a report can be re-aggregated and
checked independently of how its trials were scheduled.

Kinds:
    BbpDense / BbpSparse   top eigenvalues against d + 1/d or the edge 2
    CltHistogram           L_gamma against Normal(m_K, V_0), plus kappa'
    ErrorCurve             LSS test error rates against the erfc limit
    SparseClt / SparseMean sparse-regime scale and location of L_M(f)
    LocalLawProbe          resolvent deviations from m_sc
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.stats
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .chebstats import clt_mean_variance, sparse_prediction
from .config import config as settings
from .detect import (
    TestConfig,
    closed_form_moments,
    compute_statistic,
    critical_value,
    kappa_prime,
    mean_shift,
    theoretical_error,
)
from .errors import ConfigError, ConvergenceFailure, DegenerateSpectrum, SbmSpectraError, SingularShift
from .formats import dump_json, records_frame, write_frame_csv, write_text
from .function_registry import resolve
from .metrics import MetricsCollector, metrics
from .model import (
    SEED_MAX,
    DeformationSpec,
    SbmParams,
    build_spike,
    deform,
    rank_params,
    rescale,
    sample_adjacency,
    sample_cgsbm,
    solve_probs,
)
from .spectral import (
    count_outliers,
    eigenvalues,
    lss,
    m_sc,
    predicted_outliers,
    resolvent_probe,
    semicircle_integral,
    top_eigenvalues,
)
from .trial_runner import TrialJob, TrialResult, TrialRunner, plan_width

logger = structlog.get_logger()


class ExperimentKind(str, Enum):
    BBP_DENSE = "BbpDense"
    BBP_SPARSE = "BbpSparse"
    CLT_HISTOGRAM = "CltHistogram"
    ERROR_CURVE = "ErrorCurve"
    SPARSE_CLT = "SparseClt"
    SPARSE_MEAN = "SparseMean"
    LOCAL_LAW_PROBE = "LocalLawProbe"


BBP_KINDS = (ExperimentKind.BBP_DENSE, ExperimentKind.BBP_SPARSE)
SPARSE_KINDS = (ExperimentKind.SPARSE_CLT, ExperimentKind.SPARSE_MEAN)


# ============================================================================
# Config schema
# ============================================================================


class ModelSpec(BaseModel):
    """
    Base model of an experiment.

    Density comes from exactly one of p_a, phi (p_a = n^(2 phi - 1)) or an
    explicit (p_s, p_d) pair; gamma is the signal strength used when a cell
    does not override it.
    """

    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    k: int = Field(default=1, ge=1)
    p_a: Optional[float] = None
    phi: Optional[float] = None
    p_s: Optional[float] = None
    p_d: Optional[float] = None
    gamma: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _one_density(self) -> "ModelSpec":
        explicit = self.p_s is not None and self.p_d is not None
        given = [self.p_a is not None, self.phi is not None, explicit]
        if sum(given) != 1:
            raise ValueError("model needs exactly one of p_a, phi or (p_s, p_d)")
        return self

    @property
    def density(self) -> float:
        if self.phi is not None:
            return float(self.n) ** (2.0 * self.phi - 1.0)
        if self.p_a is not None:
            return self.p_a
        return (self.p_s + (self.k - 1) * self.p_d) / self.k

    def params(self, k: Optional[int] = None, gamma: Optional[float] = None) -> SbmParams:
        k = self.k if k is None else k
        gamma = self.gamma if gamma is None else gamma
        if self.p_s is not None and k == self.k and gamma == self.gamma:
            return SbmParams.create(self.n, k, self.p_s, self.p_d)
        p_a = self.density
        if k == 1 or gamma == 0.0:
            return SbmParams.create(self.n, k, p_a, p_a)
        p_s, p_d = solve_probs(self.n, k, p_a, gamma)
        return SbmParams.create(self.n, k, p_s, p_d)


class Tolerances(BaseModel):
    """Acceptance tolerances; the verdict is the conjunction of all checks."""

    model_config = ConfigDict(extra="forbid")

    lambda1: float = 0.05
    outlier_fraction: float = 0.9
    mean_se: float = 3.0
    variance_rel: float = 0.15
    ks: float = 0.05
    ks_alpha: float = Field(default=0.01, gt=0.0, lt=1.0)
    shift_rel: float = 0.15
    error_abs: float = 0.05
    sparse_mean_rel: float = 0.2
    sparse_mean_factor: float = 5.0
    local_law_constant: float = settings.LOCAL_LAW_CONSTANT


class ExperimentConfig(BaseModel):
    """
    One experiment. ``grid`` meaning depends on ``kind``:

        BbpDense / BbpSparse   signal strengths gamma (or d with spike_rank)
        CltHistogram           spike counts K
        ErrorCurve             gamma values (``grid_scale`` gamma_squared allowed)
        SparseClt / SparseMean community counts
        LocalLawProbe          unused
    """

    model_config = ConfigDict(extra="forbid")

    kind: ExperimentKind
    base_seed: int = Field(ge=0, le=SEED_MAX)
    trials: int = Field(default=settings.DEFAULT_TRIALS, ge=1)
    model: ModelSpec
    grid: Optional[List[float]] = None
    grid_scale: Literal["gamma", "gamma_squared"] = "gamma"
    f_name: Optional[str] = None
    k1: int = Field(default=0, ge=0)
    k2_grid: List[int] = Field(default_factory=lambda: [1])
    spike_rank: Optional[int] = Field(default=None, ge=1)
    top: Optional[int] = Field(default=None, ge=1)
    threshold: float = settings.OUTLIER_THRESHOLD
    z_points: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(2.5, 0.0), (3.0, 0.0), (2.0, 0.5)]
    )
    threads: Optional[int] = Field(default=None, ge=1)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @model_validator(mode="after")
    def _check_kind(self) -> "ExperimentConfig":
        if self.base_seed + self.trials - 1 > SEED_MAX:
            raise ValueError("base_seed + trials exceeds the 64-bit seed range")
        if self.grid is not None and not self.grid:
            raise ValueError("grid must not be empty")

        kind = self.kind
        if kind in BBP_KINDS:
            if any(g <= 0.0 for g in self.gammas()):
                raise ValueError("BBP grid values must be positive")
            if kind == ExperimentKind.BBP_SPARSE and self.model.phi is None:
                raise ValueError("BbpSparse needs model.phi")
        elif kind == ExperimentKind.CLT_HISTOGRAM:
            if any(v < 0 or v != int(v) for v in self.grid or []):
                raise ValueError("CltHistogram grid holds non-negative spike counts")
            if not 0.0 <= self.model.gamma < 1.0:
                raise ValueError("CltHistogram needs 0 <= gamma < 1")
        elif kind == ExperimentKind.ERROR_CURVE:
            if any(not 0.0 < g < 1.0 for g in self.gammas()):
                raise ValueError("ErrorCurve gamma values must lie in (0, 1)")
            if any(k2 <= self.k1 for k2 in self.k2_grid):
                raise ValueError("every k2 must exceed k1")
            if self.trials < 2:
                raise ValueError("ErrorCurve needs at least two trials")
        elif kind in SPARSE_KINDS:
            if self.model.phi is None or not 1.0 / 6.0 < self.model.phi < 0.5:
                raise ValueError("sparse experiments need 1/6 < model.phi < 1/2")
            if any(v < 1 or v != int(v) for v in self.grid or []):
                raise ValueError("sparse grid holds community counts >= 1")
        elif kind == ExperimentKind.LOCAL_LAW_PROBE:
            if any(im == 0.0 and abs(re) <= 2.0 for re, im in self.z_points):
                raise ValueError("probe points must lie off [-2, 2]")
        return self

    def gammas(self) -> List[float]:
        values = self.grid if self.grid is not None else [self.model.gamma]
        if self.grid_scale == "gamma_squared":
            return [math.sqrt(max(v, 0.0)) for v in values]
        return list(values)

    def int_grid(self, default: int) -> List[int]:
        return [int(v) for v in self.grid] if self.grid is not None else [default]

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def load_config(source: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    """Parse an experiment config from a JSON file, JSON text or mapping."""
    try:
        if isinstance(source, dict):
            return ExperimentConfig.model_validate(source)
        if isinstance(source, str) and source.lstrip().startswith("{"):
            return ExperimentConfig.model_validate_json(source)
        text = Path(source).read_text(encoding="utf-8")
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError("Invalid experiment config", errors=exc.errors(include_url=False))
    except OSError as exc:
        raise ConfigError("Cannot read experiment config", path=str(source), reason=str(exc))


# ============================================================================
# Report
# ============================================================================


@dataclass
class ExperimentReport:
    """Per-trial records, their aggregation, the predictions and the verdict."""
    kind: ExperimentKind
    config: ExperimentConfig
    cells: List[Dict[str, Any]]
    per_trial: List[Dict[str, Any]]
    summary: Dict[str, Any]
    prediction: Dict[str, Any]
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def trials_planned(self) -> int:
        return len(self.per_trial)

    @property
    def trials_excluded(self) -> int:
        return sum(1 for r in self.per_trial if r["status"] != "ok")

    @property
    def trials_reported(self) -> int:
        return self.trials_planned - self.trials_excluded

    @property
    def excluded_by_error(self) -> Dict[str, int]:
        counts = Counter(r["error"] for r in self.per_trial if r["status"] != "ok")
        return dict(sorted(counts.items()))

    @property
    def verdict(self) -> str:
        return "pass" if all(self.checks.values()) else "fail"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": settings.SCHEMA_VERSION,
            "version": settings.APP_VERSION,
            "kind": self.kind.value,
            "config": self.config.resolved(),
            "trials": {
                "planned": self.trials_planned,
                "reported": self.trials_reported,
                "excluded": self.trials_excluded,
                "excluded_by_error": self.excluded_by_error,
            },
            "cells": self.cells,
            "prediction": self.prediction,
            "summary": self.summary,
            "checks": self.checks,
            "verdict": self.verdict,
            "per_trial": self.per_trial,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict(), versioned=True)

    def per_trial_frame(self) -> pd.DataFrame:
        return records_frame(self.per_trial)

    def histogram_frame(self) -> Optional[pd.DataFrame]:
        rows = []
        for cell in self.summary.get("cells", []):
            histogram = cell.get("histogram")
            if not histogram:
                continue
            edges = histogram["edges"]
            for i, count in enumerate(histogram["counts"]):
                rows.append(
                    {"cell": cell["cell"], "left": edges[i], "right": edges[i + 1], "count": count}
                )
        return pd.DataFrame(rows) if rows else None


def write_report(report: ExperimentReport, out: Union[str, Path]) -> List[Path]:
    """Write <out>.json, <out>.csv and, for histograms, <out>_hist.csv."""
    base = Path(out)
    if base.suffix == ".json":
        base = base.with_suffix("")
    written = [write_text(base.with_suffix(".json"), report.to_json())]

    csv_path = base.with_suffix(".csv")
    write_frame_csv(report.per_trial_frame(), csv_path)
    written.append(csv_path)

    histogram = report.histogram_frame()
    if histogram is not None:
        hist_path = base.parent / f"{base.name}_hist.csv"
        write_frame_csv(histogram, hist_path)
        written.append(hist_path)

    logger.info("Report written", kind=report.kind.value, files=[str(p) for p in written])
    return written


# ============================================================================
# Shared plumbing
# ============================================================================


@dataclass(frozen=True)
class Cell:
    index: int
    label: Dict[str, Any]
    params: SbmParams
    payload: Any = None


TrialFn = Callable[[Cell, int], Dict[str, Any]]


def _record(result: TrialResult) -> Dict[str, Any]:
    record = {
        "cell": result.cell,
        "seed": result.seed,
        "status": result.status.value,
        "error": result.error,
    }
    record.update(result.values)
    return record


def _collect(
    cfg: ExperimentConfig,
    cells: List[Cell],
    trial_fn: TrialFn,
    trials_per_cell: int,
    excludable: Tuple[type, ...],
    width: Optional[int],
    verbose: bool,
    collector: MetricsCollector,
) -> List[Dict[str, Any]]:
    jobs = [
        TrialJob(cell.index, cfg.base_seed + t, partial(trial_fn, cell))
        for cell in cells
        for t in range(trials_per_cell)
    ]
    n = max(cell.params.n for cell in cells)
    pool = width or plan_width(n, cfg.threads)
    runner = TrialRunner(
        cfg.kind.value, width=pool, excludable=excludable, verbose=verbose, collector=collector
    )
    return [_record(r) for r in runner.run(jobs)]


def _values(per_trial: List[Dict[str, Any]], cell: int, key: str) -> np.ndarray:
    return np.asarray(
        [r[key] for r in per_trial if r["cell"] == cell and r["status"] == "ok"],
        dtype=np.float64,
    )


def _excluded(per_trial: List[Dict[str, Any]], cell: int) -> int:
    return sum(1 for r in per_trial if r["cell"] == cell and r["status"] != "ok")


def _describe(values: np.ndarray) -> Dict[str, Any]:
    if values.size == 0:
        return {"count": 0, "mean": None, "variance": None, "quantiles": {}}
    quantiles = np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "count": int(values.size),
        "mean": float(np.mean(values)),
        "variance": float(np.var(values, ddof=1)) if values.size > 1 else 0.0,
        "quantiles": {
            "q05": float(quantiles[0]),
            "q25": float(quantiles[1]),
            "q50": float(quantiles[2]),
            "q75": float(quantiles[3]),
            "q95": float(quantiles[4]),
        },
    }


def _ks(values: np.ndarray, mean: float, sd: float) -> Optional[float]:
    """One-sample KS distance to Normal(mean, sd^2) with fixed parameters."""
    if values.size == 0 or not sd > 0.0:
        return None
    return float(scipy.stats.kstest(values, "norm", args=(mean, sd)).statistic)


def _ks_bound(tol: "Tolerances", count: int) -> float:
    """``tol.ks``, widened to the KS critical value at ``ks_alpha`` for small samples."""
    return max(tol.ks, float(scipy.stats.kstwo.ppf(1.0 - tol.ks_alpha, count)))


def _variance_bound(tol: "Tolerances", count: int) -> float:
    """Relative variance tolerance; a normal sample variance has relative sd sqrt(2/(n-1))."""
    return max(tol.variance_rel, tol.mean_se * math.sqrt(2.0 / (count - 1)))


def _histogram(values: np.ndarray, mean: float, sd: float) -> Dict[str, Any]:
    half_width = settings.HIST_HALF_WIDTH_SD * sd if sd > 0.0 else 1.0
    edges = np.linspace(mean - half_width, mean + half_width, settings.HIST_BINS + 1)
    counts, _ = np.histogram(values, bins=edges)
    return {"edges": edges.tolist(), "counts": counts.astype(int).tolist()}


def _matrix(params: SbmParams, seed: int):
    return rescale(sample_adjacency(params, seed), params)


# ============================================================================
# BBP
# ============================================================================


def _bbp_cells(cfg: ExperimentConfig) -> List[Cell]:
    cells = []
    for index, g in enumerate(cfg.gammas()):
        if cfg.spike_rank:
            params = cfg.model.params()
            spec = DeformationSpec.constant(g, cfg.spike_rank)
            basis = build_spike(params.n, max(params.k, cfg.spike_rank + 1)).select(cfg.spike_rank)
            payload = (spec, basis)
        else:
            params = cfg.model.params(gamma=g)
            spec = DeformationSpec.constant(g, params.k - 1)
            payload = (spec, None)
        cells.append(Cell(index, {"gamma": g}, params, payload))
    return cells


def _bbp_top(cfg: ExperimentConfig, spec: DeformationSpec) -> int:
    return cfg.top or spec.k + 4


def _bbp_trial(cfg: ExperimentConfig, cell: Cell, seed: int) -> Dict[str, Any]:
    spec, basis = cell.payload
    if basis is None:
        m = _matrix(cell.params, seed)
    else:
        m = deform(sample_cgsbm(cell.params, seed), basis, spec)
    top = top_eigenvalues(m, _bbp_top(cfg, spec))
    record: Dict[str, Any] = {f"lambda_{i + 1}": float(v) for i, v in enumerate(top.values)}
    record["outliers"] = count_outliers(top, cfg.threshold)
    return record


def summarize_bbp(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    tol = cfg.tolerances
    summary_cells, prediction_cells, checks = [], [], {}
    for cell in _bbp_cells(cfg):
        spec, _ = cell.payload
        top = _bbp_top(cfg, spec)
        predicted = (predicted_outliers(spec) + [2.0] * top)[:top]
        expected = sum(1 for v in predicted_outliers(spec) if v > cfg.threshold)

        medians = []
        for i in range(top):
            values = _values(per_trial, cell.index, f"lambda_{i + 1}")
            medians.append(float(np.median(values)) if values.size else None)
        outliers = _values(per_trial, cell.index, "outliers")
        hit_rate = float(np.mean(outliers == expected)) if outliers.size else 0.0

        summary_cells.append(
            {
                "cell": cell.index,
                "gamma": cell.label["gamma"],
                "count": int(outliers.size),
                "excluded": _excluded(per_trial, cell.index),
                "median": medians,
                "gap": [
                    None if m is None else m - p for m, p in zip(medians, predicted)
                ],
                "outlier_hit_rate": hit_rate,
            }
        )
        prediction_cells.append(
            {
                "cell": cell.index,
                "d": list(spec.d),
                "eigenvalues": predicted,
                "outliers": expected,
            }
        )
        lead = medians[0]
        checks[f"lambda1_cell{cell.index}"] = (
            lead is not None and abs(lead - predicted[0]) <= tol.lambda1
        )
        checks[f"outliers_cell{cell.index}"] = hit_rate >= tol.outlier_fraction
    return {"cells": summary_cells}, {"cells": prediction_cells}, checks


# ============================================================================
# CLT histogram and rank estimation
# ============================================================================


def _clt_cells(cfg: ExperimentConfig) -> List[Cell]:
    p_a = cfg.model.density
    return [
        Cell(index, {"k": k}, rank_params(cfg.model.n, k, p_a, cfg.model.gamma))
        for index, k in enumerate(cfg.int_grid(0))
    ]


def _clt_trial(cfg: ExperimentConfig, cell: Cell, seed: int) -> Dict[str, Any]:
    gamma = cfg.model.gamma
    p = cfg.model.density
    statistic = compute_statistic(_matrix(cell.params, seed), gamma, p)
    record: Dict[str, Any] = {"statistic": statistic}
    if gamma > 0.0:
        record["kappa_prime"], record["k_hat"] = kappa_prime(statistic, gamma, p)
    return record


def summarize_clt(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    tol = cfg.tolerances
    gamma, p = cfg.model.gamma, cfg.model.density
    delta = mean_shift(gamma, p)
    summary_cells, prediction_cells, checks = [], [], {}
    means, counts = [], []

    for cell in _clt_cells(cfg):
        k = cell.label["k"]
        predicted = closed_form_moments(k, gamma, p)
        values = _values(per_trial, cell.index, "statistic")
        stats = _describe(values)
        stats.update(
            cell=cell.index,
            k=k,
            excluded=_excluded(per_trial, cell.index),
            ks=_ks(values, predicted.mean, predicted.sd),
            histogram=_histogram(values, predicted.mean, predicted.sd),
        )
        if gamma > 0.0:
            k_hats = _values(per_trial, cell.index, "k_hat").astype(int)
            stats["modal_k_hat"] = int(np.argmax(np.bincount(k_hats))) if k_hats.size else None
            checks[f"k_hat_k{k}"] = stats["modal_k_hat"] == k
        summary_cells.append(stats)
        prediction_cells.append({"cell": cell.index, **predicted.to_dict()})
        means.append(stats["mean"])

        count = stats["count"]
        counts.append(count)
        if count:
            bound = tol.mean_se * math.sqrt(predicted.variance / count)
            checks[f"mean_k{k}"] = abs(stats["mean"] - predicted.mean) <= bound
            if count > 1:
                stats["variance_bound"] = _variance_bound(tol, count) * predicted.variance
                checks[f"variance_k{k}"] = (
                    abs(stats["variance"] - predicted.variance) <= stats["variance_bound"]
                )
            else:
                checks[f"variance_k{k}"] = False
            if stats["ks"] is not None:
                stats["ks_bound"] = _ks_bound(tol, count)
                checks[f"ks_k{k}"] = stats["ks"] <= stats["ks_bound"]
        else:
            checks[f"mean_k{k}"] = False

    ks_sorted = [cell.label["k"] for cell in _clt_cells(cfg)]
    differences, shift_bounds = [], []
    v_0 = closed_form_moments(0, gamma, p).variance
    for i in range(1, len(means)):
        if means[i] is None or means[i - 1] is None:
            continue
        gap = ks_sorted[i] - ks_sorted[i - 1]
        differences.append((means[i] - means[i - 1]) / gap)
        noise = tol.mean_se * math.sqrt(v_0 / counts[i] + v_0 / counts[i - 1]) / gap
        shift_bounds.append(max(tol.shift_rel * delta, noise))
    if differences:
        checks["means_increasing"] = all(d > 0.0 for d in differences)
        checks["shift_per_k"] = all(
            abs(d - delta) <= b for d, b in zip(differences, shift_bounds)
        )

    summary = {
        "cells": summary_cells,
        "mean_differences": differences,
        "shift_bounds": shift_bounds,
    }
    prediction = {"cells": prediction_cells, "delta": delta}
    return summary, prediction, checks


# ============================================================================
# Error curve
# ============================================================================


def _error_cells(cfg: ExperimentConfig) -> List[Cell]:
    p_a = cfg.model.density
    ks = [cfg.k1] + sorted(set(cfg.k2_grid))
    cells = []
    for g in cfg.gammas():
        for k in ks:
            params = rank_params(cfg.model.n, k, p_a, g)
            label = {"gamma": g, "gamma_squared": g * g, "k": k}
            cells.append(Cell(len(cells), label, params))
    return cells


def _error_trial(cfg: ExperimentConfig, cell: Cell, seed: int) -> Dict[str, Any]:
    statistic = compute_statistic(
        _matrix(cell.params, seed), cell.label["gamma"], cfg.model.density
    )
    return {"statistic": statistic}


def summarize_error_curve(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    tol = cfg.tolerances
    p = cfg.model.density
    cells = _error_cells(cfg)
    index = {(c.label["gamma"], c.label["k"]): c.index for c in cells}
    rows, checks = [], {}
    curves: Dict[int, Dict[float, Optional[float]]] = {}

    for k2 in sorted(set(cfg.k2_grid)):
        curve = []
        for g in cfg.gammas():
            test = TestConfig(k1=cfg.k1, k2=k2, gamma=g, p=p)
            m_c = critical_value(test)
            h1_cell, h2_cell = index[(g, cfg.k1)], index[(g, k2)]
            under_h1 = _values(per_trial, h1_cell, "statistic")
            under_h2 = _values(per_trial, h2_cell, "statistic")
            type1 = float(np.mean(under_h1 > m_c)) if under_h1.size else None
            type2 = float(np.mean(under_h2 <= m_c)) if under_h2.size else None
            empirical = None if type1 is None or type2 is None else type1 + type2
            theoretical = theoretical_error(test)
            rows.append(
                {
                    "gamma": g,
                    "gamma_squared": g * g,
                    "k1": cfg.k1,
                    "k2": k2,
                    "m_c": m_c,
                    "count_h1": int(under_h1.size),
                    "count_h2": int(under_h2.size),
                    "excluded_h1": _excluded(per_trial, h1_cell),
                    "excluded_h2": _excluded(per_trial, h2_cell),
                    "type1": type1,
                    "type2": type2,
                    "empirical": empirical,
                    "theoretical": theoretical,
                }
            )
            checks[f"error_k2_{k2}_g{g:.6g}"] = (
                empirical is not None and abs(empirical - theoretical) <= tol.error_abs
            )
            curve.append((g, empirical))
        curves[k2] = dict(curve)

        ordered = [e for _, e in sorted(curve)]
        if len(ordered) > 1 and None not in ordered:
            checks[f"monotone_k2_{k2}"] = all(b < a for a, b in zip(ordered, ordered[1:]))

    # Larger alternatives are easier to detect at every gamma.
    if len(curves) > 1:
        low, high = min(curves), max(curves)
        checks[f"curve_k2_{high}_below_k2_{low}"] = all(
            curves[high][g] is not None
            and curves[low][g] is not None
            and curves[high][g] <= curves[low][g]
            for g in cfg.gammas()
        )

    predictions = [
        {"gamma": r["gamma"], "k2": r["k2"], "theoretical": r["theoretical"], "m_c": r["m_c"]}
        for r in rows
    ]
    return {"curve": rows}, {"curve": predictions}, checks


# ============================================================================
# Sparse regime
# ============================================================================


def _sparse_cells(cfg: ExperimentConfig) -> List[Cell]:
    return [
        Cell(index, {"k": k}, cfg.model.params(k=k, gamma=cfg.model.gamma if k > 1 else 0.0))
        for index, k in enumerate(cfg.int_grid(cfg.model.k))
    ]


def _default_f(cfg: ExperimentConfig) -> str:
    if cfg.f_name:
        return cfg.f_name
    return "x2" if cfg.kind == ExperimentKind.SPARSE_CLT else "x4"


def _sparse_trial(cfg: ExperimentConfig, f, cell: Cell, seed: int) -> Dict[str, Any]:
    spectrum = eigenvalues(_matrix(cell.params, seed))
    return {"lss": lss(spectrum, f)}


def summarize_sparse(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    tol = cfg.tolerances
    f = resolve(_default_f(cfg))
    reference = semicircle_integral(f)
    summary_cells, prediction_cells, checks = [], [], {}

    for cell in _sparse_cells(cfg):
        params = cell.params
        n, q = params.n, params.q
        predicted = sparse_prediction(
            f, params, require_scale=cfg.kind == ExperimentKind.SPARSE_CLT
        )
        values = _values(per_trial, cell.index, "lss")
        stats: Dict[str, Any] = {
            "cell": cell.index,
            "k": cell.label["k"],
            "count": int(values.size),
            "excluded": _excluded(per_trial, cell.index),
            "lss_mean": float(np.mean(values)) if values.size else None,
        }
        prediction: Dict[str, Any] = {"cell": cell.index, **predicted.to_dict()}

        if cfg.kind == ExperimentKind.SPARSE_CLT:
            if values.size > 1:
                rescaled = (q / math.sqrt(2.0 * n)) * (values - np.mean(values)) / abs(predicted.tau2)
                stats["rescaled_sd"] = float(np.std(rescaled, ddof=1))
                stats["ks"] = _ks(rescaled, 0.0, 1.0)
            else:
                stats["rescaled_sd"], stats["ks"] = None, None
            checks[f"ks_cell{cell.index}"] = stats["ks"] is not None and stats["ks"] <= tol.ks
        else:
            centered = (q / math.sqrt(n)) * (values - n * reference)
            shift = float(np.mean(centered)) if values.size else None
            stats["shift"] = shift
            stats["shift_se"] = (
                float(np.std(centered, ddof=1) / math.sqrt(values.size)) if values.size > 1 else None
            )
            try:
                dense = clt_mean_variance(f, params.k - 1, min(params.gamma_n, 0.999), params.p_a)
                prediction["dense_reference"] = (q / math.sqrt(n)) * dense.mean
            except SbmSpectraError as exc:
                logger.warning("Dense reference unavailable", error=exc.name)
                prediction["dense_reference"] = None

            primary, alternative = predicted.mean_shift, predicted.mean_shift_alt
            if shift is not None:
                stats["closer"] = (
                    "mean_shift" if abs(shift - primary) <= abs(shift - alternative) else "mean_shift_alt"
                )
                stats["relative_error"] = abs(shift - primary) / abs(primary) if primary else None
                stats["alt_ratio"] = shift / alternative if alternative else None
                checks[f"shift_matches_cell{cell.index}"] = (
                    abs(shift - primary) <= tol.sparse_mean_rel * abs(primary)
                )
                factor = tol.sparse_mean_factor
                checks[f"alt_inconsistent_cell{cell.index}"] = (
                    alternative == 0.0
                    or abs(shift) > factor * abs(alternative)
                    or abs(shift) * factor < abs(alternative)
                )
            else:
                checks[f"shift_matches_cell{cell.index}"] = False

        summary_cells.append(stats)
        prediction_cells.append(prediction)

    summary = {"f": _default_f(cfg), "semicircle_integral": reference, "cells": summary_cells}
    return summary, {"cells": prediction_cells}, checks


# ============================================================================
# Local law probe
# ============================================================================


def _local_law_cells(cfg: ExperimentConfig) -> List[Cell]:
    return [Cell(0, {"k": cfg.model.k}, cfg.model.params())]


def _local_law_trial(cfg: ExperimentConfig, cell: Cell, seed: int) -> Dict[str, Any]:
    h = sample_cgsbm(cell.params, seed)
    spectrum = eigenvalues(h)
    record: Dict[str, Any] = {}
    for i, (re, im) in enumerate(cfg.z_points):
        z = complex(re, im)
        probe = resolvent_probe(h, z, spectrum=spectrum)
        reference = m_sc(z)
        record[f"m_dev_{i}"] = abs(probe.m_emp - reference)
        record[f"s_dev_{i}"] = abs(probe.s_emp - reference)
    return record


def summarize_local_law(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    tol = cfg.tolerances
    cell = _local_law_cells(cfg)[0]
    n, q = cell.params.n, cell.params.q
    m_bound = tol.local_law_constant / q**2
    s_bound = tol.local_law_constant * (math.sqrt(n) / q**4 + 1.0 / q)

    points, checks = [], {}
    for i, (re, im) in enumerate(cfg.z_points):
        m_dev = _values(per_trial, cell.index, f"m_dev_{i}")
        s_dev = _values(per_trial, cell.index, f"s_dev_{i}")
        m_p95 = float(np.percentile(m_dev, 95)) if m_dev.size else None
        s_p95 = float(np.percentile(s_dev, 95)) if s_dev.size else None
        points.append({"z_re": re, "z_im": im, "m_dev_p95": m_p95, "s_dev_p95": s_p95})
        checks[f"m_local_law_z{i}"] = m_p95 is not None and m_p95 <= m_bound
        checks[f"s_local_law_z{i}"] = s_p95 is not None and s_p95 <= s_bound

    summary = {
        "count": int(sum(1 for r in per_trial if r["status"] == "ok")),
        "excluded": _excluded(per_trial, cell.index),
        "points": points,
    }
    prediction = {
        "q": q,
        "m_bound": m_bound,
        "s_bound": s_bound,
        "m_sc": [m_sc(complex(re, im)) for re, im in cfg.z_points],
    }
    return summary, prediction, checks


# ============================================================================
# Drivers
# ============================================================================


def _cells_for(cfg: ExperimentConfig) -> List[Cell]:
    if cfg.kind in BBP_KINDS:
        return _bbp_cells(cfg)
    if cfg.kind == ExperimentKind.CLT_HISTOGRAM:
        return _clt_cells(cfg)
    if cfg.kind == ExperimentKind.ERROR_CURVE:
        return _error_cells(cfg)
    if cfg.kind in SPARSE_KINDS:
        return _sparse_cells(cfg)
    return _local_law_cells(cfg)


def _trials_per_cell(cfg: ExperimentConfig) -> int:
    return cfg.trials // 2 if cfg.kind == ExperimentKind.ERROR_CURVE else cfg.trials


def summarize(cfg: ExperimentConfig, per_trial: List[Dict[str, Any]]):
    """(summary, prediction, checks) recomputed from per-trial records."""
    if cfg.kind in BBP_KINDS:
        return summarize_bbp(cfg, per_trial)
    if cfg.kind == ExperimentKind.CLT_HISTOGRAM:
        return summarize_clt(cfg, per_trial)
    if cfg.kind == ExperimentKind.ERROR_CURVE:
        return summarize_error_curve(cfg, per_trial)
    if cfg.kind in SPARSE_KINDS:
        return summarize_sparse(cfg, per_trial)
    return summarize_local_law(cfg, per_trial)


def _run(
    cfg: ExperimentConfig,
    kinds: Tuple[ExperimentKind, ...],
    trial_fn: TrialFn,
    excludable: Tuple[type, ...],
    width: Optional[int],
    verbose: bool,
    collector: Optional[MetricsCollector],
) -> ExperimentReport:
    if cfg.kind not in kinds:
        raise ConfigError(
            "Experiment kind not handled by this driver",
            kind=cfg.kind.value,
            expected=[k.value for k in kinds],
        )
    collector = collector or metrics
    cells = _cells_for(cfg)
    logger.info(
        "Experiment started",
        kind=cfg.kind.value,
        cells=len(cells),
        trials_per_cell=_trials_per_cell(cfg),
        base_seed=cfg.base_seed,
    )

    per_trial = _collect(
        cfg, cells, trial_fn, _trials_per_cell(cfg), excludable, width, verbose, collector
    )
    summary, prediction, checks = summarize(cfg, per_trial)
    report = ExperimentReport(
        kind=cfg.kind,
        config=cfg,
        cells=[{"cell": c.index, **c.label, "params": c.params.to_dict()} for c in cells],
        per_trial=per_trial,
        summary=summary,
        prediction=prediction,
        checks=checks,
    )

    if report.trials_excluded:
        logger.warning(
            "Trials excluded",
            kind=cfg.kind.value,
            excluded=report.trials_excluded,
            by_error=report.excluded_by_error,
        )
    collector.record_experiment(cfg.kind.value, report.verdict)
    logger.info(
        "Experiment completed",
        kind=cfg.kind.value,
        verdict=report.verdict,
        reported=report.trials_reported,
        excluded=report.trials_excluded,
    )
    return report


def run_bbp(cfg, width=None, verbose=False, collector=None) -> ExperimentReport:
    """Top eigenvalues of rescaled (or explicitly deformed) samples."""
    return _run(
        cfg, BBP_KINDS, partial(_bbp_trial, cfg), (ConvergenceFailure,), width, verbose, collector
    )


def run_clt_histogram(cfg, width=None, verbose=False, collector=None) -> ExperimentReport:
    """L_gamma per spike count against Normal(m_K, V_0); kappa' alongside."""
    return _run(
        cfg,
        (ExperimentKind.CLT_HISTOGRAM,),
        partial(_clt_trial, cfg),
        (DegenerateSpectrum, ConvergenceFailure),
        width,
        verbose,
        collector,
    )


def run_error_curve(cfg, width=None, verbose=False, collector=None) -> ExperimentReport:
    """Empirical type I + type II error of the midpoint test over a gamma grid."""
    return _run(
        cfg,
        (ExperimentKind.ERROR_CURVE,),
        partial(_error_trial, cfg),
        (DegenerateSpectrum, ConvergenceFailure),
        width,
        verbose,
        collector,
    )


def run_sparse_clt(cfg, width=None, verbose=False, collector=None) -> ExperimentReport:
    """Sparse-regime scale (SparseClt) or location (SparseMean) of L_M(f)."""
    f = resolve(_default_f(cfg))
    if cfg.kind == ExperimentKind.SPARSE_CLT:
        for cell in _sparse_cells(cfg):
            sparse_prediction(f, cell.params)
    return _run(
        cfg,
        SPARSE_KINDS,
        partial(_sparse_trial, cfg, f),
        (ConvergenceFailure,),
        width,
        verbose,
        collector,
    )


def run_local_law_probe(cfg, width=None, verbose=False, collector=None) -> ExperimentReport:
    """Deviations |m - m_sc| and |s - m_sc| at fixed probe points."""
    return _run(
        cfg,
        (ExperimentKind.LOCAL_LAW_PROBE,),
        partial(_local_law_trial, cfg),
        (SingularShift, ConvergenceFailure),
        width,
        verbose,
        collector,
    )


_DRIVERS = {
    ExperimentKind.BBP_DENSE: run_bbp,
    ExperimentKind.BBP_SPARSE: run_bbp,
    ExperimentKind.CLT_HISTOGRAM: run_clt_histogram,
    ExperimentKind.ERROR_CURVE: run_error_curve,
    ExperimentKind.SPARSE_CLT: run_sparse_clt,
    ExperimentKind.SPARSE_MEAN: run_sparse_clt,
    ExperimentKind.LOCAL_LAW_PROBE: run_local_law_probe,
}


def run_experiment(
    cfg: ExperimentConfig,
    width: Optional[int] = None,
    verbose: bool = False,
    collector: Optional[MetricsCollector] = None,
) -> ExperimentReport:
    return _DRIVERS[cfg.kind](cfg, width=width, verbose=verbose, collector=collector)
