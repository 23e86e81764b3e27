"""Evaluation: metrics, dataset IO, naive baselines, noise-level sweeps, and a
Monte Carlo check of the second-order perturbation identity."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .backend import (
    Backend,
    EchoTailBackend,
    GenerationParams,
    OracleBackend,
    ReplayBackend,
    ScriptedBackend,
    Usage,
    default_cost_table,
    estimate_cost,
)
from .codec import CodecConfig, fit_scaler, serialize
from .core import SplitSpec, TimeSeries, split_series
from .errors import (
    ConfigError,
    LengthMismatchError,
    NltsError,
    NonFiniteError,
    SchemaError,
)
from .noise import NOISE_KINDS, NoiseSpec
from .pipeline import ForecastJob, run_nlts
from .rng import substream

# --- normalization and metrics -----------------------------------------------


@dataclass(frozen=True)
class Normalization:
    """Affine range normalization applied to errors before MSE/MAE.

    kind "none" passes values through; "minmax" maps [lo, hi] to [0, 1]. The
    descriptor string lands in MetricReport so reported numbers are
    interpretable.
    """

    kind: str = "none"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "minmax"):
            raise ConfigError(f"unknown normalization kind {self.kind!r}")
        if self.kind == "minmax" and not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ConfigError("minmax normalization needs finite bounds")

    @classmethod
    def from_values(cls, values) -> "Normalization":
        arr = np.asarray(values, dtype=float)
        return cls(kind="minmax", lo=float(arr.min()), hi=float(arr.max()))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x
        span = self.hi - self.lo
        if span <= 0:
            span = 1.0
        return (x - self.lo) / span

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        return f"minmax[{self.lo:g},{self.hi:g}]"


@dataclass(frozen=True)
class MetricReport:
    mse: float
    mae: float
    normalization: str
    per_step_errors: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "normalization": self.normalization,
            "per_step_errors": self.per_step_errors.tolist(),
        }


def compute_metrics(
    prediction,
    truth,
    normalization: Normalization = Normalization(),
) -> MetricReport:
    """MSE and MAE over normalized per-step errors."""
    pred = np.asarray(prediction, dtype=float)
    true = np.asarray(truth, dtype=float)
    if pred.shape != true.shape or pred.ndim != 1:
        raise LengthMismatchError(
            f"prediction shape {pred.shape} does not match truth shape {true.shape}"
        )
    if pred.size == 0:
        raise LengthMismatchError("cannot score an empty forecast")
    if not (np.isfinite(pred).all() and np.isfinite(true).all()):
        raise NonFiniteError("metrics need finite predictions and truth")
    errors = normalization.apply(pred) - normalization.apply(true)
    return MetricReport(
        mse=float(np.mean(errors**2)),
        mae=float(np.mean(np.abs(errors))),
        normalization=normalization.describe(),
        per_step_errors=errors,
    )


# --- dataset IO ---------------------------------------------------------------


@dataclass(frozen=True)
class LoadedDataset:
    """A series plus whatever split hints the file carried."""

    series: TimeSeries
    holdout: int
    name: str


_TRUTHY = {"1", "true", "True", "TRUE"}
_FALSY = {"0", "false", "False", "FALSE", ""}


def load_dataset(
    path: str | Path,
    value_column: str = "value",
    holdout_column: str = "is_holdout",
    delimiter: str = ",",
) -> LoadedDataset:
    """Load a CSV with one value column and an optional holdout flag column.

    SchemaError messages name the offending physical row (header is row 1). A
    holdout flag must mark a contiguous tail; anything else is a schema error.
    """
    path = Path(path)
    values: list[float] = []
    holdout_flags: list[bool] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None or value_column not in reader.fieldnames:
            raise SchemaError(
                f"{path.name}: missing {value_column!r} column in header {reader.fieldnames}"
            )
        has_holdout = holdout_column in reader.fieldnames
        for row_no, row in enumerate(reader, start=2):
            raw = row.get(value_column)
            if raw is None or not raw.strip():
                raise SchemaError(f"{path.name}: row {row_no}: blank {value_column!r} value")
            try:
                value = float(raw)
            except ValueError:
                raise SchemaError(
                    f"{path.name}: row {row_no}: {value_column!r} is not numeric: {raw!r}"
                ) from None
            if not math.isfinite(value):
                raise NonFiniteError(f"{path.name}: row {row_no}: non-finite value {raw!r}")
            values.append(value)
            if has_holdout:
                flag = (row.get(holdout_column) or "").strip()
                if flag in _TRUTHY:
                    holdout_flags.append(True)
                elif flag in _FALSY:
                    holdout_flags.append(False)
                else:
                    raise SchemaError(
                        f"{path.name}: row {row_no}: bad {holdout_column!r} flag {flag!r}"
                    )
    if not values:
        raise SchemaError(f"{path.name}: no data rows")
    holdout = 0
    if holdout_flags:
        holdout = sum(holdout_flags)
        if holdout and not all(holdout_flags[-holdout:]):
            raise SchemaError(
                f"{path.name}: {holdout_column!r} must mark a contiguous tail of rows"
            )
    return LoadedDataset(
        series=TimeSeries(np.array(values), name=path.stem),
        holdout=holdout,
        name=path.stem,
    )


# --- naive baselines ----------------------------------------------------------


def naive_forecast(
    history,
    horizon: int,
    method: str = "last_value",
    period: int | None = None,
) -> np.ndarray:
    """last_value repeats the final observation; seasonal_naive cycles the last
    `period` observations."""
    vals = history.values if isinstance(history, TimeSeries) else np.asarray(history, dtype=float)
    if vals.size == 0:
        raise ValueError("history must be nonempty")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if method == "last_value":
        return np.full(horizon, float(vals[-1]))
    if method == "seasonal_naive":
        if period is None or not 1 <= period <= vals.size:
            raise ConfigError(
                f"seasonal_naive needs period in [1, len(history)], got {period}"
            )
        tail = vals[-period:]
        return np.resize(tail, horizon).astype(float)
    raise ConfigError(f"unknown naive method {method!r}")


# --- noise-level sweep --------------------------------------------------------

DEFAULT_NOISE_LEVELS = (0.0, 0.001, 0.005, 0.01, 0.02, 0.05)
ORIGINAL_LABEL = "Original"

SWEEP_SCHEMA = "nlts.sweep/1"


def level_label(level: float) -> str:
    return ORIGINAL_LABEL if level == 0.0 else f"{level:g}"


@dataclass(frozen=True)
class SweepConfig:
    """One benchmark sweep: datasets crossed with noise levels and families."""

    datasets: tuple[str, ...]
    noise_levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS
    kinds: tuple[str, ...] = ("gaussian",)
    samples: int = 10
    seed: int = 0
    split: SplitSpec | None = None
    codec: CodecConfig = CodecConfig()
    params: GenerationParams = GenerationParams()
    prompt_style: str = "raw"
    retries_per_sample: int = 1
    normalization: str = "minmax"
    backend: Mapping = field(default_factory=lambda: {"kind": "oracle"})

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("sweep needs at least one dataset")
        for level in self.noise_levels:
            if level < 0:
                raise ConfigError(f"noise level must be >= 0, got {level}")
        for kind in self.kinds:
            if kind not in NOISE_KINDS or kind == "none":
                raise ConfigError(f"unknown noise kind {kind!r}")
        if self.normalization not in ("none", "minmax"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        object.__setattr__(self, "datasets", tuple(str(d) for d in self.datasets))
        object.__setattr__(self, "noise_levels", tuple(float(x) for x in self.noise_levels))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "backend", dict(self.backend))


def _split_dataset(ds: LoadedDataset, split: SplitSpec | None) -> tuple[TimeSeries, TimeSeries]:
    if split is None:
        if ds.holdout > 0:
            split = SplitSpec.by_horizon(ds.holdout)
        else:
            split = SplitSpec.by_fraction(0.8)
    return split_series(ds.series, split)


def _cell_backend(cfg: SweepConfig, history: TimeSeries, target: TimeSeries) -> Backend:
    """Build the per-dataset backend named by the config.

    oracle: replies with the encoded true continuation under the clean-history
    scaler, so decoding recovers the target up to quantization.
    """
    spec = dict(cfg.backend)
    kind = spec.get("kind", "oracle")
    if kind == "oracle":
        scaler = fit_scaler(history, cfg.codec)
        return OracleBackend(serialize(target, scaler, cfg.codec))
    if kind == "echo":
        return EchoTailBackend(
            tail=int(spec.get("tail", 4)), steps=int(spec.get("steps", max(64, len(target) * 2)))
        )
    if kind == "scripted":
        return ScriptedBackend(path=spec["path"])
    if kind == "replay":
        return ReplayBackend(spec["path"])
    if kind == "live":
        from .backend import BackendConfig, HttpBackend

        return HttpBackend(
            BackendConfig(
                base_url=spec.get("base_url"),
                api_key=spec.get("api_key"),
                max_retries=int(spec.get("max_retries", 3)),
            )
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


@dataclass(frozen=True)
class SweepCell:
    dataset: str
    kind: str
    level: float
    label: str
    mse: float | None
    mae: float | None
    improvement_mse: float | None
    improvement_mae: float | None
    valid_samples: int | None
    error: str | None

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "kind": self.kind,
            "level": self.level,
            "label": self.label,
            "mse": self.mse,
            "mae": self.mae,
            "improvement_mse": self.improvement_mse,
            "improvement_mae": self.improvement_mae,
            "valid_samples": self.valid_samples,
            "error": self.error,
        }


def _improvement(original: float | None, noisy: float | None) -> float | None:
    if original is None or noisy is None or original == 0.0:
        return None
    return (original - noisy) / original


def run_sweep(cfg: SweepConfig, out_dir: str | Path, backend: Backend | None = None) -> dict:
    """Run every (dataset, noise kind, level) cell through run_nlts and report.

    Level 0 is the distribution-free "Original" row, computed once per dataset
    and shared across kinds; improvements are relative to it. Per-cell failures
    are recorded in the report, not fatal. Writes results.csv, results.json and
    summary.md under out_dir and returns the JSON report as a dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells: list[SweepCell] = []
    usage_total = Usage()

    for dataset_path in cfg.datasets:
        ds = load_dataset(dataset_path)
        history, target = _split_dataset(ds, cfg.split)
        if cfg.normalization == "minmax":
            norm = Normalization.from_values(ds.series.values)
        else:
            norm = Normalization()
        cell_backend = backend if backend is not None else _cell_backend(cfg, history, target)

        def run_cell(kind: str, level: float) -> tuple[MetricReport | None, int | None, str | None]:
            nonlocal usage_total
            noise = (
                NoiseSpec(kind="none")
                if level == 0.0
                else NoiseSpec(kind=kind, alpha=level, seed=cfg.seed)
            )
            job = ForecastJob(
                history=history,
                horizon=len(target),
                noise=noise,
                codec=cfg.codec,
                params=cfg.params,
                prompt_style=cfg.prompt_style,
                samples=cfg.samples,
                seed=cfg.seed,
                retries_per_sample=cfg.retries_per_sample,
            )
            result = run_nlts(job, cell_backend)
            usage_total = usage_total + result.usage
            report = compute_metrics(result.forecast.median, target.values, norm)
            return report, result.valid_samples, None

        baseline: tuple[float, float] | None = None
        try:
            report, valid, _ = run_cell(cfg.kinds[0], 0.0)
            baseline = (report.mse, report.mae)
            original_cell = SweepCell(
                dataset=ds.name,
                kind="none",
                level=0.0,
                label=ORIGINAL_LABEL,
                mse=report.mse,
                mae=report.mae,
                improvement_mse=None,
                improvement_mae=None,
                valid_samples=valid,
                error=None,
            )
        except NltsError as exc:
            original_cell = SweepCell(
                dataset=ds.name, kind="none", level=0.0, label=ORIGINAL_LABEL,
                mse=None, mae=None, improvement_mse=None, improvement_mae=None,
                valid_samples=None, error=f"{type(exc).__name__}: {exc}",
            )
        cells.append(original_cell)

        for kind in cfg.kinds:
            for level in cfg.noise_levels:
                if level == 0.0:
                    continue  # one shared Original row per dataset
                try:
                    report, valid, _ = run_cell(kind, level)
                    cells.append(
                        SweepCell(
                            dataset=ds.name,
                            kind=kind,
                            level=level,
                            label=level_label(level),
                            mse=report.mse,
                            mae=report.mae,
                            improvement_mse=_improvement(
                                baseline[0] if baseline else None, report.mse
                            ),
                            improvement_mae=_improvement(
                                baseline[1] if baseline else None, report.mae
                            ),
                            valid_samples=valid,
                            error=None,
                        )
                    )
                except NltsError as exc:
                    cells.append(
                        SweepCell(
                            dataset=ds.name, kind=kind, level=level, label=level_label(level),
                            mse=None, mae=None, improvement_mse=None, improvement_mae=None,
                            valid_samples=None, error=f"{type(exc).__name__}: {exc}",
                        )
                    )

    cost = estimate_cost(usage_total, cfg.params.model, default_cost_table())
    report_dict = {
        "schema": SWEEP_SCHEMA,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S+00:00", time.gmtime()),
        "config": {
            "datasets": list(cfg.datasets),
            "noise_levels": list(cfg.noise_levels),
            "kinds": list(cfg.kinds),
            "samples": cfg.samples,
            "seed": cfg.seed,
            "normalization": cfg.normalization,
            "prompt_style": cfg.prompt_style,
            "model": cfg.params.model,
            "backend": dict(cfg.backend),
        },
        "cells": [c.to_dict() for c in cells],
        "usage_total": usage_total.to_dict(),
        "cost_total": cost,
    }
    _write_sweep_outputs(out, report_dict, cells)
    return report_dict


SWEEP_CSV_COLUMNS = (
    "dataset",
    "kind",
    "noise_level",
    "mse",
    "mae",
    "improvement_mse",
    "improvement_mae",
    "valid_samples",
    "error",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_sweep_outputs(out: Path, report: dict, cells: list[SweepCell]) -> None:
    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for c in cells:
            writer.writerow(
                [
                    c.dataset,
                    c.kind,
                    c.label,
                    _fmt(c.mse),
                    _fmt(c.mae),
                    _fmt(c.improvement_mse),
                    _fmt(c.improvement_mae),
                    _fmt(c.valid_samples),
                    c.error or "",
                ]
            )
    (out / "results.json").write_text(json.dumps(report, indent=2) + "\n")
    lines = [
        "# Noise sweep",
        "",
        f"- model: {report['config']['model']}",
        f"- samples per cell: {report['config']['samples']}",
        f"- normalization: {report['config']['normalization']}",
        f"- total cost (USD): {report['cost_total'] if report['cost_total'] is not None else 'unknown'}",
        "",
        "| dataset | kind | noise level | MSE | MAE | dMSE | dMAE |",
        "|---|---|---|---|---|---|---|",
    ]
    for c in cells:
        lines.append(
            "| {} | {} | {} | {} | {} | {} | {} |".format(
                c.dataset,
                c.kind,
                c.label,
                "-" if c.mse is None else f"{c.mse:.6g}",
                "-" if c.mae is None else f"{c.mae:.6g}",
                "-" if c.improvement_mse is None else f"{c.improvement_mse:+.2%}",
                "-" if c.improvement_mae is None else f"{c.improvement_mae:+.2%}",
            )
        )
    (out / "summary.md").write_text("\n".join(lines) + "\n")


# --- second-order perturbation check -----------------------------------------


@dataclass(frozen=True)
class TheoryCheckReport:
    dimension: int
    sigma: float
    num_draws: int
    hessian_trace: float
    predicted_gap: float
    measured_gap: float
    standard_error: float
    relative_error: float
    concave_gap_nonpositive: bool

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "sigma": self.sigma,
            "num_draws": self.num_draws,
            "hessian_trace": self.hessian_trace,
            "predicted_gap": self.predicted_gap,
            "measured_gap": self.measured_gap,
            "standard_error": self.standard_error,
            "relative_error": self.relative_error,
            "concave_gap_nonpositive": self.concave_gap_nonpositive,
        }


def theory_check(
    dim: int = 10,
    sigma: float = 0.1,
    num_draws: int = 1_000_000,
    matrix: np.ndarray | None = None,
    x: np.ndarray | None = None,
    seed: int = 0,
    func: Callable[[np.ndarray], np.ndarray] | None = None,
    hessian_trace: float | None = None,
) -> TheoryCheckReport:
    """Monte Carlo check that E[f(x + eps)] - f(x) ~ (sigma^2 / 2) * tr(H).

    Default f(x) = -0.5 x^T A x with A = I, where the identity is exact:
    the gap is -(sigma^2 / 2) tr(A) for isotropic Gaussian eps. A custom
    vectorized func (rows of an (N, d) array to an (N,) array) needs its
    analytic hessian_trace at x for the prediction. sigma = 0 gives exactly 0.
    """
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if num_draws < 10_000:
        raise ConfigError(f"num_draws must be >= 10000 for a stable check, got {num_draws}")
    if x is None:
        x = 0.1 * np.ones(dim)
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ConfigError(f"x must have shape ({dim},), got {x.shape}")

    if func is None:
        a = np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float)
        if a.shape != (dim, dim):
            raise ConfigError(f"matrix must have shape ({dim}, {dim}), got {a.shape}")
        if not np.allclose(a, a.T, atol=1e-10):
            raise ConfigError("matrix must be symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs.min() < -1e-10 * max(1.0, abs(eigs.max())):
            raise ConfigError("matrix must be positive semidefinite")
        trace_h = -float(np.trace(a))

        def f(points: np.ndarray) -> np.ndarray:
            return -0.5 * np.einsum("ij,jk,ik->i", points, a, points)

    else:
        if hessian_trace is None:
            raise ConfigError("custom func needs an analytic hessian_trace")
        trace_h = float(hessian_trace)
        f = func

    predicted = 0.5 * sigma**2 * trace_h
    if sigma == 0.0:
        gaps = np.zeros(num_draws)
    else:
        eps = substream(seed).standard_normal((num_draws, dim)) * sigma
        base = float(f(x[None, :])[0])
        gaps = f(x[None, :] + eps) - base
    measured = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(num_draws)) if num_draws > 1 else 0.0
    denom = max(abs(predicted), 1e-300)
    rel = abs(measured - predicted) / denom if predicted != 0.0 else abs(measured)
    return TheoryCheckReport(
        dimension=dim,
        sigma=sigma,
        num_draws=num_draws,
        hessian_trace=trace_h,
        predicted_gap=predicted,
        measured_gap=measured,
        standard_error=se,
        relative_error=rel,
        concave_gap_nonpositive=(trace_h <= 0 and measured <= 4.0 * se + 1e-300),
    )
