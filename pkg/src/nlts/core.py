"""Domain types, history/target splitting, and sample-path aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, NonFiniteError, SplitError


@dataclass(frozen=True)
class TimeSeries:
    """Ordered, finite, real-valued observations. Time is the implicit index."""

    values: np.ndarray
    name: str = ""
    frequency: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("series must be a nonempty 1-D sequence")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"series {self.name!r} contains NaN or infinity")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(values, name=self.name, frequency=self.frequency)


@dataclass(frozen=True)
class SplitSpec:
    """History/target split rule: a history fraction or a fixed target horizon."""

    mode: str
    fraction: float | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.mode == "fraction":
            if self.fraction is None or not (0.0 < float(self.fraction) < 1.0):
                raise ValueError("fraction mode needs fraction in (0, 1)")
            if self.horizon is not None:
                raise ValueError("fraction mode takes no horizon")
        elif self.mode == "horizon":
            if self.horizon is None or int(self.horizon) < 1:
                raise ValueError("horizon mode needs a positive integer horizon")
            if self.fraction is not None:
                raise ValueError("horizon mode takes no fraction")
        else:
            raise ValueError(f"unknown split mode {self.mode!r}")

    @classmethod
    def by_fraction(cls, fraction: float) -> "SplitSpec":
        return cls("fraction", fraction=float(fraction))

    @classmethod
    def by_horizon(cls, horizon: int) -> "SplitSpec":
        return cls("horizon", horizon=int(horizon))


def _snapped_ceil(x: float) -> int:
    # 0.7 * 10 == 7.000000000000001; don't let float noise steal a point.
    nearest = round(x)
    if abs(x - nearest) < 1e-9:
        return int(nearest)
    return math.ceil(x)


def split_series(series: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    """Split into (history, target). Fraction mode keeps ceil(fraction * T) history points."""
    t = len(series)
    if spec.mode == "fraction":
        n_hist = _snapped_ceil(spec.fraction * t)
    else:
        n_hist = t - spec.horizon
    n_target = t - n_hist
    if n_hist < 1 or n_target < 1:
        raise SplitError(
            f"cannot split length-{t} series into {n_hist} history + {n_target} target points"
        )
    history = series.with_values(series.values[:n_hist])
    target = series.with_values(series.values[n_hist:])
    return history, target


@dataclass(frozen=True)
class SamplePaths:
    """m sampled continuations, one row per sample, horizon columns."""

    paths: np.ndarray

    def __post_init__(self):
        try:
            arr = np.asarray(self.paths, dtype=float)
        except (ValueError, TypeError) as exc:
            raise AggregationError(f"sample paths are ragged or non-numeric: {exc}") from exc
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise AggregationError(f"need an (m >= 1, horizon >= 1) array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise AggregationError("sample paths contain NaN or infinity")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "paths", arr)

    @property
    def num_samples(self) -> int:
        return int(self.paths.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.paths.shape[1])


@dataclass(frozen=True)
class PointForecast:
    """Per-step median, population variance, and quantile curves."""

    median: np.ndarray
    variance: np.ndarray
    quantiles: dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.median.size)


DEFAULT_QUANTILE_LEVELS = (0.05, 0.25, 0.75, 0.95)


def aggregate_samples(
    samples: SamplePaths,
    quantile_levels: tuple[float, ...] = DEFAULT_QUANTILE_LEVELS,
) -> PointForecast:
    """Reduce sample paths to a point forecast.

    Median is the per-step order statistic over the sample axis (even m averages
    the two central values). Variance is population (ddof=0). Quantiles use
    numpy's default linear interpolation; 0.5 is always present and is the
    median array itself.
    """
    levels = sorted({float(q) for q in quantile_levels} | {0.5})
    for q in levels:
        if not (0.0 < q < 1.0):
            raise AggregationError(f"quantile level {q} outside (0, 1)")
    arr = samples.paths
    median = np.median(arr, axis=0)
    variance = arr.var(axis=0, ddof=0)
    # Cross-level monotonicity holds for linear-interpolation quantiles in exact
    # arithmetic; clamp against the median so it also holds bitwise in floats.
    quantiles: dict[float, np.ndarray] = {}
    running = np.full(arr.shape[1], -np.inf)
    for q in levels:
        if q < 0.5:
            curve = np.minimum(np.quantile(arr, q, axis=0), median)
        elif q == 0.5:
            curve = median
        else:
            curve = np.maximum(np.quantile(arr, q, axis=0), median)
        running = np.maximum(running, curve)
        quantiles[q] = running
    return PointForecast(median=median, variance=variance, quantiles=quantiles)
