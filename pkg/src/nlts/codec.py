"""Digit-level text codec for numeric series.

Values pass through an affine scaler, are quantized to k decimal places by
flooring, and are rendered as separated digit tokens, e.g. 3.14 at k=2 becomes
"3 1 4". Decoding strips non-digit junk per step, re-centers each quantization
bin (optional half-bin correction), and inverts the scaler.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .core import TimeSeries
from .errors import (
    DegenerateSeriesError,
    DigitOverflowError,
    NonFiniteError,
    ParamError,
    ParseError,
)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class CodecConfig:
    """Encoding knobs.

    precision_k: decimal places kept after scaling (floor quantization).
    basic_mode: concatenate digits without separators ("314" instead of "3 1 4");
        no sign token exists in this mode.
    scale_quantile / offset_beta: scaler fit, see fit_scaler.
    half_bin_correction: decode bin v to (v + 0.5) / 10^k instead of v / 10^k.
    """

    precision_k: int = 3
    base: int = 10
    signed: bool = True
    basic_mode: bool = False
    scale_quantile: float = 0.95
    offset_beta: float = 0.3
    half_bin_correction: bool = True
    step_separator: str = ", "
    digit_separator: str = " "
    max_digits_per_value: int = 10

    def __post_init__(self):
        if self.base != 10:
            raise ParamError(f"only base 10 is supported, got {self.base}")
        if not 0 <= self.precision_k <= 10:
            raise ParamError(f"precision_k must be in [0, 10], got {self.precision_k}")
        if self.max_digits_per_value < max(1, self.precision_k + 1):
            raise ParamError(
                f"max_digits_per_value {self.max_digits_per_value} cannot hold "
                f"precision_k={self.precision_k} plus an integer digit"
            )
        if not 0.0 < self.scale_quantile <= 1.0:
            raise ParamError(f"scale_quantile must be in (0, 1], got {self.scale_quantile}")
        if self.offset_beta < 0.0:
            raise ParamError(f"offset_beta must be >= 0, got {self.offset_beta}")
        if not self.step_separator.strip(self.digit_separator):
            raise ParamError("step_separator must survive stripping the digit separator")


@dataclass(frozen=True)
class Scaler:
    """Affine map y = (x - offset) / scale with scale > 0."""

    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.offset) and math.isfinite(self.scale)):
            raise ParamError("scaler parameters must be finite")
        if self.scale <= 0.0:
            raise ParamError(f"scale must be > 0, got {self.scale}")

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def inverse(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.offset


def identity_scaler() -> Scaler:
    return Scaler(0.0, 1.0)


def fit_scaler(history, config: CodecConfig = CodecConfig()) -> Scaler:
    """Fit the affine scaler on a history window.

    signed mode keeps offset 0; otherwise offset = min - offset_beta * range so
    shifted values are nonnegative with headroom. Scale is the scale_quantile
    quantile of (history - offset), falling back to 1 when that quantile is not
    positive (constant-at-offset or all-negative histories).
    """
    vals = _as_values(history)
    if vals.size == 0:
        raise DegenerateSeriesError("cannot fit a scaler on an empty history")
    if not np.isfinite(vals).all():
        raise NonFiniteError("history contains NaN or infinity")
    if config.signed:
        offset = 0.0
    else:
        lo = float(vals.min())
        hi = float(vals.max())
        offset = lo - config.offset_beta * (hi - lo)
    scale = float(np.quantile(vals - offset, config.scale_quantile))
    if scale <= 0.0:
        scale = 1.0
    return Scaler(offset=offset, scale=scale)


def _as_values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


def quantize(values, scaler: Scaler, config: CodecConfig) -> np.ndarray:
    """Scaled values floored to int64 bins at precision_k decimal places.

    floor(y * 10^k) with a snap-to-integer guard: products within a few ulps of
    an integer (float noise on exact decimals, e.g. 3.14 * 100 = 313.99999...)
    snap to it before flooring. The snap distance is far below one bin, so
    round-trip error bounds are unchanged.
    """
    vals = _as_values(values)
    if not np.isfinite(vals).all():
        raise NonFiniteError("cannot encode non-finite values")
    y = scaler.forward(vals)
    factor = float(10 ** config.precision_k)
    scaled = y * factor
    # intermediate magnitude bounds the accumulated rounding error
    mag = (np.abs(vals) + abs(scaler.offset)) / scaler.scale * factor
    tol = 64.0 * _EPS * np.maximum(1.0, np.maximum(mag, np.abs(scaled)))
    nearest = np.rint(scaled)
    snapped = np.where(np.abs(scaled - nearest) <= tol, nearest, np.floor(scaled))
    if np.any(np.abs(snapped) >= 2**62):
        raise DigitOverflowError("scaled values overflow 64-bit integer bins")
    return snapped.astype(np.int64)


def serialize(series, scaler: Scaler, config: CodecConfig = CodecConfig()) -> str:
    """Encode a series as step-separated digit tokens under the scaler."""
    bins = quantize(series, scaler, config)
    if bins.size == 0:
        return ""
    if int(bins.min()) < 0:
        if config.basic_mode:
            raise DigitOverflowError("negative value but basic mode has no sign token")
        if not config.signed:
            raise DigitOverflowError(
                "negative value after scaling in unsigned mode; check the scaler offset"
            )
    # digit count grows with magnitude, so checking the extreme value covers all
    widest = max(abs(int(bins.max())), abs(int(bins.min())))
    if len(str(widest)) > config.max_digits_per_value:
        raise DigitOverflowError(
            f"value needs {len(str(widest))} digits, max_digits_per_value is "
            f"{config.max_digits_per_value}"
        )
    values = bins.tolist()
    if config.basic_mode:
        parts = [str(v) for v in values]
    else:
        join = config.digit_separator.join
        parts = [join(str(v)) if v >= 0 else "-" + join(str(-v)) for v in values]
    return config.step_separator.join(parts)


@dataclass(frozen=True)
class ParseReport:
    """Parse accounting for one model continuation."""

    requested_steps: int
    parsed_steps: int
    discarded_fragments: int
    truncated: bool
    raw_text_length: int


_JUNK = re.compile(r"[^0-9-]+")
# serializer output only needs whitespace removed; try this before the regex
_WS_TABLE = {ord(c): None for c in " \t\r\n"}


def _fragment_to_bin(fragment: str) -> int | None:
    """Digit-token fragment to signed bin integer; None when no digits survive."""
    compact = fragment.translate(_WS_TABLE)
    if not compact:
        return None
    try:
        return int(compact)
    except ValueError:
        pass
    cleaned = _JUNK.sub("", fragment)
    negative = cleaned.startswith("-")
    digits = cleaned.replace("-", "")
    if not digits:
        return None
    v = int(digits)
    return -v if negative else v


def deserialize(
    text: str,
    scaler: Scaler,
    config: CodecConfig,
    horizon: int,
) -> tuple[np.ndarray, ParseReport]:
    """Decode model output back to values, keeping at most `horizon` steps.

    Splits on the step separator, drops non-numeric junk inside each fragment,
    and silently skips fragments with no content at all (separator artifacts).
    Fragments with content but no digits count as discarded. Raises ParseError
    when nothing parses; the report rides along on the exception.
    """
    if horizon < 1:
        raise ParamError(f"horizon must be >= 1, got {horizon}")
    sep = config.step_separator.strip() or config.step_separator
    factor = float(10 ** config.precision_k)
    half = 0.5 if config.half_bin_correction else 0.0
    bins: list[int] = []
    discarded = 0
    for fragment in text.split(sep):
        if len(bins) >= horizon:
            break
        v = _fragment_to_bin(fragment)
        if v is None:
            if fragment.strip():
                discarded += 1
            continue
        bins.append(v)
    report = ParseReport(
        requested_steps=horizon,
        parsed_steps=len(bins),
        discarded_fragments=discarded,
        truncated=len(bins) < horizon,
        raw_text_length=len(text),
    )
    if not bins:
        raise ParseError("no numeric steps found in model output", report=report)
    values = scaler.inverse((np.array(bins, dtype=float) + half) / factor)
    return values, report
