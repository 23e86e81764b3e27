"""End-to-end forecast runs.

run_nlts perturbs the history once per sample, encodes it, asks the backend for
a continuation, decodes, and aggregates the sample paths into a point forecast
with a reproducibility manifest. All randomness flows from the job seed through
per-sample substreams, so results do not depend on completion order.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .backend import Backend, GenerationParams, Usage
from .codec import CodecConfig, ParseReport, Scaler, deserialize, fit_scaler, serialize
from .core import (
    DEFAULT_QUANTILE_LEVELS,
    PointForecast,
    SamplePaths,
    TimeSeries,
    aggregate_samples,
)
from .errors import ConfigError, InsufficientSamplesError, ParseError
from .noise import NoiseSpec, inject_noise
from .rng import rng_identity, substream

SYSTEM_PROMPT = (
    "You are a helpful assistant specialized in time series forecasting. "
    "The user provides a comma-separated sequence of decimal numbers, and you "
    "will predict the following values."
)

USER_PROMPT_TEMPLATE = (
    "Please continue the sequence without any additional text or explanation. "
    "Only output the predicted numbers.\nSequence:\n{sequence}"
)

PROMPT_STYLES = ("raw", "chat")


def build_prompt(encoded_history: str, style: str, horizon: int, config: CodecConfig):
    """Prompt for an encoded history.

    raw: the encoding plus a trailing step separator as the continuation cue.
    chat: fixed system instruction plus a user message carrying the sequence.
    Neither style states the horizon; it is controlled via token caps and
    parse-side truncation, so the argument is accepted but unused here.
    """
    if style not in PROMPT_STYLES:
        raise ConfigError(f"unknown prompt style {style!r}, expected one of {PROMPT_STYLES}")
    if not encoded_history:
        raise ConfigError("refusing to build a prompt from an empty encoded history")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if style == "raw":
        return encoded_history + config.step_separator
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": USER_PROMPT_TEMPLATE.format(sequence=encoded_history)},
    ]


def completion_token_budget(horizon: int, config: CodecConfig) -> int:
    """Token cap that comfortably covers `horizon` encoded steps."""
    per_step = config.precision_k + 3
    factor = 1 if config.basic_mode else 2
    return max(16, horizon * per_step * factor)


@dataclass(frozen=True)
class ForecastJob:
    """Everything a forecast run needs besides the backend."""

    history: TimeSeries
    horizon: int
    noise: NoiseSpec = NoiseSpec(kind="none")
    codec: CodecConfig = CodecConfig()
    params: GenerationParams = GenerationParams()
    prompt_style: str = "raw"
    samples: int = 10
    seed: int = 0
    fresh_noise_per_sample: bool = True
    retries_per_sample: int = 1
    fit_scaler_on_clean: bool = False
    quantile_levels: tuple[float, ...] = DEFAULT_QUANTILE_LEVELS

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.retries_per_sample < 0:
            raise ConfigError(f"retries_per_sample must be >= 0, got {self.retries_per_sample}")
        if self.prompt_style not in PROMPT_STYLES:
            raise ConfigError(f"unknown prompt style {self.prompt_style!r}")


@dataclass(frozen=True)
class SampleOutcome:
    """Per-sample accounting: which attempt succeeded (if any) and its parse report."""

    sample_index: int
    attempts: int
    valid: bool
    report: ParseReport | None

    def to_dict(self) -> dict:
        d = {
            "sample_index": self.sample_index,
            "attempts": self.attempts,
            "valid": self.valid,
        }
        if self.report is not None:
            d["parse"] = {
                "requested_steps": self.report.requested_steps,
                "parsed_steps": self.report.parsed_steps,
                "discarded_fragments": self.report.discarded_fragments,
                "truncated": self.report.truncated,
                "raw_text_length": self.report.raw_text_length,
            }
        return d


@dataclass(frozen=True)
class ForecastResult:
    forecast: PointForecast
    samples: SamplePaths
    outcomes: tuple[SampleOutcome, ...]
    usage: Usage
    manifest: dict

    @property
    def valid_samples(self) -> int:
        return sum(1 for o in self.outcomes if o.valid)

    def to_dict(self) -> dict:
        return {
            "schema": "nlts.forecast/1",
            "median": self.forecast.median.tolist(),
            "variance": self.forecast.variance.tolist(),
            "quantiles": {f"{q:g}": v.tolist() for q, v in self.forecast.quantiles.items()},
            "sample_paths": self.samples.paths.tolist(),
            "valid_samples": self.valid_samples,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "usage": self.usage.to_dict(),
            "manifest": self.manifest,
        }


def _noise_dict(spec: NoiseSpec) -> dict:
    return {
        "kind": spec.kind,
        "params": dict(spec.params),
        "alpha": spec.alpha,
        "seed": spec.seed,
        "constant_fallback": spec.constant_fallback,
    }


def _codec_dict(config: CodecConfig) -> dict:
    return {
        "precision_k": config.precision_k,
        "base": config.base,
        "signed": config.signed,
        "basic_mode": config.basic_mode,
        "scale_quantile": config.scale_quantile,
        "offset_beta": config.offset_beta,
        "half_bin_correction": config.half_bin_correction,
        "step_separator": config.step_separator,
        "digit_separator": config.digit_separator,
        "max_digits_per_value": config.max_digits_per_value,
    }


def _params_dict(params: GenerationParams) -> dict:
    return {
        "model": params.model,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
        "num_samples": params.num_samples,
        "stop": list(params.stop),
    }


def run_nlts(job: ForecastJob, backend: Backend) -> ForecastResult:
    """Execute a forecast job against a backend.

    Sample i uses substream(seed, i) for its noise, refits the scaler on its
    perturbed history (unless fit_scaler_on_clean), and retries failed
    generations up to retries_per_sample times under fresh tags. A sample is
    valid when at least `horizon` steps parse. Fewer than ceil(samples / 2)
    valid samples aborts with InsufficientSamplesError.
    """
    history = job.history
    params = job.params
    budget = completion_token_budget(job.horizon, job.codec)
    effective = GenerationParams(
        model=params.model,
        temperature=params.temperature,
        top_p=params.top_p,
        max_tokens=max(params.max_tokens, budget),
        num_samples=1,
        stop=params.stop,
    )
    shared_noisy: TimeSeries | None = None
    if not job.fresh_noise_per_sample:
        shared_noisy = inject_noise(history, job.noise, substream(job.seed, 0))

    usage_total = Usage()
    usage_lock = threading.Lock()

    def run_sample(i: int) -> tuple[np.ndarray | None, SampleOutcome, Scaler]:
        nonlocal usage_total
        if shared_noisy is not None:
            noisy = shared_noisy
        else:
            noisy = inject_noise(history, job.noise, substream(job.seed, i))
        scaler = fit_scaler(history if job.fit_scaler_on_clean else noisy, job.codec)
        encoded = serialize(noisy, scaler, job.codec)
        prompt = build_prompt(encoded, job.prompt_style, job.horizon, job.codec)
        last_report: ParseReport | None = None
        attempts = 0
        for attempt in range(job.retries_per_sample + 1):
            attempts = attempt + 1
            tag = f"sample-{i}/try-{attempt}"
            if job.prompt_style == "chat":
                texts, usage = backend.chat_complete(prompt, effective, tag=tag)
            else:
                texts, usage = backend.complete(prompt, effective, tag=tag)
            with usage_lock:
                usage_total = usage_total + usage
            if not texts:
                continue
            try:
                values, report = deserialize(texts[0], scaler, job.codec, job.horizon)
            except ParseError as exc:
                last_report = exc.report
                continue
            last_report = report
            if report.parsed_steps >= job.horizon:
                outcome = SampleOutcome(i, attempts, True, report)
                return values[: job.horizon], outcome, scaler
        outcome = SampleOutcome(i, attempts, False, last_report)
        return None, outcome, scaler

    workers = max(1, min(job.samples, getattr(backend, "max_in_flight", 4)))
    results: list[tuple[np.ndarray | None, SampleOutcome, Scaler]]
    if workers == 1:
        results = [run_sample(i) for i in range(job.samples)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_sample, range(job.samples)))

    paths = [r[0] for r in results]
    outcomes = tuple(r[1] for r in results)
    scalers = [r[2] for r in results]
    valid = [p for p in paths if p is not None]
    needed = math.ceil(job.samples / 2)
    if len(valid) < needed:
        raise InsufficientSamplesError(
            f"only {len(valid)} of {job.samples} samples parsed to horizon "
            f"{job.horizon}; need at least {needed}"
        )
    sample_paths = SamplePaths(np.stack(valid))
    forecast = aggregate_samples(sample_paths, job.quantile_levels)
    manifest = build_manifest(job, backend, scalers)
    return ForecastResult(
        forecast=forecast,
        samples=sample_paths,
        outcomes=outcomes,
        usage=usage_total,
        manifest=manifest,
    )


def build_manifest(job: ForecastJob, backend: Backend, scalers: list[Scaler]) -> dict:
    """Reproducibility record embedded in every result.

    Replay-backed runs reuse the cassette's newest timestamp as "created", so a
    replayed run serializes byte-identically every time.
    """
    backend_info = backend.describe()
    created = backend_info.get("recorded_at")
    if created is None:
        inner = backend_info.get("inner")
        if isinstance(inner, dict):
            created = inner.get("recorded_at")
    if created is None:
        import time

        created = time.strftime("%Y-%m-%dT%H:%M:%S+00:00", time.gmtime())
    return {
        "created": created,
        "seed": job.seed,
        "samples": job.samples,
        "horizon": job.horizon,
        "prompt_style": job.prompt_style,
        "fresh_noise_per_sample": job.fresh_noise_per_sample,
        "fit_scaler_on_clean": job.fit_scaler_on_clean,
        "retries_per_sample": job.retries_per_sample,
        "quantile_levels": list(job.quantile_levels),
        "history_length": len(job.history),
        "noise": _noise_dict(job.noise),
        "codec": _codec_dict(job.codec),
        "generation": _params_dict(job.params),
        "scalers": [[s.offset, s.scale] for s in scalers],
        "backend": backend_info,
        "rng": rng_identity(),
        "version": __version__,
    }
