"""Command line interface: forecast, synth, bench, theory-check, cost."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backend import (
    Backend,
    BackendConfig,
    EchoTailBackend,
    GenerationParams,
    HttpBackend,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
    Usage,
    default_cost_table,
    estimate_cost,
    load_cost_table,
)
from .bench import (
    DEFAULT_NOISE_LEVELS,
    Normalization,
    SweepConfig,
    compute_metrics,
    load_dataset,
    run_sweep,
    theory_check,
)
from .codec import CodecConfig, fit_scaler, serialize
from .core import SplitSpec, split_series
from .errors import ConfigError, NltsError
from .noise import NOISE_KINDS, NoiseSpec
from .pipeline import ForecastJob, run_nlts
from .synth import KERNEL_KINDS, KernelSpec, generate_benchmark


def _parse_split(text: str) -> SplitSpec:
    """"frac:0.8" / "fraction:0.8" or "horizon:30"."""
    head, _, tail = text.partition(":")
    head = head.strip().lower()
    try:
        if head in ("frac", "fraction"):
            return SplitSpec.by_fraction(float(tail))
        if head == "horizon":
            return SplitSpec.by_horizon(int(tail))
    except ValueError as exc:
        raise click.BadParameter(f"bad split {text!r}: {exc}") from exc
    raise click.BadParameter(f"split must look like frac:0.8 or horizon:30, got {text!r}")


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
def main() -> None:
    """Noise-injected zero-shot time-series forecasting."""


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--value-column", default="value", show_default=True)
@click.option("--split", "split_text", default="frac:0.8", show_default=True,
              help="frac:F keeps ceil(F*T) history points; horizon:H holds out the last H.")
@click.option("--noise", "noise_kind", default="gaussian", show_default=True,
              type=click.Choice([k for k in NOISE_KINDS]))
@click.option("--alpha", default=0.0, show_default=True, type=float,
              help="Noise level as a fraction of the history std.")
@click.option("--samples", default=10, show_default=True, type=int)
@click.option("--precision", default=3, show_default=True, type=int,
              help="Decimal places kept when encoding.")
@click.option("--style", default="raw", show_default=True, type=click.Choice(["raw", "chat"]))
@click.option("--basic/--spaced", "basic_mode", default=False, show_default=True,
              help="Concatenate digits instead of spacing them.")
@click.option("--signed/--unsigned", default=True, show_default=True)
@click.option("--half-bin/--no-half-bin", default=True, show_default=True)
@click.option("--backend", "backend_kind", default="oracle", show_default=True,
              type=click.Choice(["live", "oracle", "echo", "replay"]))
@click.option("--model", default="GPT-3.5-Turbo-Instruct", show_default=True)
@click.option("--temperature", default=0.7, show_default=True, type=float)
@click.option("--top-p", default=1.0, show_default=True, type=float)
@click.option("--max-tokens", default=256, show_default=True, type=int)
@click.option("--retries", default=1, show_default=True, type=int)
@click.option("--echo-tail", default=4, show_default=True, type=int)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--record", "record_path", type=click.Path(dir_okay=False), default=None,
              help="Append request/response pairs to this JSONL cassette.")
@click.option("--replay", "replay_path", type=click.Path(dir_okay=False), default=None,
              help="Serve responses from this cassette instead of any endpoint.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def forecast(
    data, value_column, split_text, noise_kind, alpha, samples, precision, style,
    basic_mode, signed, half_bin, backend_kind, model, temperature, top_p,
    max_tokens, retries, echo_tail, seed, record_path, replay_path, out,
):
    """Forecast the held-out tail of a CSV series."""
    try:
        ds = load_dataset(data, value_column=value_column)
        split = _parse_split(split_text)
        if split.mode == "horizon" and ds.holdout and ds.holdout != split.horizon:
            raise ConfigError(
                f"dataset marks {ds.holdout} holdout rows but --split asked for "
                f"{split.horizon}"
            )
        history, target = split_series(ds.series, split)
        codec = CodecConfig(
            precision_k=precision,
            signed=signed,
            basic_mode=basic_mode,
            half_bin_correction=half_bin,
        )
        noise = NoiseSpec(kind=noise_kind if alpha > 0 else "none", alpha=alpha, seed=seed)
        params = GenerationParams(
            model=model, temperature=temperature, top_p=top_p, max_tokens=max_tokens
        )
        backend = _make_forecast_backend(
            backend_kind, replay_path, history, target, codec, echo_tail
        )
        if record_path:
            backend = RecordingBackend(backend, record_path)
        job = ForecastJob(
            history=history,
            horizon=len(target),
            noise=noise,
            codec=codec,
            params=params,
            prompt_style=style,
            samples=samples,
            seed=seed,
            retries_per_sample=retries,
        )
        result = run_nlts(job, backend)
        norm = Normalization.from_values(ds.series.values)
        metrics = compute_metrics(result.forecast.median, target.values, norm)
        payload = result.to_dict()
        payload["evaluation"] = {
            "mse": metrics.mse,
            "mae": metrics.mae,
            "normalization": metrics.normalization,
        }
        payload["dataset"] = {"path": str(data), "name": ds.name, "length": len(ds.series),
                              "history": len(history), "horizon": len(target)}
        _emit(payload, out)
    except NltsError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


def _make_forecast_backend(
    kind: str, replay_path, history, target, codec: CodecConfig, echo_tail: int
) -> Backend:
    if replay_path is not None:
        return ReplayBackend(replay_path)
    if kind == "replay":
        raise ConfigError("--backend replay needs --replay <cassette>")
    if kind == "oracle":
        scaler = fit_scaler(history, codec)
        return OracleBackend(serialize(target, scaler, codec))
    if kind == "echo":
        return EchoTailBackend(tail=echo_tail, steps=max(64, len(target) * 2))
    return HttpBackend(BackendConfig())


@main.command()
@click.option("--kernels", default="all", show_default=True,
              help='"all" or a comma list drawn from: ' + ", ".join(KERNEL_KINDS))
@click.option("--count", default=1000, show_default=True, type=int,
              help="Series per kernel.")
@click.option("--length", default=430, show_default=True, type=int)
@click.option("--holdout", default=30, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def synth(kernels, count, length, holdout, seed, out):
    """Generate a Gaussian-process benchmark suite as CSV files."""
    try:
        if kernels.strip().lower() == "all":
            specs = [KernelSpec(kind=k) for k in KERNEL_KINDS]
        else:
            names = [k.strip() for k in kernels.split(",") if k.strip()]
            if not names:
                raise ConfigError("no kernels requested")
            specs = [KernelSpec(kind=k) for k in names]
        manifest = generate_benchmark(specs, count, length, holdout, seed, out)
        click.echo(
            f"wrote {len(manifest['files'])} series files and manifest.json to {out}"
        )
    except NltsError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


def sweep_config_from_dict(raw: dict) -> SweepConfig:
    """Build a SweepConfig from the bench JSON config schema."""
    known = {
        "datasets", "noise_levels", "kinds", "samples", "seed", "split",
        "codec", "params", "prompt_style", "retries_per_sample",
        "normalization", "backend",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown bench config keys: {sorted(unknown)}")
    if "datasets" not in raw or not raw["datasets"]:
        raise ConfigError('bench config needs a nonempty "datasets" list')
    kwargs: dict = {"datasets": tuple(raw["datasets"])}
    if "noise_levels" in raw:
        kwargs["noise_levels"] = tuple(raw["noise_levels"])
    if "kinds" in raw:
        kwargs["kinds"] = tuple(raw["kinds"])
    for key in ("samples", "seed", "prompt_style", "retries_per_sample", "normalization"):
        if key in raw:
            kwargs[key] = raw[key]
    if "split" in raw and raw["split"] is not None:
        s = raw["split"]
        kwargs["split"] = (
            SplitSpec.by_fraction(s["fraction"]) if s.get("mode") == "fraction"
            else SplitSpec.by_horizon(s["horizon"])
        )
    if "codec" in raw:
        kwargs["codec"] = CodecConfig(**raw["codec"])
    if "params" in raw:
        p = dict(raw["params"])
        if "stop" in p:
            p["stop"] = tuple(p["stop"])
        kwargs["params"] = GenerationParams(**p)
    if "backend" in raw:
        kwargs["backend"] = dict(raw["backend"])
    return SweepConfig(**kwargs)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON sweep config; see README for the schema.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def bench(config_path, out):
    """Sweep noise levels over datasets and write results.csv/json + summary.md."""
    try:
        raw = json.loads(Path(config_path).read_text())
        cfg = sweep_config_from_dict(raw)
        report = run_sweep(cfg, out)
        ok = sum(1 for c in report["cells"] if c["error"] is None)
        click.echo(f"{ok}/{len(report['cells'])} cells succeeded; reports in {out}")
        if ok < len(report["cells"]):
            sys.exit(3)
    except (NltsError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


@main.command("theory-check")
@click.option("--dim", default=10, show_default=True, type=int)
@click.option("--sigma", default=0.1, show_default=True, type=float)
@click.option("--draws", default=1_000_000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def theory_check_cmd(dim, sigma, draws, seed, out):
    """Monte Carlo check of the second-order noise-perturbation identity."""
    try:
        report = theory_check(dim=dim, sigma=sigma, num_draws=draws, seed=seed)
        _emit(report.to_dict(), out)
    except NltsError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


@main.command()
@click.option("--usage", "usage_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help='JSON {"model": ..., "prompt_tokens": ..., "completion_tokens": ...}.')
@click.option("--model", default=None, help="Override the model named in the usage file.")
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Custom price table JSON.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cost(usage_path, model, table_path, out):
    """Price a usage record; unknown models report null, never zero."""
    try:
        raw = json.loads(Path(usage_path).read_text())
        u = raw.get("usage", raw)
        usage = Usage(
            prompt_tokens=int(u.get("prompt_tokens", 0)),
            completion_tokens=int(u.get("completion_tokens", 0)),
            requests=int(u.get("requests", 0)),
        )
        model_name = model or raw.get("model")
        if not model_name:
            raise ConfigError("no model named in the usage file or via --model")
        table = load_cost_table(table_path) if table_path else default_cost_table()
        amount = estimate_cost(usage, model_name, table)
        payload = {
            "model": model_name,
            "prompt_tokens": usage.prompt_tokens,
            "completion_tokens": usage.completion_tokens,
            "cost_usd": amount,
        }
        if amount is None:
            payload["note"] = "model not in the price table; cost unknown"
        _emit(payload, out)
    except (NltsError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


if __name__ == "__main__":
    main()
