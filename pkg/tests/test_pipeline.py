import json

import numpy as np
import numpy.testing as npt
import pytest

from nlts import (
    CodecConfig,
    ConfigError,
    EchoTailBackend,
    ForecastJob,
    GenerationParams,
    InsufficientSamplesError,
    NoiseSpec,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
    SYSTEM_PROMPT,
    ScriptedBackend,
    SplitSpec,
    TimeSeries,
    build_prompt,
    fit_scaler,
    run_nlts,
    serialize,
    split_series,
)
from nlts.pipeline import USER_PROMPT_TEMPLATE, completion_token_budget

CODEC = CodecConfig()


def make_series(n=72, seed=3):
    rng = np.random.default_rng(seed)
    vals = 50 + 20 * np.sin(np.arange(n) / 5.0) + rng.normal(0, 2, n)
    return TimeSeries(vals, name="demo")


def oracle_for(history, target, codec=CODEC):
    scaler = fit_scaler(history, codec)
    return OracleBackend(serialize(target, scaler, codec))


class TestBuildPrompt:
    def test_raw_appends_separator_cue(self):
        p = build_prompt("1 2, 3 4", "raw", 4, CODEC)
        assert p == "1 2, 3 4, "

    def test_chat_shape(self):
        p = build_prompt("1 2, 3 4", "chat", 4, CODEC)
        assert isinstance(p, list) and len(p) == 2
        assert p[0] == {"role": "system", "content": SYSTEM_PROMPT}
        assert p[1]["role"] == "user"
        assert p[1]["content"] == USER_PROMPT_TEMPLATE.format(sequence="1 2, 3 4")
        assert p[1]["content"].endswith("Sequence:\n1 2, 3 4")

    def test_chat_system_text_pinned(self):
        assert SYSTEM_PROMPT == (
            "You are a helpful assistant specialized in time series forecasting. "
            "The user provides a comma-separated sequence of decimal numbers, and "
            "you will predict the following values."
        )

    def test_user_text_pinned(self):
        assert USER_PROMPT_TEMPLATE.format(sequence="S") == (
            "Please continue the sequence without any additional text or "
            "explanation. Only output the predicted numbers.\nSequence:\nS"
        )

    def test_empty_history_rejected(self):
        with pytest.raises(ConfigError):
            build_prompt("", "raw", 4, CODEC)

    def test_unknown_style(self):
        with pytest.raises(ConfigError):
            build_prompt("1", "formal", 4, CODEC)


class TestTokenBudget:
    def test_scales_with_horizon_and_precision(self):
        assert completion_token_budget(10, CodecConfig(precision_k=3)) == 120
        assert completion_token_budget(10, CodecConfig(precision_k=3, basic_mode=True)) == 60

    def test_floor(self):
        assert completion_token_budget(1, CodecConfig(precision_k=0)) >= 16


class TestForecastJobValidation:
    def test_bad_samples(self):
        s = make_series()
        with pytest.raises(ConfigError):
            ForecastJob(history=s, horizon=4, samples=0)

    def test_bad_horizon(self):
        with pytest.raises(ConfigError):
            ForecastJob(history=make_series(), horizon=0)

    def test_bad_retries(self):
        with pytest.raises(ConfigError):
            ForecastJob(history=make_series(), horizon=2, retries_per_sample=-1)


class TestRunNlts:
    def test_oracle_alpha_zero_recovers_target(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(12))
        backend = oracle_for(hist, tgt)
        job = ForecastJob(history=hist, horizon=12, samples=10, seed=1)
        result = run_nlts(job, backend)
        assert result.valid_samples == 10
        scaler = fit_scaler(hist, CODEC)
        bound = 0.5 * scaler.scale * 1e-3 * (1 + 1e-12)
        assert np.max(np.abs(result.forecast.median - tgt.values)) <= bound
        # all ten paths are bitwise identical; np.var still leaves squared-ulp
        # residue because the mean of m copies of a value can round
        ulp_sq = (np.finfo(float).eps * np.max(np.abs(result.forecast.median))) ** 2
        assert np.max(result.forecast.variance) <= ulp_sq

    def test_noisy_oracle_positive_variance(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(12))
        backend = oracle_for(hist, tgt)
        job = ForecastJob(
            history=hist, horizon=12, samples=10, seed=1,
            noise=NoiseSpec(kind="gaussian", alpha=0.02, seed=1),
        )
        result = run_nlts(job, backend)
        assert result.valid_samples == 10
        assert np.all(result.forecast.variance > 0)

    def test_results_independent_of_worker_count(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(8))
        job = ForecastJob(
            history=hist, horizon=8, samples=8, seed=5,
            noise=NoiseSpec(kind="laplace", alpha=0.01, seed=5),
        )
        wide = oracle_for(hist, tgt)
        narrow = oracle_for(hist, tgt)
        narrow.max_in_flight = 1
        r_wide = run_nlts(job, wide)
        r_narrow = run_nlts(job, narrow)
        npt.assert_array_equal(r_wide.samples.paths, r_narrow.samples.paths)
        npt.assert_array_equal(r_wide.forecast.median, r_narrow.forecast.median)

    def test_deterministic_rerun(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(6))
        job = ForecastJob(
            history=hist, horizon=6, samples=6, seed=9,
            noise=NoiseSpec(kind="gamma", alpha=0.05, seed=9),
        )
        a = run_nlts(job, oracle_for(hist, tgt)).to_dict()
        b = run_nlts(job, oracle_for(hist, tgt)).to_dict()
        a["manifest"].pop("created")
        b["manifest"].pop("created")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_alpha_zero_noise_path_matches_shared(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(6))
        base = dict(history=hist, horizon=6, samples=4, seed=2)
        fresh = run_nlts(ForecastJob(**base, fresh_noise_per_sample=True), oracle_for(hist, tgt))
        shared = run_nlts(ForecastJob(**base, fresh_noise_per_sample=False), oracle_for(hist, tgt))
        npt.assert_array_equal(fresh.samples.paths, shared.samples.paths)

    def test_insufficient_samples(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(6))
        # samples 0-5 reply with prose, 6-9 with a full continuation
        scaler = fit_scaler(hist, CODEC)
        good = serialize(tgt, scaler, CODEC)
        lines = ["sorry, cannot help with that"] * 6 + [good] * 4
        backend = ScriptedBackend(lines=lines)
        job = ForecastJob(history=hist, horizon=6, samples=10, seed=0, retries_per_sample=0)
        with pytest.raises(InsufficientSamplesError):
            run_nlts(job, backend)

    def test_exactly_half_valid_passes(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(6))
        scaler = fit_scaler(hist, CODEC)
        good = serialize(tgt, scaler, CODEC)
        lines = ["no numbers here"] * 5 + [good] * 5
        backend = ScriptedBackend(lines=lines)
        job = ForecastJob(history=hist, horizon=6, samples=10, seed=0, retries_per_sample=0)
        result = run_nlts(job, backend)
        assert result.valid_samples == 5
        assert result.samples.num_samples == 5
        bad = [o for o in result.outcomes if not o.valid]
        assert len(bad) == 5
        assert all(o.attempts == 1 for o in result.outcomes)

    def test_short_continuation_truncated_sample_invalid(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(6))
        backend = ScriptedBackend(lines=["1 0 0 0, 2 0 0 0"])  # only 2 of 6 steps
        job = ForecastJob(history=hist, horizon=6, samples=1, seed=0, retries_per_sample=0)
        with pytest.raises(InsufficientSamplesError):
            run_nlts(job, backend)

    def test_retries_consume_attempts(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(4))

        class FlakyOnce(OracleBackend):
            def __init__(self, text):
                super().__init__(text)
                self.seen = set()

            def complete(self, prompt, params, tag=""):
                if tag.endswith("try-0") and tag not in self.seen:
                    self.seen.add(tag)
                    return ["gibberish"], self._usage(prompt)
                return super().complete(prompt, params, tag=tag)

            def _usage(self, prompt):
                from nlts.backend import _estimate_usage

                return _estimate_usage(prompt, ["gibberish"])

        scaler = fit_scaler(hist, CODEC)
        backend = FlakyOnce(serialize(tgt, scaler, CODEC))
        job = ForecastJob(history=hist, horizon=4, samples=4, seed=0, retries_per_sample=1)
        result = run_nlts(job, backend)
        assert result.valid_samples == 4
        assert all(o.attempts == 2 for o in result.outcomes)

    def test_chat_style_round_trip(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(5))
        backend = EchoTailBackend(tail=3, steps=12)
        job = ForecastJob(history=hist, horizon=5, samples=3, seed=0, prompt_style="chat")
        result = run_nlts(job, backend)
        assert result.valid_samples == 3
        # echo repeats the last 3 history steps; decoded values must match them
        scaler = fit_scaler(hist, CODEC)
        enc = serialize(hist, scaler, CODEC)
        last3 = enc.split(", ")[-3:]
        expected_text = ", ".join((last3 * 2)[:5])
        from nlts import deserialize

        expected, _ = deserialize(expected_text, scaler, CODEC, horizon=5)
        npt.assert_allclose(result.forecast.median, expected, rtol=0, atol=1e-12)

    def test_manifest_contents(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(4))
        job = ForecastJob(history=hist, horizon=4, samples=2, seed=3)
        result = run_nlts(job, oracle_for(hist, tgt))
        m = result.manifest
        assert m["seed"] == 3
        assert m["samples"] == 2
        assert m["horizon"] == 4
        assert m["noise"]["kind"] == "none"
        assert m["codec"]["precision_k"] == 3
        assert len(m["scalers"]) == 2
        assert m["rng"]["generator"] == "numpy.random.PCG64"
        assert m["backend"]["backend"] == "oracle"
        assert "version" in m

    def test_usage_accumulates_across_samples(self):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(4))
        job = ForecastJob(history=hist, horizon=4, samples=5, seed=0)
        result = run_nlts(job, oracle_for(hist, tgt))
        assert result.usage.requests == 5
        assert result.usage.prompt_tokens > 0

    def test_replay_manifest_timestamp_from_cassette(self, tmp_path):
        series = make_series()
        hist, tgt = split_series(series, SplitSpec.by_horizon(4))
        cassette = tmp_path / "c.jsonl"
        job = ForecastJob(history=hist, horizon=4, samples=3, seed=1)
        run_nlts(job, RecordingBackend(oracle_for(hist, tgt), cassette))
        replayed = run_nlts(job, ReplayBackend(cassette))
        recorded_at = json.loads(cassette.read_text().splitlines()[0])["timestamp"]
        assert replayed.manifest["created"] >= recorded_at
        again = run_nlts(job, ReplayBackend(cassette))
        assert json.dumps(replayed.to_dict(), sort_keys=True) == json.dumps(
            again.to_dict(), sort_keys=True
        )
