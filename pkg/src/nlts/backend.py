"""Generation backends.

One wire contract: complete(prompt) / chat_complete(messages) return a list of
continuation texts plus Usage. Implementations cover an OpenAI-compatible HTTP
endpoint, deterministic offline mocks, and a JSONL record/replay cassette layer
keyed by a canonical request hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AuthError,
    ConfigError,
    ParamError,
    ProtocolError,
    RateLimitError,
    TransportError,
)

ENV_API_KEY = "NLTS_API_KEY"
ENV_API_BASE = "NLTS_API_BASE"


@dataclass(frozen=True)
class GenerationParams:
    """Sampling settings forwarded to the endpoint."""

    model: str = "GPT-3.5-Turbo-Instruct"
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 256
    num_samples: int = 1
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_samples < 1:
            raise ParamError(f"num_samples must be >= 1, got {self.num_samples}")
        if not (self.temperature >= 0.0 and math.isfinite(self.temperature)):
            raise ParamError(f"temperature must be finite and >= 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ParamError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ParamError(f"max_tokens must be >= 1, got {self.max_tokens}")
        object.__setattr__(self, "stop", tuple(self.stop))


@dataclass(frozen=True)
class Usage:
    """Token and request accounting; adds componentwise."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    requests: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        if not isinstance(other, Usage):
            return NotImplemented
        return Usage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
            requests=self.requests + other.requests,
        )

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "requests": self.requests,
        }


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


def _estimate_usage(prompt_text: str, texts: Sequence[str], requests: int = 1) -> Usage:
    return Usage(
        prompt_tokens=_whitespace_tokens(prompt_text),
        completion_tokens=sum(_whitespace_tokens(t) for t in texts),
        requests=requests,
    )


# --- cost accounting ---------------------------------------------------------

DEFAULT_PRICES: dict[str, tuple[float, float]] = {
    # model -> (USD per 1k prompt tokens, USD per 1k completion tokens)
    "GPT-4": (0.03, 0.06),
    "GPT-3.5-Turbo-Instruct": (0.0015, 0.002),
    "Claude-3-Opus": (0.032, 0.16),
    "Claude-3.5-Haiku": (0.00233, 0.01167),
    "Claude-3.5-Sonnet": (0.007, 0.035),
    "Deepseek-V3": (0.0005, 0.002),
    "GLM-4-Air": (0.0005, 0.0005),
    "Qwen3-4B": (0.00021, 0.00084),
}


@dataclass(frozen=True)
class CostTable:
    prices: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        clean: dict[str, tuple[float, float]] = {}
        for model, pair in dict(self.prices).items():
            prompt_price, completion_price = pair
            if prompt_price < 0 or completion_price < 0:
                raise ParamError(f"negative price for {model!r}")
            clean[model] = (float(prompt_price), float(completion_price))
        object.__setattr__(self, "prices", clean)

    def lookup(self, model: str) -> tuple[float, float] | None:
        if model in self.prices:
            return self.prices[model]
        lowered = model.lower()
        for name, pair in self.prices.items():
            if name.lower() == lowered:
                return pair
        return None


def default_cost_table() -> CostTable:
    return CostTable(dict(DEFAULT_PRICES))


def load_cost_table(path: str | Path) -> CostTable:
    """JSON file: {"model": {"prompt_per_1k": x, "completion_per_1k": y}, ...}."""
    raw = json.loads(Path(path).read_text())
    prices = {}
    for model, entry in raw.items():
        prices[model] = (float(entry["prompt_per_1k"]), float(entry["completion_per_1k"]))
    return CostTable(prices)


def estimate_cost(usage: Usage, model: str, table: CostTable | None = None) -> float | None:
    """USD cost of a usage record, or None when the model has no listed price.

    Unknown models are never priced at zero; callers must surface the None.
    """
    table = table or default_cost_table()
    pair = table.lookup(model)
    if pair is None:
        return None
    prompt_price, completion_price = pair
    return usage.prompt_tokens / 1000.0 * prompt_price + (
        usage.completion_tokens / 1000.0 * completion_price
    )


# --- canonical request identity ----------------------------------------------


def canonical_request(endpoint: str, body: Mapping, tag: str) -> dict:
    """Request identity for hashing: endpoint, body, caller tag. Never credentials."""
    return {"endpoint": endpoint, "body": json.loads(json.dumps(body)), "tag": tag}


def request_hash(canonical: Mapping) -> str:
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --- backend interface --------------------------------------------------------


class Backend:
    """Texts-plus-usage generation interface."""

    name = "backend"
    max_in_flight = 4

    def complete(
        self, prompt: str, params: GenerationParams, tag: str = ""
    ) -> tuple[list[str], Usage]:
        raise NotImplementedError

    def chat_complete(
        self, messages: Sequence[Mapping[str, str]], params: GenerationParams, tag: str = ""
    ) -> tuple[list[str], Usage]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"backend": self.name}


def _last_user_content(messages: Sequence[Mapping[str, str]]) -> str:
    if not messages:
        raise ProtocolError("chat request has no messages")
    for message in messages:
        if "role" not in message or "content" not in message:
            raise ProtocolError("chat message missing role or content")
    for message in reversed(messages):
        if message["role"] == "user":
            return message["content"]
    raise ProtocolError("chat request has no user message")


def _messages_text(messages: Sequence[Mapping[str, str]]) -> str:
    return "\n".join(m.get("content", "") for m in messages)


class _MockBackend(Backend):
    """Offline base: chat requests route through complete() on the last user message."""

    def chat_complete(self, messages, params, tag=""):
        content = _last_user_content(messages)
        texts, _ = self.complete(content, params, tag=tag)
        return texts, _estimate_usage(_messages_text(messages), texts)


class OracleBackend(_MockBackend):
    """Returns one fixed continuation regardless of the prompt."""

    name = "oracle"

    def __init__(self, text: str):
        self.text = text

    def complete(self, prompt, params, tag=""):
        texts = [self.text] * params.num_samples
        return texts, _estimate_usage(prompt, texts)

    def describe(self):
        return {"backend": self.name, "text_sha256": hashlib.sha256(self.text.encode()).hexdigest()}


class ConstantBackend(OracleBackend):
    name = "constant"


class EchoTailBackend(_MockBackend):
    """Echoes the last `tail` comma-separated steps of the prompt, cycled to `steps` steps."""

    name = "echo"

    def __init__(self, tail: int = 4, steps: int = 64):
        if tail < 1 or steps < 1:
            raise ConfigError("echo backend needs tail >= 1 and steps >= 1")
        self.tail = tail
        self.steps = steps

    def complete(self, prompt, params, tag=""):
        fragments = [f.strip() for f in prompt.split(",")]
        fragments = [f for f in fragments if f]
        if not fragments:
            raise ProtocolError("echo backend got a prompt with no steps")
        cycle = fragments[-self.tail:]
        out = ", ".join(cycle[i % len(cycle)] for i in range(self.steps))
        texts = [out] * params.num_samples
        return texts, _estimate_usage(prompt, texts)

    def describe(self):
        return {"backend": self.name, "tail": self.tail, "steps": self.steps}


class ScriptedBackend(_MockBackend):
    """Replays fixture lines; line choice follows the sample index in the tag.

    Tags shaped "sample-3/..." map to line 3 (mod line count), so concurrent
    fan-out stays deterministic. Untagged calls walk a locked cursor.
    """

    name = "scripted"

    def __init__(self, lines: Sequence[str] | None = None, path: str | Path | None = None):
        if lines is None:
            if path is None:
                raise ConfigError("scripted backend needs lines or a fixture path")
            lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
        self.lines = list(lines)
        if not self.lines:
            raise ConfigError("scripted backend has no fixture lines")
        self._cursor = 0
        self._lock = threading.Lock()

    @staticmethod
    def _index_from_tag(tag: str) -> int | None:
        if tag.startswith("sample-"):
            head = tag[len("sample-"):].split("/", 1)[0]
            if head.isdigit():
                return int(head)
        return None

    def complete(self, prompt, params, tag=""):
        index = self._index_from_tag(tag)
        if index is None:
            with self._lock:
                index = self._cursor
                self._cursor += 1
        text = self.lines[index % len(self.lines)]
        texts = [text] * params.num_samples
        return texts, _estimate_usage(prompt, texts)

    def describe(self):
        return {"backend": self.name, "lines": len(self.lines)}


# --- HTTP ---------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    """Connection and retry settings for the live HTTP backend."""

    base_url: str | None = None
    api_key: str | None = None
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    timeout: float = 60.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_base <= 0 or self.backoff_cap < self.backoff_base:
            raise ConfigError("need 0 < backoff_base <= backoff_cap")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


class HttpBackend(Backend):
    """OpenAI-compatible client: POST {base}/v1/completions and /v1/chat/completions.

    429 and 5xx responses and transport failures retry with exponential backoff
    plus jitter; realized delays are nondecreasing. 401/403 raise AuthError
    immediately. Usage.requests counts HTTP attempts, not logical calls.
    """

    name = "live"

    def __init__(self, config: BackendConfig = BackendConfig(), sleep=time.sleep):
        base = config.base_url or os.environ.get(ENV_API_BASE, "")
        if not base:
            raise ConfigError(
                f"no endpoint: pass BackendConfig.base_url or set {ENV_API_BASE}"
            )
        self.base_url = base.rstrip("/")
        self.api_key = config.api_key or os.environ.get(ENV_API_KEY)
        self.config = config
        self.max_in_flight = config.max_in_flight
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(config.max_in_flight)
        self._jitter = np.random.Generator(np.random.PCG64(np.random.SeedSequence()))
        self._jitter_lock = threading.Lock()
        import requests

        self._session = requests.Session()
        self._requests = requests

    def describe(self):
        return {"backend": self.name, "base_url": self.base_url}

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _delay(self, attempt: int) -> float:
        base = min(self.config.backoff_cap, self.config.backoff_base * (2.0**attempt))
        with self._jitter_lock:
            frac = float(self._jitter.uniform(0.5, 1.0))
        return base * frac

    def _post(self, path: str, body: Mapping) -> tuple[dict, int]:
        url = self.base_url + path
        attempts = 0
        last_error: Exception | None = None
        rate_limited = False
        with self._sem:
            for attempt in range(self.config.max_retries + 1):
                attempts += 1
                try:
                    resp = self._session.post(
                        url, json=body, headers=self._headers(), timeout=self.config.timeout
                    )
                except self._requests.RequestException as exc:
                    last_error = exc
                    rate_limited = False
                    if attempt < self.config.max_retries:
                        self._sleep(self._delay(attempt))
                    continue
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    rate_limited = resp.status_code == 429
                    last_error = ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                    if attempt < self.config.max_retries:
                        self._sleep(self._delay(attempt))
                    continue
                if resp.status_code != 200:
                    raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json(), attempts
                except ValueError as exc:
                    raise ProtocolError(f"endpoint returned invalid JSON: {exc}") from exc
        if rate_limited:
            raise RateLimitError(
                f"rate limited after {attempts} attempts: {last_error}"
            )
        raise TransportError(f"request failed after {attempts} attempts: {last_error}")

    @staticmethod
    def _usage_from(data: Mapping, prompt_text: str, texts: Sequence[str], attempts: int) -> Usage:
        usage = data.get("usage")
        if isinstance(usage, Mapping):
            try:
                return Usage(
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                    requests=attempts,
                )
            except (TypeError, ValueError):
                pass
        est = _estimate_usage(prompt_text, texts)
        return Usage(est.prompt_tokens, est.completion_tokens, attempts)

    def _body(self, params: GenerationParams) -> dict:
        body = {
            "model": params.model,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "n": params.num_samples,
        }
        if params.stop:
            body["stop"] = list(params.stop)
        return body

    def complete(self, prompt, params, tag=""):
        body = self._body(params)
        body["prompt"] = prompt
        data, attempts = self._post("/v1/completions", body)
        try:
            texts = [choice["text"] for choice in data["choices"]]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"completion response missing choices/text: {exc}") from exc
        if not texts:
            raise ProtocolError("completion response has an empty choices list")
        return texts, self._usage_from(data, prompt, texts, attempts)

    def chat_complete(self, messages, params, tag=""):
        _last_user_content(messages)  # validates shape
        body = self._body(params)
        body["messages"] = [dict(m) for m in messages]
        data, attempts = self._post("/v1/chat/completions", body)
        try:
            texts = [choice["message"]["content"] for choice in data["choices"]]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"chat response missing choices/message: {exc}") from exc
        if not texts:
            raise ProtocolError("chat response has an empty choices list")
        return texts, self._usage_from(data, _messages_text(messages), texts, attempts)


# --- record / replay ----------------------------------------------------------


class RecordingBackend(Backend):
    """Wraps a backend and appends every exchange to a JSONL cassette.

    Line schema: {"request_hash", "canonical_request", "response_body",
    "timestamp"}, where response_body is {"texts": [...], "usage": {...}} and
    request_hash = sha256 of the canonical request JSON.
    """

    name = "record"

    def __init__(self, inner: Backend, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.max_in_flight = inner.max_in_flight
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)

    def _record(self, endpoint: str, body: Mapping, tag: str, texts: list[str], usage: Usage):
        canonical = canonical_request(endpoint, body, tag)
        record = {
            "request_hash": request_hash(canonical),
            "canonical_request": canonical,
            "response_body": {"texts": texts, "usage": usage.to_dict()},
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S+00:00", time.gmtime()),
        }
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")

    def complete(self, prompt, params, tag=""):
        texts, usage = self.inner.complete(prompt, params, tag=tag)
        self._record("completions", {"prompt": prompt, **_param_body(params)}, tag, texts, usage)
        return texts, usage

    def chat_complete(self, messages, params, tag=""):
        texts, usage = self.inner.chat_complete(messages, params, tag=tag)
        body = {"messages": [dict(m) for m in messages], **_param_body(params)}
        self._record("chat", body, tag, texts, usage)
        return texts, usage

    def describe(self):
        return {"backend": self.name, "inner": self.inner.describe(), "cassette": str(self.path)}


def _param_body(params: GenerationParams) -> dict:
    body = {
        "model": params.model,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
        "n": params.num_samples,
    }
    if params.stop:
        body["stop"] = list(params.stop)
    return body


class ReplayBackend(Backend):
    """Serves recorded responses by request hash; any miss is a TransportError.

    On load, each record's stored hash is recomputed from its canonical request;
    records that fail verification are dropped, so tampering surfaces as a miss.
    """

    name = "replay"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise ConfigError(f"cassette not found: {self.path}")
        self._responses: dict[str, dict] = {}
        self.newest_timestamp: str | None = None
        for line_no, line in enumerate(self.path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"cassette line {line_no} is not valid JSON: {exc}") from exc
            stored = record.get("request_hash", "")
            canonical = record.get("canonical_request")
            if canonical is None or request_hash(canonical) != stored:
                continue  # tampered or foreign record: never served
            self._responses[stored] = record["response_body"]
            ts = record.get("timestamp")
            if ts and (self.newest_timestamp is None or ts > self.newest_timestamp):
                self.newest_timestamp = ts

    def _serve(self, endpoint: str, body: Mapping, tag: str) -> tuple[list[str], Usage]:
        h = request_hash(canonical_request(endpoint, body, tag))
        if h not in self._responses:
            raise TransportError(
                f"cassette {self.path} has no response for request {h[:12]}... (tag={tag!r})"
            )
        stored = self._responses[h]
        try:
            texts = list(stored["texts"])
            u = stored.get("usage", {})
            usage = Usage(
                prompt_tokens=int(u.get("prompt_tokens", 0)),
                completion_tokens=int(u.get("completion_tokens", 0)),
                requests=int(u.get("requests", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"cassette response for {h[:12]}... is malformed") from exc
        return texts, usage

    def complete(self, prompt, params, tag=""):
        return self._serve("completions", {"prompt": prompt, **_param_body(params)}, tag)

    def chat_complete(self, messages, params, tag=""):
        body = {"messages": [dict(m) for m in messages], **_param_body(params)}
        return self._serve("chat", body, tag)

    def describe(self):
        info = {"backend": self.name, "cassette": str(self.path)}
        if self.newest_timestamp:
            info["recorded_at"] = self.newest_timestamp
        return info


__all__ = [
    "Backend",
    "BackendConfig",
    "ConstantBackend",
    "CostTable",
    "DEFAULT_PRICES",
    "EchoTailBackend",
    "GenerationParams",
    "HttpBackend",
    "OracleBackend",
    "RecordingBackend",
    "ReplayBackend",
    "ScriptedBackend",
    "Usage",
    "canonical_request",
    "default_cost_table",
    "estimate_cost",
    "load_cost_table",
    "request_hash",
]
