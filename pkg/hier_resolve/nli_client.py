"""
External conflict detector backed by a chat-completions HTTP endpoint.

The endpoint receives a versioned prompt asking for one relation label and
the first ENTAILMENT / NEUTRAL / CONTRADICTION token in the reply is used.
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import httpx
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_random_exponential,
)

from hier_resolve.conflict_scan import Detector, Relation
from hier_resolve.errors import BackendUnavailable, ConfigError, MalformedResponse

log = logging.getLogger(__name__)

API_KEY_ENV = "HIER_RESOLVE_API_KEY"
PROMPT_RESOURCE = "conflict_prompt_v1.txt"

_LABEL = re.compile(r"\b(entailment|neutral|contradiction)\b", re.IGNORECASE)


@dataclass(frozen=True)
class EndpointConfig:
    """
    Parameters:
        base_url: API root; requests go to <base_url>/chat/completions.
        model_name: model identifier sent with every request.
        api_key: bearer token, read from HIER_RESOLVE_API_KEY.
        timeout: per-request timeout in seconds.
        max_retries: retries after the first attempt.
        backoff_initial / backoff_max: exponential jitter window in seconds.
    """

    base_url: str
    model_name: str
    api_key: str = field(default="", repr=False)
    timeout: float = 30.0
    max_retries: int = 3
    backoff_initial: float = 0.5
    backoff_max: float = 8.0

    def __post_init__(self):
        if not self.base_url:
            raise ConfigError("endpoint.base_url must not be empty")
        if not self.model_name:
            raise ConfigError("endpoint.model_name must not be empty")
        if self.max_retries < 0:
            raise ConfigError(f"endpoint.max_retries must be >= 0, got {self.max_retries}")
        if self.timeout <= 0:
            raise ConfigError(f"endpoint.timeout must be positive, got {self.timeout}")

    @classmethod
    def from_dict(cls, payload: dict, environ=None) -> "EndpointConfig":
        environ = os.environ if environ is None else environ
        if "api_key" in payload:
            raise ConfigError(f"Do not store the API key in the config file, set {API_KEY_ENV} instead")
        try:
            return cls(api_key=environ.get(API_KEY_ENV, ""), **payload)
        except TypeError as e:
            raise ConfigError(f"Invalid endpoint section: {e}")


def load_prompt_template(path: Optional[Union[str, Path]] = None) -> str:
    if path is None:
        return resources.files("hier_resolve").joinpath("data", PROMPT_RESOURCE).read_text(encoding="utf-8")
    return Path(path).read_text(encoding="utf-8")


def render_prompt(template: str, premise: str, hypothesis: str) -> str:
    return template.format(premise=premise, hypothesis=hypothesis)


def parse_relation(content: str) -> Relation:
    """First label token in the reply, case-insensitive."""
    match = _LABEL.search(content or "")
    if match is None:
        raise MalformedResponse(f"No relation label in response: {content!r}")
    return Relation(match.group(1).lower())


class _RetryableStatus(Exception):
    def __init__(self, status_code: int):
        super().__init__(f"HTTP {status_code}")
        self.status_code = status_code


def _retryable(status_code: int) -> bool:
    return status_code == 429 or status_code >= 500


class NLIClient:
    """
    Detector that asks a remote model for the relation label.

    The underlying httpx.Client is safe to share between the scan worker
    threads; no other state is mutated after construction.
    """

    def __init__(
        self,
        config: EndpointConfig,
        transport: Optional[httpx.BaseTransport] = None,
        template: Optional[str] = None,
    ):
        self.config = config
        self.template = template or load_prompt_template()
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def detect(self, premise: str, hypothesis: str) -> Relation:
        prompt = render_prompt(self.template, premise, hypothesis)
        # an unparseable reply gets one more request before giving up
        for attempt in (1, 2):
            content = self._complete(prompt)
            try:
                return parse_relation(content)
            except MalformedResponse:
                if attempt == 2:
                    raise
                log.warning(f"Unparseable detector reply, asking again: {content!r}")

    def _complete(self, prompt: str) -> str:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        retrying = Retrying(
            stop=stop_after_attempt(self.config.max_retries + 1),
            wait=wait_random_exponential(multiplier=self.config.backoff_initial, max=self.config.backoff_max),
            retry=retry_if_exception_type((httpx.TransportError, _RetryableStatus)),
            before_sleep=before_sleep_log(log, logging.WARNING),
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    response = self._client.post("/chat/completions", json=body)
                    if _retryable(response.status_code):
                        raise _RetryableStatus(response.status_code)
                    response.raise_for_status()
        except (httpx.TransportError, _RetryableStatus) as e:
            raise BackendUnavailable(
                f"Detector endpoint failed after {self.config.max_retries + 1} attempts: {e}"
            )
        except httpx.HTTPStatusError as e:
            raise BackendUnavailable(f"Detector endpoint rejected the request: {e}")

        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedResponse(f"Unexpected chat-completions payload: {response.text[:200]!r}")


def query_relation(
    config: EndpointConfig,
    premise: str,
    hypothesis: str,
    transport: Optional[httpx.BaseTransport] = None,
) -> Relation:
    with NLIClient(config, transport=transport) as client:
        return client.detect(premise, hypothesis)


def chat_response(content: str) -> dict:
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


def load_mock_fixture(path: Union[str, Path]) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read mock fixture {path}: {e}")
    if not isinstance(payload, dict):
        raise ConfigError(f"Mock fixture must be a JSON object: {path}")
    return payload


def mock_transport(fixture: dict, template: Optional[str] = None) -> httpx.MockTransport:
    """
    Replay recorded replies keyed by (premise, hypothesis).

    Fixture layout:
        {"responses": [{"premise": ..., "hypothesis": ..., "content": "CONTRADICTION"}
                       | {"premise": ..., "hypothesis": ..., "status": 503}],
         "default": "NEUTRAL"}
    """
    template = template or load_prompt_template()
    table = {render_prompt(template, entry["premise"], entry["hypothesis"]): entry for entry in fixture.get("responses", [])}
    default = fixture.get("default", "NEUTRAL")

    def handler(request: httpx.Request) -> httpx.Response:
        prompt = json.loads(request.content)["messages"][-1]["content"]
        entry = table.get(prompt, {})
        if "status" in entry:
            return httpx.Response(entry["status"], json={"error": {"message": "replayed failure"}})
        return httpx.Response(200, json=chat_response(entry.get("content", default)))

    return httpx.MockTransport(handler)


def benchmark_detector(detector: Detector, labeled_pairs: Iterable[tuple[str, str, bool]]) -> dict:
    """
    Binary detection metrics with Contradiction as the positive class.

    Arguments:
        detector: any object with detect(premise, hypothesis).
        labeled_pairs: (premise, hypothesis, gold_conflict) triples.
    Returns:
        dict with precision, recall, accuracy, f1 and the raw tp/fp/tn/fn counts.
        A metric whose denominator is zero is reported as 0.0.
    """
    tp = fp = tn = fn = 0
    for premise, hypothesis, gold in labeled_pairs:
        predicted = detector.detect(premise, hypothesis) == Relation.CONTRADICTION
        if predicted and gold:
            tp += 1
        elif predicted:
            fp += 1
        elif gold:
            fn += 1
        else:
            tn += 1

    total = tp + fp + tn + fn
    if total == 0:
        raise ValueError("benchmark_detector needs at least one labeled pair")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    metrics = {
        "precision": precision,
        "recall": recall,
        "accuracy": (tp + tn) / total,
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
    }
    log.info(f"Detector benchmark over {total} pairs: precision={precision:.3f} recall={recall:.3f}")
    return metrics


def load_labeled_pairs(path: Union[str, Path]) -> list[tuple[str, str, bool]]:
    """JSONL lines of {"premise", "hypothesis", "conflict"}."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                pairs.append((item["premise"], item["hypothesis"], bool(item["conflict"])))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ConfigError(f"{path}:{number}: invalid labeled pair: {e}")
    return pairs
