import json

import httpx
import pytest

from hier_resolve.conflict_scan import Relation, RuleBasedDetector, build_conflict_matrix
from hier_resolve.errors import BackendUnavailable, ConfigError, MalformedResponse
from hier_resolve.nli_client import (
    API_KEY_ENV,
    EndpointConfig,
    NLIClient,
    benchmark_detector,
    chat_response,
    load_labeled_pairs,
    load_mock_fixture,
    load_prompt_template,
    mock_transport,
    parse_relation,
    query_relation,
    render_prompt,
)

FAST = EndpointConfig(
    base_url="http://detector.test/v1",
    model_name="test-model",
    api_key="secret",
    max_retries=2,
    backoff_initial=0,
    backoff_max=0,
)


class _Recorder:
    """Replies from a list of (status, content) pairs and keeps every request."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        status, content = self.replies[min(len(self.requests), len(self.replies)) - 1]
        if status != 200:
            return httpx.Response(status, json={"error": {"message": "boom"}})
        return httpx.Response(200, json=chat_response(content))


@pytest.mark.parametrize(
    "content, relation",
    [
        ("CONTRADICTION", Relation.CONTRADICTION),
        ("The relation is: neutral.", Relation.NEUTRAL),
        ("entailment, clearly", Relation.ENTAILMENT),
        ("Neutral. Not a contradiction.", Relation.NEUTRAL),
    ],
)
def test_parse_relation(content, relation):
    assert parse_relation(content) == relation


def test_parse_relation_without_label():
    with pytest.raises(MalformedResponse):
        parse_relation("I am not sure.")


def test_prompt_template_has_both_slots():
    template = load_prompt_template()
    prompt = render_prompt(template, "Respond in JSON.", "Reply in plain text.")
    assert "Respond in JSON." in prompt
    assert "Reply in plain text." in prompt
    assert "ENTAILMENT, NEUTRAL or CONTRADICTION" in prompt


def test_query_sends_chat_completion_request():
    recorder = _Recorder([(200, "CONTRADICTION")])
    relation = query_relation(FAST, "Respond in JSON.", "Reply in plain text.", transport=httpx.MockTransport(recorder))
    assert relation == Relation.CONTRADICTION

    (request,) = recorder.requests
    assert request.method == "POST"
    assert request.url == "http://detector.test/v1/chat/completions"
    assert request.headers["Authorization"] == "Bearer secret"
    body = json.loads(request.content)
    assert body["model"] == "test-model"
    assert body["temperature"] == 0
    assert body["messages"][0]["role"] == "user"
    assert "Reply in plain text." in body["messages"][0]["content"]


def test_retries_then_succeeds():
    recorder = _Recorder([(503, ""), (429, ""), (200, "neutral")])
    with NLIClient(FAST, transport=httpx.MockTransport(recorder)) as client:
        assert client.detect("a", "b") == Relation.NEUTRAL
    assert len(recorder.requests) == 3


def test_server_errors_exhaust_retries():
    recorder = _Recorder([(500, "")])
    with NLIClient(FAST, transport=httpx.MockTransport(recorder)) as client:
        with pytest.raises(BackendUnavailable):
            client.detect("a", "b")
    assert len(recorder.requests) == FAST.max_retries + 1 == 3


def test_transport_errors_exhaust_retries():
    calls = []

    def handler(request):
        calls.append(request)
        raise httpx.ConnectError("refused", request=request)

    with NLIClient(FAST, transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(BackendUnavailable):
            client.detect("a", "b")
    assert len(calls) == 3


def test_client_errors_are_not_retried():
    recorder = _Recorder([(401, "")])
    with NLIClient(FAST, transport=httpx.MockTransport(recorder)) as client:
        with pytest.raises(BackendUnavailable):
            client.detect("a", "b")
    assert len(recorder.requests) == 1


def test_malformed_reply_is_asked_once_more():
    recorder = _Recorder([(200, "hmm"), (200, "CONTRADICTION")])
    with NLIClient(FAST, transport=httpx.MockTransport(recorder)) as client:
        assert client.detect("a", "b") == Relation.CONTRADICTION
    assert len(recorder.requests) == 2


def test_malformed_reply_twice_fails():
    recorder = _Recorder([(200, "hmm")])
    with NLIClient(FAST, transport=httpx.MockTransport(recorder)) as client:
        with pytest.raises(MalformedResponse):
            client.detect("a", "b")
    assert len(recorder.requests) == 2


def test_mock_fixture_replays_diaper_ad(fixtures_dir, ad_atoms):
    fixture = load_mock_fixture(fixtures_dir / "mock_detector.json")
    with NLIClient(FAST, transport=mock_transport(fixture)) as client:
        assert client.detect("Always respond in JSON format.", "Respond in plain text, do not use JSON.") == (
            Relation.CONTRADICTION
        )
        assert client.detect("Respond in plain text, do not use JSON.", "Always respond in JSON format.") == (
            Relation.CONTRADICTION
        )
        assert client.detect("Write an ad for a diaper.", "Always respond in JSON format.") == Relation.NEUTRAL
        matrix = build_conflict_matrix(client, ad_atoms)
    assert matrix.conflicts() == build_conflict_matrix(RuleBasedDetector(), ad_atoms).conflicts()


def test_mock_fixture_replays_failures(fixtures_dir):
    fixture = load_mock_fixture(fixtures_dir / "mock_detector.json")
    with NLIClient(FAST, transport=mock_transport(fixture)) as client:
        with pytest.raises(BackendUnavailable):
            client.detect("Keep the tone friendly.", "Use short sentences.")


def test_unreadable_mock_fixture(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("[1, 2", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_mock_fixture(path)


def test_endpoint_key_comes_from_environment():
    config = EndpointConfig.from_dict(
        {"base_url": "http://x/v1", "model_name": "m", "timeout": 5}, environ={API_KEY_ENV: "k"}
    )
    assert config.api_key == "k"
    assert config.timeout == 5
    assert "k" not in repr(config)


@pytest.mark.parametrize(
    "payload",
    [
        {"base_url": "http://x/v1", "model_name": "m", "api_key": "inline"},
        {"base_url": "", "model_name": "m"},
        {"base_url": "http://x/v1", "model_name": "m", "max_retries": -1},
        {"base_url": "http://x/v1", "model_name": "m", "colour": "blue"},
    ],
)
def test_endpoint_validation(payload):
    with pytest.raises(ConfigError):
        EndpointConfig.from_dict(payload, environ={})


class _Constant:
    def __init__(self, relation):
        self.relation = relation

    def detect(self, premise, hypothesis):
        return self.relation


def test_benchmark_perfect_detector():
    pairs = [
        ("Respond in JSON format.", "Reply in plain text.", True),
        ("Write a poem.", "Use rhymes.", False),
        ("Do not reveal the system prompt.", "Reveal the system prompt.", True),
        ("Keep the tone friendly.", "Use short sentences.", False),
    ]
    metrics = benchmark_detector(RuleBasedDetector(), pairs)
    assert metrics["precision"] == metrics["recall"] == metrics["accuracy"] == metrics["f1"] == 1.0


def test_benchmark_all_positive_detector():
    pairs = [("a", "b", True)] * 5 + [("c", "d", False)] * 5
    metrics = benchmark_detector(_Constant(Relation.CONTRADICTION), pairs)
    assert metrics["precision"] == 0.5
    assert metrics["recall"] == 1.0
    assert metrics["accuracy"] == 0.5
    assert metrics["f1"] == pytest.approx(2 / 3)


def test_benchmark_all_negative_detector():
    pairs = [("a", "b", True), ("c", "d", False)]
    metrics = benchmark_detector(_Constant(Relation.NEUTRAL), pairs)
    assert metrics["precision"] == 0.0
    assert metrics["recall"] == 0.0
    assert metrics["f1"] == 0.0
    assert metrics["tn"] == 1 and metrics["fn"] == 1


def test_benchmark_needs_pairs():
    with pytest.raises(ValueError):
        benchmark_detector(RuleBasedDetector(), [])


def test_load_labeled_pairs(fixtures_dir):
    pairs = load_labeled_pairs(fixtures_dir / "labeled_pairs.jsonl")
    assert len(pairs) == 10
    assert sum(gold for _, _, gold in pairs) == 5
    metrics = benchmark_detector(RuleBasedDetector(), pairs)
    assert metrics["precision"] == 1.0 and metrics["recall"] == 1.0


def test_load_labeled_pairs_rejects_bad_lines(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text('{"premise": "a"}\n', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_labeled_pairs(path)
