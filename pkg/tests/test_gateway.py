import json
import threading

import httpx
import numpy as np
import pytest

from partnermas.gateway import (
    CallableProvider,
    CompletionRequest,
    EmptyCompletion,
    Gateway,
    HashingEmbedder,
    HTTPChatProvider,
    HTTPEmbedder,
    ParseFailure,
    ProviderError,
    ProviderReply,
    ProviderUnavailable,
    RecordingProvider,
    RetryPolicy,
    Role,
    ScriptedProvider,
    Shape,
    ShapeViolation,
    StructuredOutputError,
    cosine,
    dump_fixtures,
    extract_structured,
    find_json_object,
    proxy_tokens,
)


def req(**kw):
    base = dict(role=Role.SPECIALIST, system_text="sys", user_text="user text", case_id="C1", agent_name="A")
    return CompletionRequest(**{**base, **kw})


def test_proxy_tokens_rounds_up():
    assert [proxy_tokens(s) for s in ("", "a", "abcd", "abcde")] == [0, 1, 1, 2]


def test_http_retries_transient_errors_then_succeeds(monkeypatch):
    statuses = iter([503, 503, 200])
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(json.loads(request.content))
        code = next(statuses)
        if code != 200:
            return httpx.Response(code)
        body = {"choices": [{"message": {"content": "hello"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 2}}
        return httpx.Response(200, json=body)

    monkeypatch.setenv("PMAS_ENDPOINT_ACME", "http://acme.test/v1")
    monkeypatch.setenv("PMAS_API_KEY_ACME", "k-123")
    provider = HTTPChatProvider("acme", "m1", transport=httpx.MockTransport(handler))
    delays = []
    gw = Gateway(provider, retry=RetryPolicy(max_attempts=3, base_delay=0.5), sleep=delays.append)
    result = gw.complete(req())
    assert result.attempt_count == 3
    assert (result.prompt_tokens, result.completion_tokens) == (7, 2)
    assert delays == [0.5, 1.0]
    assert seen[0]["model"] == "m1"
    entry = gw.ledger.entries()[("C1", "specialist", "A")]
    assert entry.failed_attempts == 2 and entry.call_count == 1


def test_http_gives_up_after_max_attempts(monkeypatch):
    monkeypatch.setenv("PMAS_ENDPOINT_ACME", "http://acme.test")
    provider = HTTPChatProvider("acme", "m1", transport=httpx.MockTransport(lambda r: httpx.Response(429)))
    gw = Gateway(provider, retry=RetryPolicy(max_attempts=2), sleep=lambda s: None)
    with pytest.raises(ProviderUnavailable):
        gw.complete(req())


def test_http_client_errors_are_not_retried(monkeypatch):
    calls = []

    def handler(r):
        calls.append(r)
        return httpx.Response(400, text="bad")

    monkeypatch.setenv("PMAS_ENDPOINT_ACME", "http://acme.test")
    provider = HTTPChatProvider("acme", "m1", transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderError):
        Gateway(provider, sleep=lambda s: None).complete(req())
    assert len(calls) == 1


def test_http_needs_endpoint_from_environment(monkeypatch):
    monkeypatch.delenv("PMAS_ENDPOINT_NOWHERE", raising=False)
    with pytest.raises(ProviderError, match="PMAS_ENDPOINT_NOWHERE"):
        HTTPChatProvider("nowhere", "m")


def test_proxy_tokens_when_usage_missing():
    gw = Gateway(CallableProvider(lambda r: "abcdefgh"))
    result = gw.complete(req(system_text="ab", user_text="cd"))
    assert (result.prompt_tokens, result.completion_tokens) == (1, 2)
    assert gw.ledger.totals("C1") == {"prompt_tokens": 1, "completion_tokens": 2, "call_count": 1, "total_tokens": 3}


def test_empty_completion_is_an_error():
    with pytest.raises(EmptyCompletion):
        Gateway(CallableProvider(lambda r: "   ")).complete(req())


def test_role_routing_and_missing_provider():
    gw = Gateway({"planner": CallableProvider(lambda r: "p", "P"), "default": CallableProvider(lambda r: "d", "D")})
    assert gw.complete(req(role=Role.PLANNER)).provider_id == "P"
    assert gw.complete(req()).provider_id == "D"
    with pytest.raises(ProviderError):
        Gateway({"planner": CallableProvider(lambda r: "p")}).complete(req())


def test_structured_repair_happens_once():
    replies = {False: "not json at all", True: '{"answer": 1}'}
    gw = Gateway(CallableProvider(lambda r: replies[r.repair]))
    obj, results = gw.complete_structured(req(), Shape("x", ("answer",)))
    assert obj == {"answer": 1} and len(results) == 2
    assert gw.ledger.calls("C1", Role.SPECIALIST) == 2


def test_structured_gives_up_after_repair():
    gw = Gateway(CallableProvider(lambda r: '{"other": 1}'))
    with pytest.raises(StructuredOutputError) as info:
        gw.complete_structured(req(), Shape("x", ("answer",)))
    assert info.value.kind == "shape-violation"
    assert len(info.value.raw_texts) == 2


def test_find_json_object_skips_prose_and_fences():
    text = 'Sure! {not json} here:\n```json\n{"a": {"b": [1, 2]}}\n```'
    assert find_json_object(text) == {"a": {"b": [1, 2]}}
    with pytest.raises(ParseFailure):
        find_json_object("[1, 2]")


def test_nested_shape_paths():
    shape = Shape("r", ("s.t",))
    assert extract_structured('{"s": {"t": 0}}', shape) == {"s": {"t": 0}}
    with pytest.raises(ShapeViolation):
        extract_structured('{"s": 1}', shape)
    assert shape.requires("t")


def test_scripted_round_trip(tmp_path):
    rec = RecordingProvider(CallableProvider(lambda r: f"reply {r.turn_index}"))
    gw = Gateway(rec)
    for turn in range(3):
        gw.complete(req(turn_index=turn))
    path = dump_fixtures(rec.recorded, tmp_path / "f.json")
    replay = Gateway(ScriptedProvider.load(path))
    assert [replay.complete(req(turn_index=t)).text for t in range(3)] == ["reply 0", "reply 1", "reply 2"]
    with pytest.raises(ProviderError, match="no scripted fixture"):
        replay.complete(req(turn_index=9))


def test_fixture_schema_version_is_checked(tmp_path):
    path = tmp_path / "f.json"
    path.write_text(json.dumps({"schema_version": 99, "fixtures": []}))
    with pytest.raises(ProviderError):
        ScriptedProvider.load(path)


def test_concurrency_cap_per_provider():
    active, peak = [0], [0]
    lock = threading.Lock()
    gate = threading.Event()

    def slow(r):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        gate.wait(0.05)
        with lock:
            active[0] -= 1
        return ProviderReply("ok", 1, 1)

    gw = Gateway(CallableProvider(slow), max_concurrent=2)
    threads = [threading.Thread(target=gw.complete, args=(req(turn_index=i),)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2
    assert gw.ledger.totals()["call_count"] == 6


def test_hashing_embedder_is_deterministic():
    e = HashingEmbedder(64)
    a = e.embed(["network analyst for deal flow", "geography expert"])
    assert a.shape == (2, 64)
    assert np.array_equal(a, HashingEmbedder(64).embed(["network analyst for deal flow", "geography expert"]))
    assert cosine(a[0], a[0]) == pytest.approx(1.0)
    assert cosine(a[0], np.zeros(64)) == 0.0


def test_http_embedder_retries_and_orders_rows():
    statuses = iter([502, 200])

    def handler(r):
        if next(statuses) != 200:
            return httpx.Response(502)
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]})

    e = HTTPEmbedder("x", "emb", endpoint="http://e.test/v1", transport=httpx.MockTransport(handler),
                     sleep=lambda s: None)
    out = e.embed(["a", "b"])
    assert out.tolist() == [[1, 0], [0, 1]]
    assert e.dimension == 2

