"""Judge clients: cache, message helpers, offline stubs, HTTP retries."""

import base64
import json

import httpx
import pytest

from temporalqa.judge import (
    ChatJudgeClient,
    JudgeSpec,
    JudgeUnavailable,
    ResponseCache,
    black_image_data_uri,
    frame_reference,
    slugify,
    user_message,
)


def stub_client(url, cache=None, **spec_overrides):
    spec = JudgeSpec(judge_id="stub", url=url, **spec_overrides)
    return ChatJudgeClient(spec, cache=cache)


def ask(url, text, image_url=None):
    return stub_client(url).complete("k", [user_message(text, image_url)])


# ---------------------------------------------------------------------------
# ResponseCache
# ---------------------------------------------------------------------------


def test_cache_in_memory_get_put():
    cache = ResponseCache()
    assert cache.get("a") is None and cache.hits == 0
    cache.put("a", "1")
    assert cache.get("a") == "1" and cache.hits == 1
    assert len(cache) == 1


def test_cache_first_write_wins():
    cache = ResponseCache()
    cache.put("a", "first")
    cache.put("a", "second")
    assert cache.get("a") == "first"


def test_cache_persists_across_instances(tmp_path):
    path = tmp_path / "cache.jsonl"
    with ResponseCache(path) as cache:
        cache.put("a", "1")
        cache.put("b", "2")
    with ResponseCache(path) as reloaded:
        assert reloaded.get("a") == "1"
        assert reloaded.get("b") == "2"
        assert len(reloaded) == 2


def test_cache_later_lines_win_on_load(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text(
        '{"key": "a", "value": "stale"}\n{"key": "a", "value": "fresh"}\n',
        encoding="utf-8",
    )
    with ResponseCache(path) as cache:
        assert cache.get("a") == "fresh"


def test_cache_appends_rather_than_rewriting(tmp_path):
    path = tmp_path / "cache.jsonl"
    with ResponseCache(path) as cache:
        cache.put("a", "1")
    with ResponseCache(path) as cache:
        cache.put("b", "2")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# Message helpers
# ---------------------------------------------------------------------------


def test_user_message_plain_text():
    assert user_message("hello") == {"role": "user", "content": "hello"}


def test_user_message_puts_the_image_before_the_text():
    message = user_message("look", "frame://video://v1?pos=0.5")
    kinds = [part["type"] for part in message["content"]]
    assert kinds == ["image_url", "text"]
    assert message["content"][0]["image_url"]["url"] == "frame://video://v1?pos=0.5"
    assert message["content"][1]["text"] == "look"


def test_frame_reference_format():
    assert frame_reference("video://clip-9", 0.25) == "frame://video://clip-9?pos=0.250000"


def test_black_image_is_a_png_data_uri():
    uri = black_image_data_uri()
    prefix = "data:image/png;base64,"
    assert uri.startswith(prefix)
    raw = base64.b64decode(uri[len(prefix):])
    assert raw[:8] == b"\x89PNG\r\n\x1a\n"
    assert black_image_data_uri() is uri  # memoized


def test_slugify():
    assert slugify("Pick up the cup!") == "pick-up-the-cup"
    assert slugify("  already-sluggy ") == "already-sluggy"
    assert slugify("A&B") == "a-b"


# ---------------------------------------------------------------------------
# Offline stubs
# ---------------------------------------------------------------------------


def test_fixed_stub():
    assert ask("stub://fixed?letter=C", "anything") == "C"
    assert ask("stub://fixed", "anything") == "A"


def test_yes_no_stubs():
    assert ask("stub://yes", "anything") == "yes"
    assert ask("stub://no", "anything") == "no"


def test_gate_stub_spots_time_language():
    assert ask("stub://gate-keywords", "Which way is the ball moving?") == "yes"
    assert ask("stub://gate-keywords", "How long does the stretch last?") == "yes"
    assert ask("stub://gate-keywords", "What color is the cup?") == "no"


def test_gate_stub_matches_whole_words_only():
    # "strengthen" contains "then"; "borders" contains "order".
    assert ask("stub://gate-keywords", "They strengthen friendships.") == "no"
    assert ask("stub://gate-keywords", "The photo shows two borders.") == "no"


def test_gate_stub_scans_only_the_labeled_conversation():
    text = (
        "Decide whether answering needs information about order or duration.\n"
        "Conversation:\nuser: What brand is the blender?\nassistant: Breville."
    )
    assert ask("stub://gate-keywords", text) == "no"


def test_hash_stub_picks_a_listed_letter_deterministically():
    text = "Which way?\nA. left\nB. right\nC. up\nD. down"
    first = ask("stub://hash", text)
    assert first in {"A", "B", "C", "D"}
    assert ask("stub://hash", text) == first
    assert ask("stub://hash", "no options here") == "I cannot tell."


def test_hash_stub_varies_with_the_prompt():
    texts = [f"Q{i}?\nA. left\nB. right\nC. up\nD. down" for i in range(30)]
    letters = {ask("stub://hash", t) for t in texts}
    assert len(letters) > 1


def test_shortcut_stub_reads_the_leaked_answer():
    text = "Which way?\nA. turn left\nB. turn right\nC. hop up"
    image = frame_reference("video://planted/turn-right", 0.4)
    assert ask("stub://shortcut?fallback=A", text, image) == "B"


def test_shortcut_stub_falls_back_without_a_leak():
    text = "Which way?\nA. turn left\nB. turn right"
    image = frame_reference("video://clean/clip-042", 0.4)
    assert ask("stub://shortcut?fallback=B", text, image) == "B"
    assert ask("stub://shortcut?fallback=none", text, image) == (
        "I cannot tell from this frame."
    )
    assert ask("stub://shortcut", text, image) == "I cannot tell from this frame."


def test_shortcut_stub_ignores_non_frame_images():
    text = "Which way?\nA. turn left\nB. turn right"
    assert ask("stub://shortcut?fallback=A", text, black_image_data_uri()) == "A"


def test_unknown_stub_is_unavailable():
    with pytest.raises(JudgeUnavailable):
        ask("stub://oracle", "anything")


# ---------------------------------------------------------------------------
# Client behavior
# ---------------------------------------------------------------------------


def test_client_consults_the_cache_before_the_endpoint():
    cache = ResponseCache()
    client = stub_client("stub://yes", cache=cache)
    assert client.complete("k1", [user_message("q")]) == "yes"
    assert client.complete("k1", [user_message("q")]) == "yes"
    assert client.calls_made == 1
    assert cache.hits == 1
    assert client.complete("k2", [user_message("q")]) == "yes"
    assert client.calls_made == 2


def test_client_map_preserves_request_order():
    client = stub_client("stub://hash", max_in_flight=8)
    keyed = [
        (f"k{i}", [user_message(f"Q{i}?\nA. left\nB. right\nC. up\nD. down")])
        for i in range(40)
    ]
    parallel = client.map(keyed)
    sequential = [stub_client("stub://hash").complete(k, m) for k, m in keyed]
    assert parallel == sequential


def test_client_map_sequential_when_fan_out_disabled():
    client = stub_client("stub://yes", max_in_flight=1)
    assert client.map([("a", [user_message("x")]), ("b", [user_message("y")])]) == [
        "yes",
        "yes",
    ]


def test_is_stub():
    assert stub_client("stub://yes").is_stub
    assert not stub_client("http://example.test/v1").is_stub


# ---------------------------------------------------------------------------
# HTTP transport (mocked; no network)
# ---------------------------------------------------------------------------


def http_client(handler, **spec_overrides):
    spec = JudgeSpec(
        judge_id="remote",
        url="http://judge.test/v1/chat/completions",
        model="judge-model",
        retries=2,
        retry_backoff_s=0.0,
        **spec_overrides,
    )
    client = ChatJudgeClient(spec)
    client._client = httpx.Client(transport=httpx.MockTransport(handler))
    return client


def completion(content):
    return {"choices": [{"message": {"content": content}}]}


def test_http_success():
    seen = []

    def handler(request):
        seen.append(json.loads(request.read()))
        return httpx.Response(200, json=completion("B"))

    client = http_client(handler)
    assert client.complete("k", [user_message("q")]) == "B"
    assert seen[0]["model"] == "judge-model"
    assert seen[0]["messages"] == [{"role": "user", "content": "q"}]


def test_http_retries_on_server_errors():
    codes = iter([500, 503])

    def handler(request):
        try:
            return httpx.Response(next(codes))
        except StopIteration:
            return httpx.Response(200, json=completion("ok"))

    client = http_client(handler)
    assert client.complete("k", [user_message("q")]) == "ok"
    assert client.calls_made == 1  # retries happen inside one invocation


def test_http_gives_up_after_retries():
    client = http_client(lambda request: httpx.Response(503))
    with pytest.raises(JudgeUnavailable, match="gave up"):
        client.complete("k", [user_message("q")])


def test_http_client_error_is_not_retried():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(400, text="bad request")

    client = http_client(handler)
    with pytest.raises(JudgeUnavailable, match="HTTP 400"):
        client.complete("k", [user_message("q")])
    assert len(attempts) == 1


def test_http_unexpected_shape_is_unavailable():
    client = http_client(lambda request: httpx.Response(200, json={"unexpected": True}))
    with pytest.raises(JudgeUnavailable, match="shape"):
        client.complete("k", [user_message("q")])


def test_http_sends_bearer_token_when_configured(monkeypatch):
    monkeypatch.setenv("JUDGE_TOKEN", "sekret")
    headers = []

    def handler(request):
        headers.append(request.headers.get("authorization"))
        return httpx.Response(200, json=completion("ok"))

    client = http_client(handler, auth_env="JUDGE_TOKEN")
    client.complete("k", [user_message("q")])
    assert headers == ["Bearer sekret"]
