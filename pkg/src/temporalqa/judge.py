"""Chat-completion judge clients with caching and offline stubs.

``ChatJudgeClient`` speaks the common chat-completions HTTP shape (POST a
model + messages payload, read ``choices[0].message.content``) with bounded
concurrency, retry-with-backoff, and an append-only JSONL response cache so
interrupted runs never re-bill completed calls.

URLs with the ``stub://`` scheme are served in-process with deterministic
canned behavior — no network, no keys — which keeps the full pipeline
runnable offline and testable. Stubs:

``stub://fixed?letter=B``   always answers "B"
``stub://yes`` / ``stub://no``  always answers "yes" / "no"
``stub://gate-keywords``    answers "yes" iff the text mentions motion,
                            ordering, duration, or other time words
``stub://hash``             picks an option letter by hashing the prompt
``stub://shortcut?fallback=A``  answers correctly when a ``frame://`` image
                            reference leaks the answer (its last path
                            segment matches an option slug), otherwise
                            falls back to the given letter; with
                            ``fallback=none`` it answers with a sentence
                            containing no option letter
"""

from __future__ import annotations

import base64
import functools
import io
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .seeding import stable_digest

logger = logging.getLogger(__name__)

Message = dict
"""One chat turn: {"role": ..., "content": str | list[part]}."""


class JudgeUnavailable(Exception):
    """The judge endpoint failed after all retries."""


class UnparseableVerdict(Exception):
    """A judge response could not be interpreted as a verdict."""


@dataclass(frozen=True)
class JudgeSpec:
    """Connection settings for one judge endpoint."""

    judge_id: str
    url: str
    model: str = ""
    auth_env: str = ""
    max_in_flight: int = 4
    retries: int = 2
    timeout_s: float = 30.0
    retry_backoff_s: float = 0.5


# ---------------------------------------------------------------------------
# Response cache
# ---------------------------------------------------------------------------


class ResponseCache:
    """Append-only JSONL key/value cache, safe for threaded writers.

    Lines are ``{"key": ..., "value": ...}``; on load, later lines win.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._values: dict[str, str] = {}
        self._lock = threading.Lock()
        self._handle = None
        self.hits = 0
        if self._path is not None:
            if self._path.exists():
                for line in self._path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        record = json.loads(line)
                        self._values[record["key"]] = record["value"]
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self._path.open("a", encoding="utf-8")

    def __len__(self) -> int:
        return len(self._values)

    def get(self, key: str) -> str | None:
        with self._lock:
            value = self._values.get(key)
            if value is not None:
                self.hits += 1
            return value

    def put(self, key: str, value: str) -> None:
        with self._lock:
            if key in self._values:
                return
            self._values[key] = value
            if self._handle is not None:
                self._handle.write(json.dumps({"key": key, "value": value}) + "\n")
                self._handle.flush()

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    def __enter__(self) -> "ResponseCache":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Message helpers
# ---------------------------------------------------------------------------


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(url: str) -> dict:
    return {"type": "image_url", "image_url": {"url": url}}


def user_message(text: str, image_url: str | None = None) -> Message:
    if image_url is None:
        return {"role": "user", "content": text}
    return {"role": "user", "content": [image_part(image_url), text_part(text)]}


def frame_reference(video_uri: str, position: float) -> str:
    """A resolvable pointer to one frame: the video plus a 0..1 position."""
    return f"frame://{video_uri}?pos={position:.6f}"


@functools.lru_cache(maxsize=8)
def black_image_data_uri(width: int = 336, height: int = 336) -> str:
    """A solid-black PNG as a data URI, for content-blind probing."""
    from PIL import Image

    buffer = io.BytesIO()
    Image.new("RGB", (width, height), (0, 0, 0)).save(buffer, format="PNG")
    encoded = base64.b64encode(buffer.getvalue()).decode("ascii")
    return f"data:image/png;base64,{encoded}"


def _message_text(messages: list[Message]) -> str:
    chunks = []
    for message in messages:
        content = message.get("content", "")
        if isinstance(content, str):
            chunks.append(content)
        else:
            for part in content:
                if part.get("type") == "text":
                    chunks.append(part.get("text", ""))
    return "\n".join(chunks)


def _message_image_urls(messages: list[Message]) -> list[str]:
    urls = []
    for message in messages:
        content = message.get("content", "")
        if isinstance(content, list):
            for part in content:
                if part.get("type") == "image_url":
                    urls.append(part["image_url"]["url"])
    return urls


# ---------------------------------------------------------------------------
# Offline stubs
# ---------------------------------------------------------------------------

_OPTION_LINE = re.compile(r"^([A-Z])\.\s+(.*)$", re.MULTILINE)

_TEMPORAL_WORDS = re.compile(
    r"\b(?:before|after|order|then|while|during|first|next|finally|begins?|"
    r"ends?|backwards?|forwards?|reversed?|how\s+long|duration|directions?|"
    r"moving|moves?|faster|slower|sequence)\b",
    re.IGNORECASE,
)


def slugify(text: str) -> str:
    """Lowercase, alphanumeric-and-dash form of a phrase (for URI segments)."""
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def _parse_options(text: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(2).strip()) for m in _OPTION_LINE.finditer(text)]


def _frame_source_segment(image_url: str) -> str | None:
    """Last path segment of the video a frame:// reference points into."""
    if not image_url.startswith("frame://"):
        return None
    remainder = image_url[len("frame://"):]
    remainder = remainder.split("?pos=", 1)[0]
    return remainder.rstrip("/").rsplit("/", 1)[-1]


def _stub_response(url: str, messages: list[Message]) -> str:
    parts = urlsplit(url)
    kind = parts.netloc or parts.path.lstrip("/")
    params = {k: v[-1] for k, v in parse_qs(parts.query).items()}
    text = _message_text(messages)

    if kind == "fixed":
        return params.get("letter", "A")
    if kind == "yes":
        return "yes"
    if kind == "no":
        return "no"
    if kind == "gate-keywords":
        # Prompts that embed a conversation label their payload; judge only
        # the last labeled block so the surrounding instructions (which
        # naturally mention time) don't trigger the keyword scan.
        scanned = text.rsplit("Conversation:", 1)[-1]
        return "yes" if _TEMPORAL_WORDS.search(scanned) else "no"
    if kind == "hash":
        options = _parse_options(text)
        if not options:
            return "I cannot tell."
        pick = int(stable_digest("stub-hash", text), 16) % len(options)
        return options[pick][0]
    if kind == "shortcut":
        options = _parse_options(text)
        for image_url in _message_image_urls(messages):
            segment = _frame_source_segment(image_url)
            if segment is None:
                continue
            for letter, option_text in options:
                if slugify(option_text) == segment:
                    return letter
        fallback = params.get("fallback", "none")
        if fallback.lower() == "none":
            return "I cannot tell from this frame."
        return fallback
    raise JudgeUnavailable(f"unknown stub endpoint {url!r}")


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class ChatJudgeClient:
    """One judge endpoint with caching, retries, and bounded fan-out."""

    def __init__(self, spec: JudgeSpec, cache: ResponseCache | None = None):
        self.spec = spec
        self.cache = cache
        self.calls_made = 0  # endpoint invocations, excluding cache hits
        self._lock = threading.Lock()
        self._client = None

    @property
    def is_stub(self) -> bool:
        return self.spec.url.startswith("stub://")

    def complete(self, key: str, messages: list[Message]) -> str:
        """Return the completion for ``messages``, consulting the cache.

        ``key`` is the caller's idempotency key; identical keys reuse the
        cached response without contacting the endpoint.
        """
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        response = self._invoke(messages)
        if self.cache is not None:
            self.cache.put(key, response)
        return response

    def map(self, keyed_messages: list[tuple[str, list[Message]]]) -> list[str]:
        """Complete many requests with bounded concurrency, preserving order."""
        if len(keyed_messages) <= 1 or self.spec.max_in_flight <= 1:
            return [self.complete(k, m) for k, m in keyed_messages]
        with ThreadPoolExecutor(max_workers=self.spec.max_in_flight) as pool:
            return list(pool.map(lambda km: self.complete(km[0], km[1]), keyed_messages))

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def __enter__(self) -> "ChatJudgeClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- internals ----------------------------------------------------------

    def _invoke(self, messages: list[Message]) -> str:
        with self._lock:
            self.calls_made += 1
        if self.is_stub:
            return _stub_response(self.spec.url, messages)
        return self._http_invoke(messages)

    def _http_client(self):
        import httpx

        with self._lock:
            if self._client is None:
                self._client = httpx.Client(timeout=self.spec.timeout_s)
            return self._client

    def _http_invoke(self, messages: list[Message]) -> str:
        import httpx

        payload = {"model": self.spec.model, "messages": messages}
        headers = {}
        if self.spec.auth_env:
            token = os.environ.get(self.spec.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        client = self._http_client()
        last_error = "no attempts made"
        for attempt in range(self.spec.retries + 1):
            if attempt:
                time.sleep(self.spec.retry_backoff_s * 2 ** (attempt - 1))
            try:
                response = client.post(self.spec.url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                logger.warning("judge %s attempt %d: %s", self.spec.judge_id, attempt, exc)
                continue
            if response.status_code == 200:
                try:
                    return response.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise JudgeUnavailable(
                        f"judge {self.spec.judge_id}: unexpected response shape ({exc})"
                    ) from exc
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                logger.warning(
                    "judge %s attempt %d: HTTP %d, retrying",
                    self.spec.judge_id, attempt, response.status_code,
                )
                continue
            raise JudgeUnavailable(
                f"judge {self.spec.judge_id}: HTTP {response.status_code}: "
                f"{response.text[:200]}"
            )
        raise JudgeUnavailable(
            f"judge {self.spec.judge_id}: gave up after {self.spec.retries + 1} "
            f"attempts ({last_error})"
        )
