"""Chat-completion and embedding backends.

Every chat call goes through :meth:`ChatBackend.complete`, which consults an
optional on-disk cache, applies the shared rate limiter and concurrency bound,
and retries transient failures. Concrete backends only implement ``_generate``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

API_KEY_ENV = "DUALINF_API_KEY"
DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_OUTPUT = 2048
MAX_RETRIES = 3


class BackendError(RuntimeError):
    pass


class RetryableError(BackendError):
    def __init__(self, message: str, delay: float | None = None):
        super().__init__(message)
        self.delay = delay


class RateLimitError(RetryableError):
    pass


class AuthError(BackendError):
    """Fatal: credentials missing or rejected."""


class UnscriptedPrompt(BackendError):
    def __init__(self, digest: str, index: int | None = None):
        where = f" (call {index})" if index is not None else ""
        super().__init__(f"unscripted prompt {digest}{where}")
        self.digest = digest


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    backend_id: str
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = DEFAULT_MAX_OUTPUT

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output < 1:
            raise ValueError("max_output must be positive")

    @property
    def prompt_digest(self) -> str:
        return prompt_digest(self.system_text, self.user_text)


@dataclass
class ChatExchange:
    request: ChatRequest
    response_text: str | None
    latency_ms: float = 0.0
    cache_hit: bool = False
    key: str = ""

    @property
    def ok(self) -> bool:
        return self.response_text is not None

    def to_dict(self) -> dict:
        return {
            "request": asdict(self.request),
            "response_text": self.response_text,
            "latency_ms": self.latency_ms,
            "key": self.key,
        }

    @classmethod
    def from_dict(cls, obj: dict, cache_hit: bool = False) -> "ChatExchange":
        return cls(
            ChatRequest(**obj["request"]),
            obj["response_text"],
            obj.get("latency_ms", 0.0),
            cache_hit,
            obj.get("key", ""),
        )


def prompt_digest(system_text: str, user_text: str) -> str:
    """Digest used to address scripted transcript entries."""
    h = hashlib.sha256()
    h.update(system_text.encode("utf-8"))
    h.update(b"\x1f")
    h.update(user_text.encode("utf-8"))
    return h.hexdigest()[:16]


def cache_key(request: ChatRequest, path_index: int | None = None, run_index: int = 0) -> str:
    parts = [
        request.backend_id,
        request.system_text,
        request.user_text,
        repr(float(request.temperature)),
        str(request.max_output),
    ]
    # path 0 and run 0 share the plain key so single-shot reruns reuse it
    if path_index:
        parts.append(f"path={path_index}")
    if run_index:
        parts.append(f"run={run_index}")
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per entry, written via temp file + rename."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> ChatExchange | None:
        try:
            text = self._path(key).read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        return ChatExchange.from_dict(json.loads(text), cache_hit=True)

    def put(self, key: str, exchange: ChatExchange) -> None:
        data = json.dumps(exchange.to_dict(), ensure_ascii=False, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(data)
            os.replace(tmp, self._path(key))
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


class TokenBucket:
    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(rate, 1.0)
        self._tokens = self.capacity
        self._clock = clock
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


_BUCKETS: dict[str, TokenBucket] = {}
_BUCKETS_LOCK = threading.Lock()


def shared_bucket(backend_id: str, rate: float) -> TokenBucket:
    with _BUCKETS_LOCK:
        if backend_id not in _BUCKETS:
            _BUCKETS[backend_id] = TokenBucket(rate)
        return _BUCKETS[backend_id]


class ChatBackend:
    """Base class. Subclasses implement ``_generate(request, sample_index)``."""

    live = False

    def __init__(
        self,
        backend_id: str,
        cache: ResponseCache | None = None,
        max_concurrency: int = 8,
        rate_per_s: float | None = None,
        backoff_base: float = 1.0,
    ):
        self.backend_id = backend_id
        self.cache = cache
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._bucket = shared_bucket(backend_id, rate_per_s) if rate_per_s else None
        self.backoff_base = backoff_base
        self.calls = 0
        self._calls_lock = threading.Lock()

    def request(self, system_text: str, user_text: str, temperature: float = DEFAULT_TEMPERATURE,
                max_output: int = DEFAULT_MAX_OUTPUT) -> ChatRequest:
        return ChatRequest(self.backend_id, system_text, user_text, temperature, max_output)

    def complete(self, request: ChatRequest, path_index: int | None = None,
                 run_index: int = 0) -> ChatExchange:
        """Return the model's text for ``request``.

        ``path_index`` tags repeated samples of one prompt (self-consistency
        paths); each index gets its own cache slot. ``run_index`` does the same
        for repeated evaluation runs.
        """
        key = cache_key(request, path_index, run_index)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        start = time.perf_counter()
        text = self._with_retries(request, path_index)
        exchange = ChatExchange(
            request, text, (time.perf_counter() - start) * 1000.0, False, key
        )
        if self.cache is not None:
            self.cache.put(key, exchange)
        return exchange

    def _with_retries(self, request: ChatRequest, path_index: int | None) -> str:
        attempt = 0
        while True:
            try:
                with self._slots:
                    if self._bucket is not None:
                        self._bucket.acquire()
                    with self._calls_lock:
                        self.calls += 1
                    return self._generate(request, path_index)
            except RetryableError as exc:
                if attempt >= MAX_RETRIES:
                    raise BackendError(f"{self.backend_id}: giving up after {attempt + 1} attempts: {exc}") from exc
                delay = exc.delay if exc.delay is not None else self.backoff_base * 2**attempt
                logger.warning("%s: %s; retrying in %.2fs", self.backend_id, exc, delay)
                time.sleep(delay)
                attempt += 1

    def _generate(self, request: ChatRequest, path_index: int | None) -> str:
        raise NotImplementedError


class ScriptedBackend(ChatBackend):
    """Closed-world replay of a transcript.

    Single-response entries answer every call for their digest. Sequenced
    entries answer by ``path_index`` when the caller supplies one, otherwise by
    the per-digest call count.
    """

    def __init__(self, transcript: "Transcript", backend_id: str = "scripted", **kw):
        super().__init__(backend_id, **kw)
        self.transcript = transcript
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def _generate(self, request: ChatRequest, path_index: int | None) -> str:
        digest = request.prompt_digest
        with self._lock:
            count = self._counts.get(digest, 0)
            self._counts[digest] = count + 1
        entry = self.transcript.entries.get(digest)
        if entry is None:
            raise UnscriptedPrompt(digest)
        if isinstance(entry, str):
            return entry
        index = path_index if path_index is not None else count
        if index >= len(entry):
            raise UnscriptedPrompt(digest, index)
        return entry[index]


class Transcript:
    """Mapping of prompt digest to a response or an ordered response sequence.

    File format (JSON)::

        {"entries": [
            {"digest": "...", "response": "text"},
            {"digest": "...", "index": 0, "response": "path one"},
            {"digest": "...", "responses": ["r1", "r2"]}
        ]}
    """

    def __init__(self, entries: dict[str, str | list[str]] | None = None):
        self.entries: dict[str, str | list[str]] = dict(entries or {})

    def add(self, system_text: str, user_text: str, response: str | Sequence[str]) -> str:
        digest = prompt_digest(system_text, user_text)
        self.entries[digest] = response if isinstance(response, str) else list(response)
        return digest

    def to_dict(self) -> dict:
        out = []
        for digest in sorted(self.entries):
            value = self.entries[digest]
            if isinstance(value, str):
                out.append({"digest": digest, "response": value})
            else:
                out.append({"digest": digest, "responses": list(value)})
        return {"entries": out}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def from_dict(cls, obj: dict) -> "Transcript":
        singles: dict[str, str] = {}
        indexed: dict[str, dict[int, str]] = {}
        for i, item in enumerate(obj.get("entries", [])):
            digest = item.get("digest")
            if not isinstance(digest, str):
                raise TranscriptError(f"entry {i}: missing digest")
            if "responses" in item:
                if digest in singles or digest in indexed:
                    raise TranscriptError(f"duplicate digest {digest} without sequence index")
                indexed[digest] = dict(enumerate(item["responses"]))
            elif "index" in item:
                if digest in singles:
                    raise TranscriptError(f"duplicate digest {digest} without sequence index")
                slots = indexed.setdefault(digest, {})
                if item["index"] in slots:
                    raise TranscriptError(f"digest {digest}: index {item['index']} given twice")
                slots[int(item["index"])] = item["response"]
            else:
                if digest in singles or digest in indexed:
                    raise TranscriptError(f"duplicate digest {digest} without sequence index")
                singles[digest] = item["response"]
        entries: dict[str, str | list[str]] = dict(singles)
        for digest, slots in indexed.items():
            if sorted(slots) != list(range(len(slots))):
                raise TranscriptError(f"digest {digest}: sequence indices are not contiguous from 0")
            entries[digest] = [slots[k] for k in range(len(slots))]
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_scripted_backend(transcript: str | Path, backend_id: str = "scripted", **kw) -> ScriptedBackend:
    return ScriptedBackend(Transcript.load(transcript), backend_id, **kw)


class FunctionBackend(ChatBackend):
    """Backend driven by a Python callable ``fn(request, path_index) -> str``."""

    def __init__(self, fn: Callable[[ChatRequest, int | None], str], backend_id: str = "function", **kw):
        super().__init__(backend_id, **kw)
        self.fn = fn

    def _generate(self, request, path_index):
        return self.fn(request, path_index)


class RecordingBackend(ChatBackend):
    """Wraps another backend and records every answer into a transcript."""

    def __init__(self, inner: ChatBackend, **kw):
        super().__init__(inner.backend_id, **kw)
        self.inner = inner
        self.transcript = Transcript()
        self._lock = threading.Lock()

    def _generate(self, request, path_index):
        text = self.inner._generate(request, path_index)
        digest = request.prompt_digest
        with self._lock:
            if path_index is None:
                self.transcript.entries[digest] = text
            else:
                seq = self.transcript.entries.get(digest)
                seq = list(seq) if isinstance(seq, list) else []
                seq.extend([""] * (path_index + 1 - len(seq)))
                seq[path_index] = text
                self.transcript.entries[digest] = seq
        return text


class OpenAICompatBackend(ChatBackend):
    """Chat-completions HTTP protocol (OpenAI and compatible self-hosted servers)."""

    live = True

    def __init__(self, backend_id: str, base_url: str, model_name: str,
                 timeout_s: float = 120.0, transport=None, **kw):
        super().__init__(backend_id, **kw)
        import httpx

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model_name = model_name
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _generate(self, request: ChatRequest, path_index):
        import httpx

        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise AuthError(f"{API_KEY_ENV} is not set")
        payload = {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }
        try:
            resp = self._client.post(
                self.url, json=payload, headers={"Authorization": f"Bearer {api_key}"}
            )
        except httpx.TransportError as exc:
            raise RetryableError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{self.backend_id}: authentication rejected ({resp.status_code})")
        if resp.status_code == 429:
            raise RateLimitError("rate limited", _retry_after(resp.headers.get("retry-after")))
        if resp.status_code >= 500:
            raise RetryableError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        choices = resp.json().get("choices") or []
        if not choices:
            raise BackendError(f"{self.backend_id}: response has no choices")
        return str((choices[0].get("message") or {}).get("content") or "")


def _retry_after(value: str | None) -> float | None:
    try:
        return max(0.0, float(value)) if value is not None else None
    except ValueError:
        return None


# --- embeddings -----------------------------------------------------------

_TOKEN = re.compile(r"\w+", re.UNICODE)


def _check_batch(vectors: list[np.ndarray]) -> list[np.ndarray]:
    dims = {v.shape[-1] for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"embedding dimension mismatch within batch: {sorted(dims)}")
    for v in vectors:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite embedding")
    return vectors


class Embedder:
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        return _check_batch([np.asarray(self._embed_one(t), dtype=float) for t in texts])

    def embed_tokens(self, text: str) -> np.ndarray:
        """Return an (n_tokens, dim) matrix of contextual token vectors."""
        raise NotImplementedError

    def _embed_one(self, text: str) -> np.ndarray:
        raise NotImplementedError


class ScriptedEmbedder(Embedder):
    def __init__(self, table: dict[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def _embed_one(self, text):
        try:
            return self.table[text]
        except KeyError:
            raise KeyError(f"unscripted embedding text {text!r}") from None

    def embed_tokens(self, text):
        return np.stack([self._embed_one(t) for t in _TOKEN.findall(text)])


class HashingEmbedder(Embedder):
    """Deterministic offline embedder.

    Each lower-cased token maps to a fixed pseudo-random unit vector seeded by
    its hash; sentence vectors are the normalized token sum. Identical tokens
    have cosine 1, unrelated tokens are near-orthogonal.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def token_vector(self, token: str) -> np.ndarray:
        token = token.casefold()
        with self._lock:
            vec = self._memo.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            with self._lock:
                self._memo[token] = vec
        return vec

    def embed_tokens(self, text):
        tokens = _TOKEN.findall(text) or ["<empty>"]
        return np.stack([self.token_vector(t) for t in tokens])

    def _embed_one(self, text):
        total = self.embed_tokens(text).sum(axis=0)
        norm = np.linalg.norm(total)
        return total / norm if norm else total


class SentenceTransformerEmbedder(Embedder):
    """Neural embedder backed by sentence-transformers (downloads weights on first use)."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_name)

    def embed(self, texts):
        if not texts:
            raise ValueError("embed() needs at least one text")
        return _check_batch(list(self.model.encode(list(texts), convert_to_numpy=True)))

    def embed_tokens(self, text):
        out = self.model.encode([text], output_value="token_embeddings", convert_to_numpy=True)[0]
        out = np.asarray(out, dtype=float)
        # drop the special tokens at either end
        return out[1:-1] if len(out) > 2 else out
