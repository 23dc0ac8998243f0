"""Unified model access: one completion call shape for every role.

Responses are cached on disk keyed by (role, model, temperature, max_tokens,
prompt), so a resumed run replays from the cache without touching a backend.
Endpoints starting with "sim:" are served by an in-process simulator object;
anything else is treated as an HTTP chat-completion URL.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import requests

from .config import RoleConfig

logger = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")


def pmap(fn: Callable[[T], U], items: Sequence[T], workers: int) -> list[U]:
    """Order-preserving parallel map; plain loop when serial."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class GatewayError(Exception):
    pass


class ModelUnavailableError(GatewayError):
    """Backend kept failing after bounded retries."""


class ProtocolError(GatewayError):
    """Backend replied with a body that does not match the wire contract."""

    def __init__(self, message: str, raw_body: str = ""):
        super().__init__(message)
        self.raw_body = raw_body


@dataclass
class ChatExchange:
    """One resolved completion: prompt in, text out, plus provenance bits."""

    role: str
    model_name: str
    prompt: str
    response: str
    cached: bool
    latency_ms: float


def cache_key(role: str, model_name: str, temperature: float, max_tokens: int, prompt: str) -> str:
    payload = json.dumps(
        {
            "role": role,
            "model_name": model_name,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "prompt": prompt,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Write-once response store: one JSON file per key under cache_dir."""

    def __init__(self, cache_dir: Path | str):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, str] = {}
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> str | None:
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        path = self._path(key)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        response = data["response"]
        with self._lock:
            self._mem.setdefault(key, response)
        return response

    def put(self, key: str, response: str, meta: dict | None = None) -> str:
        """Store a response; an existing entry wins over the new value."""
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        path = self._path(key)
        if path.exists():
            existing = json.loads(path.read_text(encoding="utf-8"))["response"]
            with self._lock:
                self._mem.setdefault(key, existing)
            return existing
        record = {"response": response}
        if meta:
            record.update(meta)
        # Unique temp name per writer: concurrent misses on the same key must
        # not race on one shared .tmp path. Either replace wins; same content.
        tmp = path.with_suffix(f".{uuid.uuid4().hex}.tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)
        with self._lock:
            self._mem[key] = response
        return response


class ModelGateway:
    """Routes completion and embedding calls to sim or HTTP backends.

    Safe for concurrent use; in-flight HTTP requests per endpoint are bounded
    by max_in_flight.
    """

    def __init__(
        self,
        cache_dir: Path | str,
        sim_backend=None,
        max_retries: int = 3,
        backoff_base: float = 0.25,
        max_in_flight: int = 8,
        timeout: float = 120.0,
        sleep=time.sleep,
    ):
        self.cache = ResponseCache(cache_dir)
        self.sim_backend = sim_backend
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.max_in_flight = max_in_flight
        self.timeout = timeout
        self._sleep = sleep
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._sem_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.stats = {"backend_calls": 0, "cache_hits": 0}

    def _semaphore(self, endpoint: str) -> threading.Semaphore:
        with self._sem_lock:
            if endpoint not in self._semaphores:
                self._semaphores[endpoint] = threading.Semaphore(self.max_in_flight)
            return self._semaphores[endpoint]

    def _count(self, key: str) -> None:
        with self._stats_lock:
            self.stats[key] += 1

    def complete(self, role_cfg: RoleConfig, prompt: str) -> str:
        return self.complete_exchange(role_cfg, prompt).response

    def complete_exchange(self, role_cfg: RoleConfig, prompt: str) -> ChatExchange:
        key = cache_key(
            role_cfg.role,
            role_cfg.model_name,
            role_cfg.resolved_temperature,
            role_cfg.max_tokens,
            prompt,
        )
        start = time.monotonic()
        cached = self.cache.get(key)
        if cached is not None:
            self._count("cache_hits")
            return ChatExchange(
                role=role_cfg.role,
                model_name=role_cfg.model_name,
                prompt=prompt,
                response=cached,
                cached=True,
                latency_ms=(time.monotonic() - start) * 1000.0,
            )
        if role_cfg.is_sim:
            response = self._sim_complete(role_cfg, prompt)
        else:
            response = self._http_complete(role_cfg, prompt)
        self._count("backend_calls")
        response = self.cache.put(
            key, response, meta={"role": role_cfg.role, "model_name": role_cfg.model_name}
        )
        return ChatExchange(
            role=role_cfg.role,
            model_name=role_cfg.model_name,
            prompt=prompt,
            response=response,
            cached=False,
            latency_ms=(time.monotonic() - start) * 1000.0,
        )

    def _sim_complete(self, role_cfg: RoleConfig, prompt: str) -> str:
        if self.sim_backend is None:
            raise GatewayError(
                f"endpoint {role_cfg.endpoint!r} requires a simulator backend but none is attached"
            )
        return self.sim_backend.complete(role_cfg, prompt)

    def _http_complete(self, role_cfg: RoleConfig, prompt: str) -> str:
        messages = []
        if role_cfg.system_prompt:
            messages.append({"role": "system", "content": role_cfg.system_prompt})
        messages.append({"role": "user", "content": prompt})
        body = {
            "model": role_cfg.model_name,
            "messages": messages,
            "temperature": role_cfg.resolved_temperature,
            "max_tokens": role_cfg.max_tokens,
        }
        if role_cfg.seed is not None:
            body["seed"] = role_cfg.seed
        data = self._http_post(role_cfg, role_cfg.endpoint, body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                f"chat completion body missing choices[0].message.content: {exc}",
                raw_body=json.dumps(data)[:2000],
            ) from exc

    def _http_post(self, role_cfg: RoleConfig, url: str, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(f"{role_cfg.api_key_env}_{role_cfg.role.upper()}") or os.environ.get(
            role_cfg.api_key_env
        )
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        semaphore = self._semaphore(url)
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1))
                logger.warning(
                    "retrying %s for %s in %.2fs (attempt %d/%d): %s",
                    url,
                    role_cfg.model_name,
                    delay,
                    attempt,
                    self.max_retries,
                    last_error,
                )
                self._sleep(delay)
            try:
                with semaphore:
                    resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = GatewayError(f"HTTP {resp.status_code} from {url}")
                    continue
                if resp.status_code != 200:
                    raise ProtocolError(
                        f"HTTP {resp.status_code} from {url}", raw_body=resp.text[:2000]
                    )
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProtocolError(
                        f"non-JSON body from {url}: {exc}", raw_body=resp.text[:2000]
                    ) from exc
            except ProtocolError:
                raise
            except requests.RequestException as exc:
                last_error = exc
                continue
        raise ModelUnavailableError(
            f"model unavailable: {role_cfg.model_name} via {url} after "
            f"{self.max_retries} retries ({last_error})"
        )

    def embed(self, embed_cfg: RoleConfig, texts: list[str]) -> list[list[float]]:
        """Embed texts, caching one entry per text."""
        out: list[list[float] | None] = [None] * len(texts)
        missing: list[int] = []
        keys: list[str] = []
        for i, text in enumerate(texts):
            key = cache_key("embed", embed_cfg.model_name, 0.0, 0, text)
            keys.append(key)
            cached = self.cache.get(key)
            if cached is not None:
                self._count("cache_hits")
                out[i] = json.loads(cached)
            else:
                missing.append(i)
        if missing:
            if embed_cfg.is_sim:
                if self.sim_backend is None:
                    raise GatewayError("sim embedding endpoint requires a simulator backend")
                vectors = self.sim_backend.embed([texts[i] for i in missing])
            else:
                vectors = self._http_embed(embed_cfg, [texts[i] for i in missing])
            if len(vectors) != len(missing):
                raise ProtocolError(
                    f"embedding backend returned {len(vectors)} vectors for {len(missing)} texts"
                )
            for i, vec in zip(missing, vectors):
                self._count("backend_calls")
                vec_list = [float(v) for v in vec]
                self.cache.put(keys[i], json.dumps(vec_list))
                out[i] = vec_list
        return [v for v in out if v is not None]

    def _http_embed(self, embed_cfg: RoleConfig, texts: list[str]) -> list[list[float]]:
        body = {"model": embed_cfg.model_name, "input": texts}
        data = self._http_post(embed_cfg, embed_cfg.endpoint, body)
        try:
            return [row["embedding"] for row in data["data"]]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(
                f"embedding body missing data[*].embedding: {exc}",
                raw_body=json.dumps(data)[:2000],
            ) from exc
