"""Chat-completion client for a remote teacher endpoint.

The API key is read from the environment variable named in EndpointConfig at
client construction and lives only in the request headers; it is never
logged or written anywhere. Requests are rate limited by a token bucket and
retried with exponential backoff on transport errors, 429 and 5xx.
"""
from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass

import httpx

from .prompts import build_prompt


class MissingApiKeyError(RuntimeError):
    def __init__(self, env_name: str):
        self.env_name = env_name
        super().__init__(
            f"teacher API key not found: set the {env_name} environment variable"
        )


class TeacherRequestError(RuntimeError):
    """Request still failing after all retries."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "CFDISTILL_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 512
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_concurrency: int = 4
    requests_per_second: float = 4.0
    n_per_request: int = 1

    def __post_init__(self):
        # self-consistency needs answer diversity, so sampling must be on
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_tokens < 1 or self.timeout <= 0:
            raise ValueError("bad request limits")
        if self.max_retries < 0 or self.backoff_base < 0:
            raise ValueError("bad retry settings")
        if (
            self.max_concurrency < 1
            or self.requests_per_second <= 0
            or self.n_per_request < 1
        ):
            raise ValueError("bad throughput settings")


class TokenBucket:
    """Blocking rate limiter: at most `rate` acquisitions per second."""

    def __init__(self, rate: float, capacity: float | None = None):
        if rate <= 0:
            raise ValueError("rate must be > 0")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(
                    self.capacity, self._tokens + (now - self._stamp) * self.rate
                )
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class ChatCompletionClient:
    """Thin wrapper over POST /chat/completions.

    `transport` is injectable for tests (httpx.MockTransport); the sleep
    function likewise, so backoff behavior is testable without waiting.
    """

    def __init__(self, cfg: EndpointConfig, transport=None, sleep=time.sleep):
        key = os.environ.get(cfg.api_key_env, "")
        if not key:
            raise MissingApiKeyError(cfg.api_key_env)
        self.cfg = cfg
        self._sleep = sleep
        self._bucket = TokenBucket(cfg.requests_per_second)
        self._client = httpx.Client(
            base_url=cfg.base_url,
            timeout=cfg.timeout,
            headers={"Authorization": f"Bearer {key}"},
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, system: str, user: str, n: int) -> list[str]:
        payload = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        if n > 1:
            payload["n"] = n
        last = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            self._bucket.acquire()
            try:
                resp = self._client.post("/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            resp.raise_for_status()
            data = resp.json()
            return [c["message"]["content"] for c in data["choices"]]
        raise TeacherRequestError(
            f"giving up after {self.cfg.max_retries + 1} attempts ({last})"
        )

    def completions(self, system: str, user: str, k: int) -> list[str]:
        """k reply texts, batched per n_per_request."""
        texts: list[str] = []
        while len(texts) < k:
            n = min(self.cfg.n_per_request, k - len(texts))
            texts.extend(self._request(system, user, n))
        return texts[:k]


class EndpointTeacher:
    """Adapter giving the client the same generate() shape as the oracle."""

    def __init__(self, client: ChatCompletionClient):
        self.client = client

    def generate(self, state, k: int) -> list[str]:
        p = build_prompt(state)
        return self.client.completions(p.system, p.user, k)
