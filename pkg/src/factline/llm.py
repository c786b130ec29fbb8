"""Chat-completion client with prompt templates, retries and a reply cache.

The endpoint URL and key come from ``FACTLINE_LLM_URL`` / ``FACTLINE_LLM_KEY``.
Requests are sent with temperature 0. Replies are cached under the SHA-256 of
(operation, template id, model id, input text), so a warm cache makes no
network calls at all.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import httpx

from factline.cache import ReplyCache, cache_key
from factline.resources import read_prompt

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class LLMError(RuntimeError):
    def __init__(self, message: str, retryable: bool = True, raw: Optional[str] = None):
        super().__init__(message)
        self.retryable = retryable
        self.raw = raw


class LLMClient:
    def __init__(
        self,
        url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: str = "gpt-4-0613",
        cache: Optional[ReplyCache] = None,
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.url = url or os.environ.get("FACTLINE_LLM_URL")
        self.api_key = api_key or os.environ.get("FACTLINE_LLM_KEY")
        self.model = model
        if cache is None and os.environ.get("FACTLINE_CACHE"):
            cache = ReplyCache(os.environ["FACTLINE_CACHE"])
        self.cache = cache
        self.max_in_flight = max(1, max_in_flight)
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._http = httpx.Client(timeout=timeout, transport=transport)
        self.network_calls = 0

    def _request(self, system: str, user: str) -> str:
        if not self.url:
            raise LLMError("no endpoint configured (set FACTLINE_LLM_URL)", retryable=False)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        }
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    self.network_calls += 1
                    resp = self._http.post(self.url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = LLMError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise LLMError(f"unexpected response layout: {exc}", raw=resp.text) from exc
        raise LLMError(f"request failed after {self.retries + 1} attempts: {last}")

    def complete(self, template_id: str, text: str, operation_id: str = "chat") -> str:
        key = cache_key(operation_id, template_id, self.model, text)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit.decode("utf-8")
        reply = self._request(read_prompt(template_id), text)
        if self.cache is not None:
            self.cache.put(key, reply.encode("utf-8"))
        return reply

    def complete_many(self, template_id: str, texts: Sequence[str], operation_id: str = "chat") -> list[str]:
        if len(texts) <= 1 or self.max_in_flight == 1:
            return [self.complete(template_id, t, operation_id) for t in texts]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(lambda t: self.complete(template_id, t, operation_id), texts))

    def close(self) -> None:
        self._http.close()


def strip_code_fences(reply: str) -> str:
    text = reply.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def parse_json_reply(reply: str):
    """Parse a JSON reply, retrying once with code fences removed."""
    try:
        return json.loads(reply)
    except ValueError:
        pass
    try:
        return json.loads(strip_code_fences(reply))
    except ValueError as exc:
        raise LLMError(f"reply is not valid JSON: {exc}", retryable=False, raw=reply) from exc
