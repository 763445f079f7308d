"""Minimal chat-completions client with bounded retries."""
from __future__ import annotations

import os
import threading
import time
from typing import Optional

import requests

from ..errors import TransportError

API_KEY_ENV = "BACDETECT_LLM_KEY"
_RETRYABLE = {429, 500, 502, 503, 504}


class ChatClient:
    def __init__(self, base_url: str, model: str = "deepseek-reasoner", temperature: float = 0.7,
                 api_key: Optional[str] = None, timeout_s: float = 120.0, max_retries: int = 2,
                 backoff_ms: float = 500.0, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_ms = backoff_ms
        self.session = session or requests.Session()
        self.tokens_used = 0
        self.calls = 0
        self._lock = threading.Lock()

    def chat(self, messages: list[dict]) -> str:
        """Send one conversation and return the first choice's content.

        Connection errors and 429/5xx responses are retried with exponential
        backoff; anything still failing raises TransportError.
        """
        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_ms / 1000.0 * 2 ** (attempt - 1))
            try:
                resp = self.session.post(f"{self.base_url}/chat/completions", json=payload,
                                         headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code in _RETRYABLE:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise TransportError(f"LLM endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                content = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed chat completion response: {exc}") from None
            usage = (data.get("usage") or {}).get("total_tokens")
            with self._lock:
                self.calls += 1
                self.tokens_used += int(usage) if usage is not None else len(content.split())
            return content or ""
        raise TransportError(f"LLM endpoint unreachable after {self.max_retries + 1} tries: {last}")
