"""Minimal chat-completions client shared by the policy, judge and generator."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import httpx

from .errors import DagSearchError

log = logging.getLogger(__name__)


class EndpointError(DagSearchError):
    """The chat endpoint could not be reached or answered with an error."""


@dataclass(frozen=True)
class ChatReply:
    text: str
    finish_reason: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class ChatClient:
    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "default",
        temperature: float = 0.0,
        max_tokens: int = 2048,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self._api_key = api_key
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.client = client

    def __repr__(self) -> str:
        # never echo the key
        return f"ChatClient(base_url={self.base_url!r}, model={self.model!r})"

    @classmethod
    def from_env(cls, prefix: str, **kwargs) -> ChatClient:
        base = os.environ.get(f"{prefix}_API_BASE")
        if not base:
            raise EndpointError(f"{prefix}_API_BASE is not set")
        return cls(base, api_key=os.environ.get(f"{prefix}_API_KEY"), **kwargs)

    def chat(self, messages: list[dict], stop: list[str] | None = None, **extra) -> ChatReply:
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            **extra,
        }
        if stop:
            body["stop"] = stop
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = f"{self.base_url}/chat/completions"
        try:
            if self.client is not None:
                resp = self.client.post(url, json=body, headers=headers, timeout=self.timeout)
            else:
                with httpx.Client(timeout=self.timeout) as client:
                    resp = client.post(url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise EndpointError(f"{self.base_url}: {type(exc).__name__}") from exc
        if resp.status_code >= 400:
            raise EndpointError(f"{self.base_url}: HTTP {resp.status_code}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"{self.base_url}: malformed completion") from exc
        usage = data.get("usage") or {}
        return ChatReply(
            text=text,
            finish_reason=choice.get("finish_reason") or "stop",
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
        )

    def complete(self, prompt: str) -> str:
        """Single-turn convenience used by judges, generators and checkers."""
        return self.chat([{"role": "user", "content": prompt}]).text
