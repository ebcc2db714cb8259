"""OpenAI-compatible chat-completions backend."""

from __future__ import annotations

import logging
import os

import requests

from .base import BackendTimeout, BaseBackend, ChatRequest, ChatResponse, LLMError, RemoteError, Usage

log = logging.getLogger(__name__)

API_KEY_ENV = "PRINTLOOP_API_KEY"


class RemoteBackend(BaseBackend):
    name = "remote"

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 120.0,
                 api_key_env: str = API_KEY_ENV, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout = timeout
        self.session = session or requests.Session()

    def payload(self, request: ChatRequest) -> dict:
        messages = [{"role": "system", "content": request.system_prompt}]
        for t in request.turns:
            if t.images:
                content = [{"type": "text", "text": t.text}]
                content += [{"type": "image_url", "image_url": {"url": img.data_url()}} for img in t.images]
            else:
                content = t.text
            messages.append({"role": t.role, "content": content})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def _complete(self, request: ChatRequest, estimate: int) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            r = self.session.post(f"{self.base_url}/chat/completions", json=self.payload(request),
                                  headers=headers, timeout=self.timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(f"no response within {self.timeout} s") from exc
        except requests.RequestException as exc:
            raise LLMError(f"cannot reach {self.base_url}: {exc}") from exc
        if r.status_code >= 400:
            raise RemoteError(r.status_code, r.text)
        try:
            data = r.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RemoteError(r.status_code, f"unexpected response shape: {r.text[:200]}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            finish_reason=choice.get("finish_reason") or "stop",
            usage=Usage(usage.get("prompt_tokens", estimate), usage.get("completion_tokens", 0)),
        )
