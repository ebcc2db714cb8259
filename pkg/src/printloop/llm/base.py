"""Backend-neutral chat request/response types and the token budget gate."""

from __future__ import annotations

import base64
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Protocol

DEFAULT_CONTEXT_BUDGET = 128_000
IMAGE_TOKEN_COST = 1100


class LLMError(Exception):
    pass


class BudgetExceededError(LLMError):
    def __init__(self, estimate: int, budget: int):
        super().__init__(f"request needs ~{estimate} tokens, budget is {budget}")
        self.estimate = estimate
        self.budget = budget


class BackendTimeout(LLMError):
    pass


class RemoteError(LLMError):
    def __init__(self, status: int, body: str):
        super().__init__(f"remote backend returned HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


@dataclass
class ImagePart:
    data: bytes
    media_type: str = "image/png"
    label: str = ""

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"

    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass
class Turn:
    role: str
    text: str
    images: list[ImagePart] = field(default_factory=list)


@dataclass
class ChatRequest:
    system_prompt: str
    turns: list[Turn]
    response_schema_hint: str = ""
    max_output_tokens: int = 1024
    temperature: float = 0.0
    context_budget_tokens: int = DEFAULT_CONTEXT_BUDGET
    image_token_cost: int = IMAGE_TOKEN_COST

    @property
    def last_user_text(self) -> str:
        for t in reversed(self.turns):
            if t.role == "user":
                return t.text
        return ""

    def all_text(self) -> str:
        return "\n".join([self.system_prompt] + [t.text for t in self.turns])

    def fingerprint(self) -> dict:
        return {
            "system": self.system_prompt,
            "turns": [{"role": t.role, "text": t.text, "images": [i.digest() for i in t.images]} for t in self.turns],
            "schema": self.response_schema_hint,
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        }

    def digest(self) -> str:
        blob = json.dumps(self.fingerprint(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:24]


@dataclass
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Usage = field(default_factory=Usage)
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"text": self.text, "finish_reason": self.finish_reason,
                "usage": {"input_tokens": self.usage.input_tokens, "output_tokens": self.usage.output_tokens},
                "latency_ms": self.latency_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        u = d.get("usage") or {}
        return cls(d["text"], d.get("finish_reason", "stop"), Usage(u.get("input_tokens", 0), u.get("output_tokens", 0)),
                   d.get("latency_ms", 0.0))


def text_tokens(text: str) -> int:
    return math.ceil(len(text) / 3)


def estimate_tokens(request: ChatRequest) -> int:
    """Over-approximate prompt size: ceil(chars/3) per text part plus a flat cost per image."""
    total = text_tokens(request.system_prompt)
    for t in request.turns:
        total += text_tokens(t.text) + request.image_token_cost * len(t.images)
    return total


class Backend(Protocol):
    name: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


class BaseBackend:
    """Budget gate and latency measurement around ``_complete``."""

    name = "base"

    def complete(self, request: ChatRequest) -> ChatResponse:
        estimate = estimate_tokens(request)
        if estimate > request.context_budget_tokens:
            raise BudgetExceededError(estimate, request.context_budget_tokens)
        t0 = time.perf_counter()
        resp = self._complete(request, estimate)
        if not resp.latency_ms:
            resp.latency_ms = (time.perf_counter() - t0) * 1000.0
        return resp

    def _complete(self, request: ChatRequest, estimate: int) -> ChatResponse:
        raise NotImplementedError
