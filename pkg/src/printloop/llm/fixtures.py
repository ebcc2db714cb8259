"""Record/replay of request-response pairs, keyed by request digest."""

from __future__ import annotations

import json
from pathlib import Path

from .base import BaseBackend, ChatRequest, ChatResponse, LLMError


class FixtureMissingError(LLMError):
    pass


class FixtureStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, request: ChatRequest) -> Path:
        return self.root / f"{request.response_schema_hint or 'chat'}-{request.digest()}.json"

    def load(self, request: ChatRequest) -> ChatResponse | None:
        p = self.path(request)
        if not p.exists():
            return None
        return ChatResponse.from_dict(json.loads(p.read_text(encoding="utf-8"))["response"])

    def save(self, request: ChatRequest, response: ChatResponse) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(request)
        record = {"request": request.fingerprint(), "response": response.to_dict()}
        p.write_text(json.dumps(record, indent=1, sort_keys=True), encoding="utf-8")
        return p


class RecordingBackend(BaseBackend):
    """Pass-through that stores every exchange of ``inner``."""

    name = "recording"

    def __init__(self, inner, store: FixtureStore):
        self.inner = inner
        self.store = store

    def _complete(self, request: ChatRequest, estimate: int) -> ChatResponse:
        resp = self.inner.complete(request)
        self.store.save(request, resp)
        return resp


class ReplayBackend(BaseBackend):
    name = "fixtures"

    def __init__(self, store: FixtureStore | str | Path):
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)

    def _complete(self, request: ChatRequest, estimate: int) -> ChatResponse:
        resp = self.store.load(request)
        if resp is None:
            raise FixtureMissingError(f"no recorded response at {self.store.path(request)}")
        return resp
