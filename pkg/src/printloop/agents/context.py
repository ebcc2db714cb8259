"""What every agent module needs: state, printer, backend and the event sink."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from ..client import PrinterClient
from ..llm import ChatRequest, ChatResponse, Turn
from ..llm.base import DEFAULT_CONTEXT_BUDGET
from .types import StateDictionary

log = logging.getLogger(__name__)

EventSink = Callable[[str, str, dict[str, Any]], None]  # (module, kind, payload)


def _drop(module: str, kind: str, payload: dict[str, Any]) -> None:
    pass


@dataclass
class AgentContext:
    state: StateDictionary
    client: PrinterClient
    backend: Any
    emit: EventSink = _drop
    max_react_iters: int = 8
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    embed_observation: bool = True
    llm_latency_ms: float = field(default=0.0)

    def ask(self, module: str, schema: str, system: str, text: str, images=None,
            max_output_tokens: int = 1024) -> ChatResponse:
        """One backend call, recorded in the state history and the event log."""
        request = ChatRequest(
            system_prompt=system,
            turns=[Turn("user", text, list(images or []))],
            response_schema_hint=schema,
            max_output_tokens=max_output_tokens,
            temperature=0.0,
            context_budget_tokens=self.context_budget,
        )
        self.state.add_message(module, "user", text)
        self.emit(module, "llm_request", {"schema": schema, "text": text, "images": len(request.turns[0].images),
                                          "digest": request.digest()})
        resp = self.backend.complete(request)
        self.llm_latency_ms += resp.latency_ms
        self.state.add_message(module, "assistant", resp.text)
        self.emit(module, "llm_response", {"schema": schema, "text": resp.text, "finish_reason": resp.finish_reason,
                                           "usage": {"input": resp.usage.input_tokens, "output": resp.usage.output_tokens},
                                           "latency_ms": round(resp.latency_ms, 3)})
        return resp
