"""Chat backends: remote (OpenAI-compatible), deterministic oracle, fixture replay."""

from .base import (
    DEFAULT_CONTEXT_BUDGET,
    IMAGE_TOKEN_COST,
    Backend,
    BackendTimeout,
    BudgetExceededError,
    ChatRequest,
    ChatResponse,
    ImagePart,
    LLMError,
    RemoteError,
    Turn,
    Usage,
    estimate_tokens,
)
from .blocks import Block, BlockParseError, parse_block, render_block
from .fixtures import FixtureMissingError, FixtureStore, RecordingBackend, ReplayBackend
from .oracle import OracleBackend
from .remote import RemoteBackend

__all__ = [
    "DEFAULT_CONTEXT_BUDGET",
    "IMAGE_TOKEN_COST",
    "Backend",
    "BackendTimeout",
    "Block",
    "BlockParseError",
    "BudgetExceededError",
    "ChatRequest",
    "ChatResponse",
    "FixtureMissingError",
    "FixtureStore",
    "ImagePart",
    "LLMError",
    "OracleBackend",
    "RecordingBackend",
    "RemoteBackend",
    "RemoteError",
    "ReplayBackend",
    "Turn",
    "Usage",
    "estimate_tokens",
    "parse_block",
    "render_block",
]
