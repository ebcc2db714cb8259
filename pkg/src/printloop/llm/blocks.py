"""Fenced key/value blocks used for every structured agent message.

A block looks like::

    ```report
    layer: 9
    failure: mode=stringing_oozing; severity=low; evidence=fine strands
    failure: mode=layer_separation; severity=high; evidence=gap between layers
    ```

Keys may repeat; values that hold several fields use ``k=v`` pairs joined
by semicolons.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class BlockParseError(ValueError):
    pass


_FENCE = re.compile(r"```[ \t]*([A-Za-z_][\w-]*)[ \t]*\r?\n(.*?)```", re.S)
_KEY = re.compile(r"^\s*(?:[-*]\s+)?([A-Za-z_][\w.]*)\s*:\s?(.*)$")


@dataclass
class Block:
    name: str
    items: list[tuple[str, str]] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.items:
            if k == key:
                return v
        return default

    def getall(self, key: str) -> list[str]:
        return [v for k, v in self.items if k == key]

    def require(self, key: str) -> str:
        v = self.get(key)
        if v is None:
            raise BlockParseError(f"block {self.name!r} lacks required key {key!r}")
        return v

    def render(self) -> str:
        return render_block(self.name, self.items)


def _clean(value: object) -> str:
    return " ".join(str(value).split())


def render_block(name: str, items: list[tuple[str, object]] | dict[str, object]) -> str:
    pairs = items.items() if isinstance(items, dict) else items
    body = "".join(f"{k}: {_clean(v)}\n" for k, v in pairs)
    return f"```{name}\n{body}```"


def render_kv(fields: dict[str, object]) -> str:
    return "; ".join(f"{k}={_clean(v).replace(';', ',')}" for k, v in fields.items() if v is not None)


def parse_kv(value: str) -> dict[str, str]:
    """``"a=1; b=two words"`` -> ``{"a": "1", "b": "two words"}``."""
    out: dict[str, str] = {}
    for part in value.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise BlockParseError(f"expected key=value, got {part.strip()!r}")
        k, v = part.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def _items(body: str) -> list[tuple[str, str]]:
    items = []
    for line in body.splitlines():
        if not line.strip():
            continue
        m = _KEY.match(line)
        if m:
            items.append((m.group(1).lower(), m.group(2).strip()))
        elif items:
            # continuation of a wrapped value
            k, v = items[-1]
            items[-1] = (k, f"{v} {line.strip()}")
    return items


def find_blocks(text: str, name: str) -> list[Block]:
    return [Block(name, _items(m.group(2))) for m in _FENCE.finditer(text) if m.group(1).lower() == name]


def parse_block(text: str, name: str, lenient: bool = False) -> Block:
    """Return the last fenced ``name`` block in ``text``.

    With ``lenient`` an unfenced run of ``key: value`` lines (or a block
    under a different fence label) is accepted as well.
    """
    found = find_blocks(text, name)
    if found:
        return found[-1]
    if lenient:
        any_fence = list(_FENCE.finditer(text))
        body = any_fence[-1].group(2) if any_fence else text
        items = _items(body)
        if items:
            return Block(name, items)
    raise BlockParseError(f"no {name!r} block in response")
