"""Node identifiers: a modality prefix plus a per-modality ordinal.

Entity ids render inside angle brackets (``<face_3>``, ``<voice_1>``); text
ids render as ``TEXT_n``. Rendering round-trips through :func:`NodeId.parse`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InvalidArgumentError

TEXT = "text"
FACE = "face"
VOICE = "voice"

MODALITY_PREFIXES = (TEXT, FACE, VOICE)

_ENTITY_RE = re.compile(r"<(face|voice)_(\d+)>")
_TEXT_RE = re.compile(r"TEXT_(\d+)")


@dataclass(frozen=True, order=True)
class NodeId:
    """Unique node identifier within one graph.

    Ordering is lexicographic on (prefix, ordinal), which makes ``sorted()``
    deterministic wherever ties must be broken.
    """

    prefix: str
    ordinal: int

    def __post_init__(self):
        if self.prefix not in MODALITY_PREFIXES:
            raise InvalidArgumentError(f"unknown modality prefix: {self.prefix!r}")
        if self.ordinal < 0:
            raise InvalidArgumentError(f"ordinal must be non-negative, got {self.ordinal}")

    @property
    def is_entity(self) -> bool:
        return self.prefix in (FACE, VOICE)

    def render(self) -> str:
        if self.prefix == TEXT:
            return f"TEXT_{self.ordinal}"
        return f"<{self.prefix}_{self.ordinal}>"

    def __str__(self) -> str:  # pragma: no cover - convenience alias
        return self.render()

    @classmethod
    def parse(cls, token: str) -> "NodeId":
        m = _ENTITY_RE.fullmatch(token)
        if m:
            return cls(m.group(1), int(m.group(2)))
        m = _TEXT_RE.fullmatch(token)
        if m:
            return cls(TEXT, int(m.group(1)))
        raise InvalidArgumentError(f"not a node id token: {token!r}")


def text_id(ordinal: int) -> NodeId:
    return NodeId(TEXT, ordinal)


def face_id(ordinal: int) -> NodeId:
    return NodeId(FACE, ordinal)


def voice_id(ordinal: int) -> NodeId:
    return NodeId(VOICE, ordinal)
