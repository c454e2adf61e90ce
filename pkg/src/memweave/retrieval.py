"""Similarity search over the memory graph.

Two granularities: node-level top-k (text nodes by cosine, entity nodes by
mean snapshot similarity) and clip-level retrieval, where each clip scores as
the best of its entries and qualifying clips are returned whole, with entity
ids rewritten to unified character ids.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .embedding import Embedder, as_unit_vector, average_similarity, cosine
from .errors import InvalidArgumentError, NotFoundError
from .graph import CharacterMap, MemoryGraph
from .ids import FACE, TEXT, VOICE, NodeId

# Default similarity floors per query modality, and the strict clip-level
# retrieval setting (top 2 clips at 0.5 minimum score).
FACE_THRESHOLD = 0.3
VOICE_THRESHOLD = 0.6
CLIP_TOP_K = 2
CLIP_THRESHOLD = 0.5

EMPTY_MARKER = "[EMPTY]"

_ENTITY_TOKEN_RE = re.compile(r"<(face|voice)_(\d+)>")


@dataclass
class SearchQuery:
    """One node-level search request.

    Text queries carry a string payload; face/voice queries carry a feature
    vector.
    """

    modality: str
    payload: object
    k: int = 5
    threshold: float = 0.0

    def __post_init__(self):
        if self.modality not in (TEXT, FACE, VOICE):
            raise InvalidArgumentError(f"unknown query modality: {self.modality!r}")
        if self.k < 1:
            raise InvalidArgumentError("k must be positive")
        if not -1.0 <= self.threshold <= 1.0:
            raise InvalidArgumentError("threshold must lie in [-1, 1]")


@dataclass
class ClipSection:
    clip_index: int
    episodic: list[str]
    semantic: list[str]
    score: float

    def render_name(self) -> str:
        return f"CLIP_{self.clip_index}"

    def all_texts(self) -> list[str]:
        return list(self.episodic) + list(self.semantic)


@dataclass
class ClipSearchResult:
    clips: list[ClipSection] = field(default_factory=list)

    @property
    def empty_marker(self) -> bool:
        return not self.clips


def search_node(graph: MemoryGraph, query: SearchQuery,
                embedder: Embedder | None = None) -> list[tuple[NodeId, float]]:
    """Top-k same-modality nodes with score at or above the query threshold.

    Results are sorted by descending score; equal scores break toward the
    lower node ordinal.
    """
    if query.modality == TEXT:
        if isinstance(query.payload, str):
            if embedder is None:
                raise InvalidArgumentError("text query needs an embedder")
            query_vec = embedder.embed(query.payload)
        else:
            query_vec = as_unit_vector(query.payload, graph.config.embedding_dim)
    else:
        query_vec = as_unit_vector(query.payload, graph.config.embedding_dim)

    with graph.lock:
        scored: list[tuple[float, NodeId]] = []
        for node_id in graph.node_ids(query.modality):
            node = graph.node(node_id)
            if query.modality == TEXT:
                score = cosine(query_vec, node.embedding)
            else:
                score = average_similarity(query_vec, node.snapshots)
            if score >= query.threshold:
                scored.append((score, node_id))
    scored.sort(key=lambda pair: (-pair[0], pair[1].ordinal))
    return [(node_id, score) for score, node_id in scored[:query.k]]


def score_clip(graph: MemoryGraph, clip_index: int, query_embedding: np.ndarray) -> float:
    """Best cosine over the clip's entries; -inf when the clip has none."""
    with graph.lock:
        record = graph.clip(clip_index)
        entries = record.all_entries()
        if not entries:
            return -math.inf
        return max(cosine(query_embedding, graph.node(entry).embedding)
                   for entry in entries)


def search_clip(graph: MemoryGraph, text_query: str, embedder: Embedder,
                k: int = CLIP_TOP_K, threshold: float = CLIP_THRESHOLD) -> ClipSearchResult:
    """Top-k qualifying clips for a text query, entries rewritten to character ids."""
    query_vec = embedder.embed(text_query)
    with graph.lock:
        ranked: list[tuple[float, int]] = []
        for clip_index in graph.clip_indices():
            score = score_clip(graph, clip_index, query_vec)
            if score >= threshold:
                ranked.append((score, clip_index))
        ranked.sort(key=lambda pair: (-pair[0], pair[1]))
        ranked = ranked[:k]
        if not ranked:
            return ClipSearchResult()
        character_map = graph.resolve_characters()
        sections = []
        for score, clip_index in ranked:
            record = graph.clip(clip_index)
            sections.append(ClipSection(
                clip_index=clip_index,
                episodic=[rewrite_entities(graph.node(i).text, character_map)
                          for i in record.episodic_entries],
                semantic=[rewrite_entities(graph.node(i).text, character_map)
                          for i in record.semantic_entries],
                score=score))
        return ClipSearchResult(clips=sections)


def rewrite_entities(text: str, character_map: CharacterMap) -> str:
    """Replace mapped <face_i>/<voice_j> tokens with their <character_k> token."""
    def replace(match: re.Match) -> str:
        node_id = NodeId(match.group(1), int(match.group(2)))
        token = character_map.token_for(node_id)
        return token if token is not None else match.group(0)

    return _ENTITY_TOKEN_RE.sub(replace, text)


def format_results(result: ClipSearchResult) -> str:
    """Deterministic text rendering of a clip search, one section per clip.

    An empty result renders as the literal empty marker that the control loop
    injects into the conversation.
    """
    if result.empty_marker:
        return EMPTY_MARKER
    sections = []
    for section in result.clips:
        texts = section.all_texts()
        sections.append(f'"{section.render_name()}": '
                        + json.dumps(texts, ensure_ascii=False))
    return "\n".join(sections)
