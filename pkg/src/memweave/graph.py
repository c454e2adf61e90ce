"""The multimodal memory graph: weighted nodes and edges plus a per-clip index.

Nodes are either text entries (one embedding each) or face/voice entity
anchors (a capped set of feature snapshots). Undirected edges carry integer
reinforcement weights; equivalence edges assert that a face and a voice
belong to the same person and are resolved into shared character ids by
weight voting.

Concurrency: one writer at a time. Every mutating or reading method takes the
graph lock, so readers never observe a partially ingested clip.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .embedding import as_unit_vector
from .errors import ConfigurationError, InvalidArgumentError, NotFoundError
from .ids import FACE, TEXT, VOICE, NodeId

EQUIVALENCE = "equivalence"
GENERIC = "generic"
EDGE_KINDS = (EQUIVALENCE, GENERIC)

EPISODIC = "episodic"
SEMANTIC = "semantic"
ENTRY_KINDS = (EPISODIC, SEMANTIC)

# Modality prefix -> content modality of Table-style node records.
_PREFIX_MODALITY = {TEXT: "text", FACE: "image", VOICE: "audio"}

DEFAULT_SNAPSHOT_CAP = 10


@dataclass
class GraphConfig:
    embedding_dim: int = 64
    snapshot_cap: int = DEFAULT_SNAPSHOT_CAP

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise InvalidArgumentError("embedding_dim must be positive")
        if self.snapshot_cap < 1:
            raise InvalidArgumentError("snapshot_cap must be positive")


@dataclass
class MemoryNode:
    """One memory item: a text entry or a face/voice identity anchor."""

    id: NodeId
    weight: int = 1
    text: Optional[str] = None
    embedding: Optional[np.ndarray] = None
    snapshots: Optional[list[np.ndarray]] = None
    extra: dict = field(default_factory=dict)

    @property
    def modality(self) -> str:
        return _PREFIX_MODALITY[self.id.prefix]

    @property
    def is_entity(self) -> bool:
        return self.id.is_entity


@dataclass
class ClipRecord:
    """Ordered text-entry ids for one ingested clip."""

    clip_index: int
    episodic_entries: list[NodeId] = field(default_factory=list)
    semantic_entries: list[NodeId] = field(default_factory=list)

    def render(self) -> str:
        return f"CLIP_{self.clip_index}"

    def all_entries(self) -> list[NodeId]:
        return list(self.episodic_entries) + list(self.semantic_entries)


@dataclass(frozen=True)
class CharacterMap:
    """Entity node -> character ordinal, as resolved by equivalence voting."""

    assignments: dict  # NodeId -> int

    def token_for(self, node_id: NodeId) -> Optional[str]:
        ordinal = self.assignments.get(node_id)
        if ordinal is None:
            return None
        return f"<character_{ordinal}>"

    def __len__(self) -> int:
        return len(self.assignments)


def _edge_key(a: NodeId, b: NodeId) -> tuple[NodeId, NodeId]:
    return (a, b) if a <= b else (b, a)


class MemoryGraph:
    """Long-term memory store with weight-based identity voting."""

    def __init__(self, config: GraphConfig | None = None,
                 clock: Callable[[], float] = time.time):
        self.config = config or GraphConfig()
        self.clock = clock
        self._nodes: dict[NodeId, MemoryNode] = {}
        self._edges: dict[tuple[NodeId, NodeId, str], int] = {}
        self._clips: dict[int, ClipRecord] = {}
        self._counters: dict[str, int] = {TEXT: 0, FACE: 0, VOICE: 0}
        self._lock = threading.RLock()

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    # -- node / clip accessors -------------------------------------------------

    def node(self, node_id: NodeId) -> MemoryNode:
        with self._lock:
            node = self._nodes.get(node_id)
            if node is None:
                raise NotFoundError(f"no such node: {node_id.render()}")
            return node

    def has_node(self, node_id: NodeId) -> bool:
        with self._lock:
            return node_id in self._nodes

    def node_ids(self, prefix: str | None = None) -> list[NodeId]:
        with self._lock:
            ids = self._nodes.keys() if prefix is None else (
                i for i in self._nodes if i.prefix == prefix)
            return sorted(ids)

    def clip(self, clip_index: int) -> ClipRecord:
        with self._lock:
            record = self._clips.get(clip_index)
            if record is None:
                raise NotFoundError(f"no such clip: CLIP_{clip_index}")
            return record

    def has_clip(self, clip_index: int) -> bool:
        with self._lock:
            return clip_index in self._clips

    def clip_indices(self) -> list[int]:
        with self._lock:
            return sorted(self._clips)

    def node_count(self) -> int:
        with self._lock:
            return len(self._nodes)

    def edge_items(self) -> list[tuple[NodeId, NodeId, str, int]]:
        with self._lock:
            return sorted((a, b, kind, w) for (a, b, kind), w in self._edges.items())

    # -- construction ----------------------------------------------------------

    def _next_id(self, prefix: str) -> NodeId:
        ordinal = self._counters[prefix]
        self._counters[prefix] = ordinal + 1
        return NodeId(prefix, ordinal)

    def add_text_entry(self, clip_index: int, kind: str, text: str,
                       embedding) -> NodeId:
        """Store one episodic or semantic text entry under a clip record."""
        if kind not in ENTRY_KINDS:
            raise InvalidArgumentError(f"unknown entry kind: {kind!r}")
        if clip_index < 0:
            raise InvalidArgumentError("clip_index must be non-negative")
        vec = np.asarray(embedding)
        if vec.ndim != 1 or vec.shape[0] != self.config.embedding_dim:
            raise ConfigurationError(
                f"embedding dimension {vec.shape} does not match graph "
                f"configuration ({self.config.embedding_dim})")
        vec = as_unit_vector(vec, self.config.embedding_dim)
        with self._lock:
            node_id = self._next_id(TEXT)
            self._nodes[node_id] = MemoryNode(
                id=node_id, text=text, embedding=vec,
                extra={"clip_index": clip_index, "ingested_at": self.clock()})
            record = self._clips.setdefault(clip_index, ClipRecord(clip_index))
            if kind == EPISODIC:
                record.episodic_entries.append(node_id)
            else:
                record.semantic_entries.append(node_id)
            return node_id

    def add_entity_node(self, modality: str, snapshots: Iterable) -> NodeId:
        """Create a face or voice node seeded with feature snapshots."""
        if modality not in (FACE, VOICE):
            raise InvalidArgumentError(f"entity modality must be face or voice, got {modality!r}")
        snaps = [as_unit_vector(s, self.config.embedding_dim) for s in snapshots]
        if not snaps:
            raise InvalidArgumentError("entity node needs at least one snapshot")
        if len(snaps) > self.config.snapshot_cap:
            raise InvalidArgumentError(
                f"{len(snaps)} snapshots exceed cap {self.config.snapshot_cap}")
        with self._lock:
            node_id = self._next_id(modality)
            self._nodes[node_id] = MemoryNode(
                id=node_id, snapshots=snaps,
                extra={"created_at": self.clock()})
            return node_id

    def append_snapshot(self, node_id: NodeId, snapshot) -> None:
        """Add a feature snapshot to an entity node, evicting FIFO past the cap."""
        vec = as_unit_vector(snapshot, self.config.embedding_dim)
        with self._lock:
            node = self.node(node_id)
            if not node.is_entity:
                raise InvalidArgumentError(f"{node_id.render()} is not an entity node")
            node.snapshots.append(vec)
            while len(node.snapshots) > self.config.snapshot_cap:
                node.snapshots.pop(0)

    def reinforce_edge(self, a: NodeId, b: NodeId, kind: str = GENERIC) -> int:
        """Increment an undirected edge weight, creating it at weight 1."""
        if kind not in EDGE_KINDS:
            raise InvalidArgumentError(f"unknown edge kind: {kind!r}")
        with self._lock:
            if a not in self._nodes:
                raise NotFoundError(f"no such node: {a.render()}")
            if b not in self._nodes:
                raise NotFoundError(f"no such node: {b.render()}")
            if a == b:
                raise InvalidArgumentError("cannot connect a node to itself")
            if kind == EQUIVALENCE:
                prefixes = {a.prefix, b.prefix}
                if prefixes != {FACE, VOICE}:
                    raise InvalidArgumentError(
                        "equivalence edges connect exactly one face and one voice, "
                        f"got {a.render()} and {b.render()}")
            key = (*_edge_key(a, b), kind)
            weight = self._edges.get(key, 0) + 1
            self._edges[key] = weight
            return weight

    def edge_weight(self, a: NodeId, b: NodeId, kind: str = GENERIC) -> int:
        """Current weight of an edge, 0 if absent. Symmetric in the endpoints."""
        with self._lock:
            return self._edges.get((*_edge_key(a, b), kind), 0)

    def update_node(self, node_id: NodeId, new_content: str | None = None,
                    new_embedding=None, weight_delta: int | None = None) -> None:
        """Replace a text node's content and/or adjust any node's weight."""
        with self._lock:
            node = self.node(node_id)
            if weight_delta is not None and node.weight + weight_delta < 1:
                raise InvalidArgumentError(
                    f"weight would drop below 1 on {node_id.render()}")
            if new_content is not None and node.is_entity:
                raise InvalidArgumentError(
                    f"content replacement applies to text nodes, not {node_id.render()}")
            if new_content is not None:
                node.text = new_content
            if new_embedding is not None:
                if node.is_entity:
                    raise InvalidArgumentError(
                        f"embedding replacement applies to text nodes, not {node_id.render()}")
                node.embedding = as_unit_vector(new_embedding, self.config.embedding_dim)
            if weight_delta is not None:
                node.weight += weight_delta

    # -- character resolution ----------------------------------------------------

    def resolve_characters(self) -> CharacterMap:
        """Group entity nodes into characters by winner-take-all equivalence voting.

        Each voice keeps only its maximum-weight equivalence edge (ties to the
        lowest face ordinal); connected components over the kept edges, plus
        isolated entity nodes, become characters. Character ordinals ascend by
        each component's smallest member (faces before voices).
        """
        with self._lock:
            entity_ids = [i for i in self._nodes if i.is_entity]
            best: dict[NodeId, tuple[int, NodeId]] = {}
            for (a, b, kind), weight in self._edges.items():
                if kind != EQUIVALENCE:
                    continue
                voice, face = (a, b) if a.prefix == VOICE else (b, a)
                current = best.get(voice)
                if current is None or (weight, -face.ordinal) > (current[0], -current[1].ordinal):
                    best[voice] = (weight, face)

            parent = {i: i for i in entity_ids}

            def find(x: NodeId) -> NodeId:
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for voice, (_, face) in best.items():
                ra, rb = find(voice), find(face)
                if ra != rb:
                    parent[ra] = rb

            components: dict[NodeId, list[NodeId]] = {}
            for node_id in entity_ids:
                components.setdefault(find(node_id), []).append(node_id)

            def member_key(node_id: NodeId) -> tuple[int, int]:
                return (0 if node_id.prefix == FACE else 1, node_id.ordinal)

            ordered = sorted(components.values(), key=lambda ms: min(map(member_key, ms)))
            assignments: dict[NodeId, int] = {}
            for ordinal, members in enumerate(ordered):
                for node_id in members:
                    assignments[node_id] = ordinal
            return CharacterMap(assignments=assignments)


def structural_equal(a: MemoryGraph, b: MemoryGraph, ignore_clock: bool = False) -> bool:
    """Field-by-field graph comparison; embeddings must match bit-exactly.

    ``ignore_clock`` drops wall-clock metadata, for comparing graphs built at
    different times from the same stream.
    """
    def clean(extra: dict) -> dict:
        if not ignore_clock:
            return extra
        return {k: v for k, v in extra.items() if k not in ("ingested_at", "created_at")}

    with a.lock, b.lock:
        if a.config.embedding_dim != b.config.embedding_dim:
            return False
        if a.config.snapshot_cap != b.config.snapshot_cap:
            return False
        if a._counters != b._counters:
            return False
        if set(a._nodes) != set(b._nodes):
            return False
        for node_id, na in a._nodes.items():
            nb = b._nodes[node_id]
            if na.weight != nb.weight or na.text != nb.text:
                return False
            if (na.embedding is None) != (nb.embedding is None):
                return False
            if na.embedding is not None and not np.array_equal(
                    na.embedding.view(np.uint32), nb.embedding.view(np.uint32)):
                return False
            if (na.snapshots is None) != (nb.snapshots is None):
                return False
            if na.snapshots is not None:
                if len(na.snapshots) != len(nb.snapshots):
                    return False
                for sa, sb in zip(na.snapshots, nb.snapshots):
                    if not np.array_equal(sa.view(np.uint32), sb.view(np.uint32)):
                        return False
            if clean(na.extra) != clean(nb.extra):
                return False
        if a._edges != b._edges:
            return False
        if set(a._clips) != set(b._clips):
            return False
        for index, ca in a._clips.items():
            cb = b._clips[index]
            if ca.episodic_entries != cb.episodic_entries:
                return False
            if ca.semantic_entries != cb.semantic_entries:
                return False
        return True
