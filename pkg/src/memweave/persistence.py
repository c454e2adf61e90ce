"""Graph snapshot serialization: a self-describing versioned binary stream.

Layout (all little-endian):

    magic   4s   b"MWGR"
    version u32  currently 1
    header  u32 embedding_dim, u32 snapshot_cap, 3x u64 id counters
    nodes   u64 count, then per node:
              u8 prefix (0 text / 1 face / 2 voice), u64 ordinal, u64 weight,
              u8 flags (1 text, 2 embedding, 4 snapshots),
              [u64 len + utf8 text], [dim x f32], [u32 count + count*dim x f32],
              u64 len + utf8 JSON extra
    edges   u64 count, then per edge:
              u8/u64 endpoint a, u8/u64 endpoint b, u8 kind (0 equivalence,
              1 generic), u64 weight
    clips   u64 count, then per clip:
              u64 clip_index, u64 episodic count + u64 ordinals,
              u64 semantic count + u64 ordinals

Loading parses the full stream into a fresh graph and returns it only on
success, so a truncated or corrupt stream never yields a partial graph.
"""

from __future__ import annotations

import json
import struct
from typing import Iterator

import numpy as np

from .errors import SnapshotFormatError
from .graph import ClipRecord, GraphConfig, MemoryGraph, MemoryNode
from .ids import FACE, TEXT, VOICE, NodeId

MAGIC = b"MWGR"
VERSION = 1

_PREFIX_CODES = {TEXT: 0, FACE: 1, VOICE: 2}
_CODE_PREFIXES = {v: k for k, v in _PREFIX_CODES.items()}
_KIND_CODES = {"equivalence": 0, "generic": 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_FLAG_TEXT = 1
_FLAG_EMBEDDING = 2
_FLAG_SNAPSHOTS = 4


def snapshot(graph: MemoryGraph) -> bytes:
    """Serialize a graph to bytes. Vectors are stored as little-endian f32."""
    with graph.lock:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<I", VERSION)
        out += struct.pack("<II", graph.config.embedding_dim, graph.config.snapshot_cap)
        out += struct.pack("<QQQ", graph._counters[TEXT], graph._counters[FACE],
                           graph._counters[VOICE])

        nodes = [graph._nodes[i] for i in sorted(graph._nodes)]
        out += struct.pack("<Q", len(nodes))
        for node in nodes:
            flags = ((_FLAG_TEXT if node.text is not None else 0)
                     | (_FLAG_EMBEDDING if node.embedding is not None else 0)
                     | (_FLAG_SNAPSHOTS if node.snapshots is not None else 0))
            out += struct.pack("<BQQB", _PREFIX_CODES[node.id.prefix], node.id.ordinal,
                               node.weight, flags)
            if node.text is not None:
                raw = node.text.encode("utf-8")
                out += struct.pack("<Q", len(raw))
                out += raw
            if node.embedding is not None:
                out += np.ascontiguousarray(node.embedding, dtype="<f4").tobytes()
            if node.snapshots is not None:
                out += struct.pack("<I", len(node.snapshots))
                for snap in node.snapshots:
                    out += np.ascontiguousarray(snap, dtype="<f4").tobytes()
            extra_raw = json.dumps(node.extra, sort_keys=True).encode("utf-8")
            out += struct.pack("<Q", len(extra_raw))
            out += extra_raw

        edges = graph.edge_items()
        out += struct.pack("<Q", len(edges))
        for a, b, kind, weight in edges:
            out += struct.pack("<BQBQBQ", _PREFIX_CODES[a.prefix], a.ordinal,
                               _PREFIX_CODES[b.prefix], b.ordinal,
                               _KIND_CODES[kind], weight)

        clips = [graph._clips[i] for i in sorted(graph._clips)]
        out += struct.pack("<Q", len(clips))
        for record in clips:
            out += struct.pack("<Q", record.clip_index)
            out += struct.pack("<Q", len(record.episodic_entries))
            for entry in record.episodic_entries:
                out += struct.pack("<Q", entry.ordinal)
            out += struct.pack("<Q", len(record.semantic_entries))
            for entry in record.semantic_entries:
                out += struct.pack("<Q", entry.ordinal)
        return bytes(out)


class _Reader:
    """Cursor over a snapshot stream that reports offset and field on failure."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, field: str) -> bytes:
        if self.offset + size > len(self.data):
            raise SnapshotFormatError("truncated stream", offset=self.offset, field=field)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, field: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt), field))
        return values[0] if len(values) == 1 else values

    def text(self, field: str) -> str:
        length = self.unpack("<Q", field + ".len")
        raw = self.take(length, field)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SnapshotFormatError(f"invalid utf-8: {exc}", offset=self.offset,
                                      field=field) from None

    def vector(self, dim: int, field: str) -> np.ndarray:
        raw = self.take(4 * dim, field)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)

    def node_id(self, field: str) -> NodeId:
        code, ordinal = self.unpack("<BQ", field)
        prefix = _CODE_PREFIXES.get(code)
        if prefix is None:
            raise SnapshotFormatError(f"unknown modality code {code}",
                                      offset=self.offset, field=field)
        return NodeId(prefix, ordinal)


def load(data: bytes) -> MemoryGraph:
    """Parse a snapshot back into a graph; raises SnapshotFormatError on any defect."""
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise SnapshotFormatError("bad magic", offset=0, field="magic")
    version = reader.unpack("<I", "version")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}", offset=4,
                                  field="version")
    dim, cap = reader.unpack("<II", "config")
    graph = MemoryGraph(GraphConfig(embedding_dim=dim, snapshot_cap=cap))
    counters = reader.unpack("<QQQ", "counters")
    graph._counters = {TEXT: counters[0], FACE: counters[1], VOICE: counters[2]}

    node_count = reader.unpack("<Q", "node_count")
    for n in range(node_count):
        field_base = f"node[{n}]"
        code, ordinal, weight, flags = reader.unpack("<BQQB", field_base)
        prefix = _CODE_PREFIXES.get(code)
        if prefix is None:
            raise SnapshotFormatError(f"unknown modality code {code}",
                                      offset=reader.offset, field=field_base + ".prefix")
        if weight < 1:
            raise SnapshotFormatError(f"non-positive weight {weight}",
                                      offset=reader.offset, field=field_base + ".weight")
        node = MemoryNode(id=NodeId(prefix, ordinal), weight=weight)
        if flags & _FLAG_TEXT:
            node.text = reader.text(field_base + ".text")
        if flags & _FLAG_EMBEDDING:
            node.embedding = reader.vector(dim, field_base + ".embedding")
        if flags & _FLAG_SNAPSHOTS:
            count = reader.unpack("<I", field_base + ".snapshot_count")
            node.snapshots = [reader.vector(dim, field_base + f".snapshot[{i}]")
                              for i in range(count)]
        extra_text = reader.text(field_base + ".extra")
        try:
            node.extra = json.loads(extra_text)
        except json.JSONDecodeError as exc:
            raise SnapshotFormatError(f"invalid extra JSON: {exc}",
                                      offset=reader.offset,
                                      field=field_base + ".extra") from None
        if node.id in graph._nodes:
            raise SnapshotFormatError(f"duplicate node {node.id.render()}",
                                      offset=reader.offset, field=field_base)
        graph._nodes[node.id] = node

    edge_count = reader.unpack("<Q", "edge_count")
    for e in range(edge_count):
        field_base = f"edge[{e}]"
        a = reader.node_id(field_base + ".a")
        b = reader.node_id(field_base + ".b")
        kind_code, weight = reader.unpack("<BQ", field_base + ".kind")
        kind = _CODE_KINDS.get(kind_code)
        if kind is None:
            raise SnapshotFormatError(f"unknown edge kind {kind_code}",
                                      offset=reader.offset, field=field_base + ".kind")
        if a not in graph._nodes or b not in graph._nodes:
            raise SnapshotFormatError("edge references missing node",
                                      offset=reader.offset, field=field_base)
        graph._edges[(a, b, kind) if a <= b else (b, a, kind)] = weight

    clip_count = reader.unpack("<Q", "clip_count")
    for c in range(clip_count):
        field_base = f"clip[{c}]"
        clip_index = reader.unpack("<Q", field_base + ".index")
        record = ClipRecord(clip_index)
        for kind_name, target in (("episodic", record.episodic_entries),
                                  ("semantic", record.semantic_entries)):
            count = reader.unpack("<Q", f"{field_base}.{kind_name}_count")
            for i in range(count):
                ordinal = reader.unpack("<Q", f"{field_base}.{kind_name}[{i}]")
                entry = NodeId(TEXT, ordinal)
                if entry not in graph._nodes:
                    raise SnapshotFormatError(
                        f"clip references missing entry TEXT_{ordinal}",
                        offset=reader.offset, field=f"{field_base}.{kind_name}[{i}]")
                target.append(entry)
        if clip_index in graph._clips:
            raise SnapshotFormatError(f"duplicate clip {clip_index}",
                                      offset=reader.offset, field=field_base)
        graph._clips[clip_index] = record

    if reader.offset != len(data):
        raise SnapshotFormatError("trailing data after graph", offset=reader.offset,
                                  field="end")
    return graph


def save_file(graph: MemoryGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot(graph))


def load_file(path) -> MemoryGraph:
    with open(path, "rb") as fh:
        return load(fh.read())


def dump_records(graph: MemoryGraph, what: str) -> Iterator[dict]:
    """Line-delimited record dump for the inspect CLI.

    ``what`` is one of nodes / edges / clips / characters.
    """
    if what == "nodes":
        for node_id in graph.node_ids():
            node = graph.node(node_id)
            record = {"id": node_id.render(), "modality": node.modality,
                      "weight": node.weight}
            if node.text is not None:
                record["text"] = node.text
            if node.snapshots is not None:
                record["snapshot_count"] = len(node.snapshots)
            record["extra"] = node.extra
            yield record
    elif what == "edges":
        for a, b, kind, weight in graph.edge_items():
            yield {"a": a.render(), "b": b.render(), "kind": kind, "weight": weight}
    elif what == "clips":
        for index in graph.clip_indices():
            record = graph.clip(index)
            yield {"clip": record.render(),
                   "episodic": [graph.node(i).text for i in record.episodic_entries],
                   "semantic": [graph.node(i).text for i in record.semantic_entries]}
    elif what == "characters":
        character_map = graph.resolve_characters()
        groups: dict[int, list[NodeId]] = {}
        for node_id, ordinal in character_map.assignments.items():
            groups.setdefault(ordinal, []).append(node_id)
        for ordinal in sorted(groups):
            yield {"character": f"<character_{ordinal}>",
                   "members": [i.render() for i in sorted(groups[ordinal])]}
    else:
        raise ValueError(f"unknown dump kind: {what!r}")
