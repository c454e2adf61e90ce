"""Clip-by-clip ingestion into the memory graph.

Each clip input carries feature observations under clip-local tags. The
pipeline resolves observations to global entity nodes, asks the memory
generator for episodic/semantic entries, rewrites local tags to the matched
global ids, turns well-formed equivalence entries into edge reinforcements,
and stores the rest as embedded text entries. The whole clip commits under
the writer lock, so readers only ever see fully ingested clips.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from .embedding import Embedder
from .errors import (ClipConflictError, EntryFormatError, InvalidArgumentError,
                     MemweaveError)
from .graph import EPISODIC, EQUIVALENCE, SEMANTIC, ClipRecord, MemoryGraph
from .identity import (FeatureObservation, IdentityConfig, ShortClip, VoiceSegment,
                       filter_voice_segments, match_or_create)
from .ids import FACE, VOICE, NodeId

logger = logging.getLogger(__name__)

_EQUIVALENCE_RE = re.compile(
    r"\s*Equivalence\s*:\s*<(face|voice)_(\d+)>\s*,\s*<(face|voice)_(\d+)>\s*")
_GLOBAL_TOKEN_RE = re.compile(r"<(face|voice)_(\d+)>")
_LOCAL_TOKEN_RE = re.compile(r"<([^<>\s]+)>")
_RESERVED_TAG_RE = re.compile(r"(face|voice|character)_\d+")


@dataclass
class MemoryEntry:
    kind: str  # episodic | semantic
    text: str

    def __post_init__(self):
        if self.kind not in (EPISODIC, SEMANTIC):
            raise InvalidArgumentError(f"unknown entry kind: {self.kind!r}")


@dataclass
class TaggedObservation:
    tag: str
    observation: FeatureObservation


@dataclass
class LocalShortClip:
    """Short-clip descriptor in clip-local tags, resolved after matching."""

    faces: list[str] = field(default_factory=list)
    voices: list[str] = field(default_factory=list)


@dataclass
class ClipInput:
    """The ingestion unit for one clip."""

    clip_index: int
    observations: list[TaggedObservation] = field(default_factory=list)
    short_clips: list[LocalShortClip] = field(default_factory=list)
    generated: Optional[list[MemoryEntry]] = None

    def __post_init__(self):
        tags = [t.tag for t in self.observations]
        if len(tags) != len(set(tags)):
            raise InvalidArgumentError(f"duplicate local tags in clip {self.clip_index}")
        for tag in tags:
            if not tag or _LOCAL_TOKEN_RE.fullmatch(f"<{tag}>") is None:
                raise InvalidArgumentError(f"invalid local tag {tag!r}")
            if _RESERVED_TAG_RE.fullmatch(tag):
                raise InvalidArgumentError(
                    f"local tag {tag!r} collides with global id syntax")


class MemoryGenerator(Protocol):
    """Produces memory entries for a clip given the resolved global ids."""

    def generate(self, clip: ClipInput, id_map: dict) -> list[MemoryEntry]: ...


class FixtureGenerator:
    """Returns the entries pre-supplied on the clip input (simulation mode)."""

    def generate(self, clip: ClipInput, id_map: dict) -> list[MemoryEntry]:
        return list(clip.generated or [])


class HttpGenerator:
    """Adapter for a remote memory generator.

    Sends the clip context and resolved ids as JSON, expects
    ``{"entries": [{"kind": ..., "text": ...}]}`` back. Out of the hermetic
    test path; exercised only against local stubs.
    """

    def __init__(self, endpoint: str, auth_header: str | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint
        self.auth_header = auth_header
        self.timeout = timeout

    def generate(self, clip: ClipInput, id_map: dict) -> list[MemoryEntry]:
        import requests

        payload = {
            "clip_index": clip.clip_index,
            "ids": {tag: node_id.render() for tag, node_id in id_map.items()},
            "segments": [
                {"tag": tagged.tag, "start": seg.start_s, "end": seg.end_s,
                 "transcript": seg.transcript}
                for tagged in clip.observations
                for seg in tagged.observation.segments
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.auth_header:
            headers["Authorization"] = self.auth_header
        resp = requests.post(self.endpoint, json=payload, headers=headers,
                             timeout=self.timeout)
        resp.raise_for_status()
        body = resp.json()
        return [MemoryEntry(kind=e["kind"], text=e["text"]) for e in body["entries"]]


@dataclass
class IngestReport:
    """What one clip ingestion did to the graph."""

    clip_index: int
    matched: dict = field(default_factory=dict)  # local tag -> NodeId
    created_nodes: list = field(default_factory=list)
    stored_entries: list = field(default_factory=list)
    reinforced_edges: list = field(default_factory=list)  # (face, voice, weight)
    rejected_entries: list = field(default_factory=list)  # (text, reason)
    skipped_observations: list = field(default_factory=list)  # local tags
    rejected: bool = False
    reason: str = ""


def parse_semantic_entry(text: str) -> Optional[tuple[NodeId, NodeId]]:
    """Recognize an equivalence entry; return (face, voice) or None for plain text.

    The two ids may appear in either order. An equivalence pattern joining two
    ids of the same modality is a format error.
    """
    m = _EQUIVALENCE_RE.fullmatch(text)
    if m is None:
        return None
    first = NodeId(m.group(1), int(m.group(2)))
    second = NodeId(m.group(3), int(m.group(4)))
    if first.prefix == second.prefix:
        raise EntryFormatError(
            f"equivalence requires one face and one voice: {text.strip()!r}")
    face, voice = (first, second) if first.prefix == FACE else (second, first)
    return face, voice


def rewrite_local_tags(text: str, id_map: dict, declared_tags: set) -> str:
    """Replace ``<tag>`` references with global id tokens.

    A declared tag with no resolved id (its observation was skipped) raises,
    so the caller can reject the entry. Foreign angle-bracket text passes
    through untouched.
    """
    def replace(match: re.Match) -> str:
        token = match.group(1)
        node_id = id_map.get(token)
        if node_id is not None:
            return node_id.render()
        if token in declared_tags:
            raise EntryFormatError(f"unresolved local tag <{token}>")
        return match.group(0)

    return _LOCAL_TOKEN_RE.sub(replace, text)


def _verify_entity_tokens(graph: MemoryGraph, text: str) -> None:
    for m in _GLOBAL_TOKEN_RE.finditer(text):
        node_id = NodeId(m.group(1), int(m.group(2)))
        if not graph.has_node(node_id):
            raise EntryFormatError(f"unknown entity id {node_id.render()}")


def ingest_clip(graph: MemoryGraph, clip: ClipInput, generator: MemoryGenerator,
                embedder: Embedder, config: IdentityConfig | None = None) -> IngestReport:
    """Ingest one clip atomically; entries that fail validation are dropped."""
    config = config or IdentityConfig()
    report = IngestReport(clip_index=clip.clip_index)
    with graph.lock:
        if graph.has_clip(clip.clip_index):
            raise ClipConflictError(f"clip {clip.clip_index} already ingested")

        declared_tags = {t.tag for t in clip.observations}
        for tagged in clip.observations:
            obs = tagged.observation
            if obs.modality == VOICE:
                kept = filter_voice_segments(obs.segments, config.min_segment_s)
                if not kept:
                    report.skipped_observations.append(tagged.tag)
                    continue
                obs = FeatureObservation(modality=VOICE, embedding=obs.embedding,
                                         clip_index=obs.clip_index, segments=kept)
            node_id, created = match_or_create(graph, obs, config)
            report.matched[tagged.tag] = node_id
            if created:
                report.created_nodes.append(node_id)

        try:
            entries = generator.generate(clip, dict(report.matched))
        except Exception as exc:  # generator is external code
            report.rejected = True
            report.reason = f"generator failed: {exc}"
            logger.warning("clip %d: %s", clip.clip_index, report.reason)
            return report

        # Register the clip even if every entry turns into an edge, so the
        # index is marked ingested and re-ingestion conflicts.
        graph._clips.setdefault(clip.clip_index, ClipRecord(clip.clip_index))

        for entry in entries:
            try:
                text = rewrite_local_tags(entry.text, report.matched, declared_tags)
                _verify_entity_tokens(graph, text)
                pair = parse_semantic_entry(text)
            except EntryFormatError as exc:
                report.rejected_entries.append((entry.text, str(exc)))
                logger.info("clip %d: dropped entry: %s", clip.clip_index, exc)
                continue
            if pair is not None:
                face, voice = pair
                weight = graph.reinforce_edge(face, voice, EQUIVALENCE)
                report.reinforced_edges.append((face, voice, weight))
            else:
                node_id = graph.add_text_entry(clip.clip_index, entry.kind, text,
                                               embedder.embed(text))
                report.stored_entries.append(node_id)
    return report


def resolve_short_clips(clip: ClipInput, matched: dict) -> list[ShortClip]:
    """Translate local-tag short-clip descriptors into global-id short clips.

    Tags whose observations were skipped are dropped from the descriptor.
    """
    resolved = []
    for i, local in enumerate(clip.short_clips):
        faces = [matched[t] for t in local.faces if t in matched]
        voices = [matched[t] for t in local.voices if t in matched]
        resolved.append(ShortClip(index=clip.clip_index * 1000 + i,
                                  faces=faces, voices=voices))
    return resolved


def ingest_stream(graph: MemoryGraph, clips: Sequence[ClipInput],
                  generator: MemoryGenerator, embedder: Embedder,
                  config: IdentityConfig | None = None) -> list[IngestReport]:
    """Ingest clips in order; per-clip failures are flagged, not fatal."""
    reports = []
    for clip in clips:
        try:
            reports.append(ingest_clip(graph, clip, generator, embedder, config))
        except MemweaveError as exc:
            reports.append(IngestReport(clip_index=clip.clip_index, rejected=True,
                                        reason=str(exc)))
    return reports
