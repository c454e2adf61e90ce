"""Face/voice identity resolution.

Online matching assigns each incoming feature observation to an existing
entity node when its mean snapshot similarity strictly exceeds the modality
threshold, otherwise creates a new node. Offline, short solo clips (exactly
one face and one voice) vote for a global voice-to-face dictionary: weight-1
pairs are discarded, each face keeps its dominant voice only when that voice
holds at least the vote-ratio share, and each voice then keeps its single
best face.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .embedding import as_unit_vector, average_similarity
from .errors import InvalidArgumentError
from .graph import MemoryGraph
from .ids import FACE, VOICE, NodeId

DEFAULT_FACE_THRESHOLD = 0.3
DEFAULT_VOICE_THRESHOLD = 0.6
DEFAULT_VOTE_RATIO = 0.6
DEFAULT_MIN_SEGMENT_S = 2.0


@dataclass(frozen=True)
class VoiceSegment:
    start_s: float
    end_s: float
    transcript: str = ""

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise InvalidArgumentError(
                f"segment end {self.end_s} must exceed start {self.start_s}")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


@dataclass
class FeatureObservation:
    """One extracted face or voice feature from a clip."""

    modality: str
    embedding: np.ndarray
    clip_index: int = 0
    segments: list[VoiceSegment] = field(default_factory=list)

    def __post_init__(self):
        if self.modality not in (FACE, VOICE):
            raise InvalidArgumentError(f"observation modality must be face or voice, "
                                       f"got {self.modality!r}")
        self.embedding = np.asarray(self.embedding, dtype=np.float32)
        if self.modality == VOICE and not self.segments:
            raise InvalidArgumentError("voice observations carry at least one segment")


@dataclass
class ShortClip:
    """Faces and voices present in one short, visually stable segment."""

    index: int
    faces: frozenset  # of NodeId
    voices: frozenset  # of NodeId

    def __post_init__(self):
        self.faces = frozenset(self.faces)
        self.voices = frozenset(self.voices)


@dataclass(frozen=True)
class MetaClip:
    """A short clip with exactly one face and one voice: pairing evidence."""

    clip: ShortClip
    face: NodeId
    voice: NodeId


@dataclass(frozen=True)
class MetaDictionary:
    """Global voice-to-face mapping mined from meta-clips."""

    mapping: dict  # voice NodeId -> face NodeId

    def __contains__(self, voice: NodeId) -> bool:
        return voice in self.mapping

    def __getitem__(self, voice: NodeId) -> NodeId:
        return self.mapping[voice]

    def __len__(self) -> int:
        return len(self.mapping)

    def items(self):
        return sorted(self.mapping.items())


@dataclass
class IdentityConfig:
    face_threshold: float = DEFAULT_FACE_THRESHOLD
    voice_threshold: float = DEFAULT_VOICE_THRESHOLD
    vote_ratio: float = DEFAULT_VOTE_RATIO
    min_segment_s: float = DEFAULT_MIN_SEGMENT_S

    def __post_init__(self):
        for name in ("face_threshold", "voice_threshold"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1], got {value}")
        if not 0.5 < self.vote_ratio <= 1.0:
            raise InvalidArgumentError(
                f"vote_ratio must lie in (0.5, 1], got {self.vote_ratio}")

    def threshold_for(self, modality: str) -> float:
        return self.face_threshold if modality == FACE else self.voice_threshold


def filter_voice_segments(segments: Sequence[VoiceSegment],
                          min_segment_s: float = DEFAULT_MIN_SEGMENT_S) -> list[VoiceSegment]:
    """Drop segments shorter than the reliability floor (2 s by default)."""
    return [s for s in segments if s.duration >= min_segment_s]


def match_or_create(graph: MemoryGraph, observation: FeatureObservation,
                    config: IdentityConfig | None = None) -> tuple[NodeId, bool]:
    """Assign an observation to the best-matching entity node or create one.

    The winning node is the one with the highest mean snapshot similarity,
    provided it strictly exceeds the modality threshold; equal scores break
    toward the lower ordinal. A match absorbs the observation as a new
    snapshot (FIFO-capped); otherwise a fresh node is created.
    """
    config = config or IdentityConfig()
    vec = as_unit_vector(observation.embedding, graph.config.embedding_dim)
    threshold = config.threshold_for(observation.modality)
    with graph.lock:
        best_id: Optional[NodeId] = None
        best_score = -2.0
        for node_id in graph.node_ids(observation.modality):
            score = average_similarity(vec, graph.node(node_id).snapshots)
            if score > best_score:
                best_score = score
                best_id = node_id
        if best_id is not None and best_score > threshold:
            graph.append_snapshot(best_id, vec)
            return best_id, False
        return graph.add_entity_node(observation.modality, [vec]), True


def extract_meta_clips(clips: Iterable[ShortClip]) -> list[MetaClip]:
    """Keep clips with exactly one face and one voice, preserving order."""
    result = []
    for clip in clips:
        if len(clip.faces) == 1 and len(clip.voices) == 1:
            result.append(MetaClip(clip=clip, face=next(iter(clip.faces)),
                                   voice=next(iter(clip.voices))))
    return result


def build_meta_dictionary(meta_clips: Sequence[MetaClip],
                          vote_ratio: float = DEFAULT_VOTE_RATIO) -> MetaDictionary:
    """Bipartite weight voting over meta-clip co-occurrences.

    Steps: count (face, voice) co-occurrences; discard weight-1 pairs; for
    each face keep only its heaviest voice and only when that voice holds at
    least ``vote_ratio`` of the face's surviving weight (ties break to the
    lowest voice ordinal); for each voice keep only its heaviest face (ties to
    the lowest face ordinal); emit the surviving pairs as voice -> face.
    """
    if not 0.5 < vote_ratio <= 1.0:
        raise InvalidArgumentError(f"vote_ratio must lie in (0.5, 1], got {vote_ratio}")

    weights: dict[tuple[NodeId, NodeId], int] = {}
    for meta in meta_clips:
        key = (meta.face, meta.voice)
        weights[key] = weights.get(key, 0) + 1

    edges = {pair: w for pair, w in weights.items() if w > 1}

    by_face: dict[NodeId, list[NodeId]] = {}
    for face, voice in edges:
        by_face.setdefault(face, []).append(voice)
    for face, voices in by_face.items():
        voices.sort(key=lambda v: (-edges[(face, v)], v.ordinal))
        winner = voices[0]
        total = sum(edges[(face, v)] for v in voices)
        if edges[(face, winner)] / total >= vote_ratio:
            drop = voices[1:]
        else:
            drop = voices
        for voice in drop:
            del edges[(face, voice)]

    by_voice: dict[NodeId, list[NodeId]] = {}
    for face, voice in edges:
        by_voice.setdefault(voice, []).append(face)
    for voice, faces in by_voice.items():
        faces.sort(key=lambda f: (-edges[(f, voice)], f.ordinal))
        for face in faces[1:]:
            del edges[(face, voice)]

    return MetaDictionary(mapping={voice: face for face, voice in edges})


def annotate_equivalence(clip_faces: Iterable[NodeId], clip_voices: Iterable[NodeId],
                         dictionary: MetaDictionary) -> Optional[list[str]]:
    """Equivalence-entry texts for a clip, or None when the clip is rejected.

    Any clip voice missing from the dictionary rejects the whole clip. A voice
    whose mapped face is not present in the clip simply yields no entry.
    """
    faces = set(clip_faces)
    voices = sorted(set(clip_voices))
    for voice in voices:
        if voice not in dictionary:
            return None
    entries = []
    for voice in voices:
        face = dictionary[voice]
        if face in faces:
            entries.append(f"Equivalence: {face.render()}, {voice.render()}")
    return entries
