"""Deterministic synthetic worlds for end-to-end evaluation.

A world scripts a small cast of identities, each with a true face latent and
voice latent, a clip stream of observations with fixture memory entries, the
ground-truth voice-to-face pairing, and question/answer pairs with scripted
search plans. Everything derives from the seed, so two generations with the
same config are byte-identical.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import SearchPlan
from .errors import InvalidArgumentError
from .graph import EPISODIC, SEMANTIC
from .identity import FeatureObservation, VoiceSegment
from .ids import FACE, VOICE
from .pipeline import ClipInput, LocalShortClip, MemoryEntry, TaggedObservation

_PROPS = ["ladder", "teapot", "easel", "lantern", "compass", "violin", "satchel",
          "mirror", "globe", "anvil", "beacon", "quilt"]
_TOPICS = ["orchard", "harbor", "glacier", "meadow", "canyon", "archive", "foundry",
           "terrace", "observatory", "vineyard", "workshop", "lighthouse"]


@dataclass
class WorldConfig:
    num_identities: int = 5
    num_clips: int = 30
    noise_sigma: float = 0.0
    facts_per_identity: int = 2
    question_count: int = 5
    seed: int = 0
    feature_dim: int = 128
    embedding_dim: int = 64

    def __post_init__(self):
        for name in ("num_identities", "num_clips", "facts_per_identity",
                     "question_count", "feature_dim", "embedding_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")
        # Every identity needs at least two solo clips so the pairing
        # evidence survives the weight-1 cutoff.
        if self.num_clips < 2 * self.num_identities:
            raise InvalidArgumentError(
                f"{self.num_clips} clips cannot give {self.num_identities} "
                "identities two solo clips each")
        if self.question_count > self.num_identities * self.facts_per_identity:
            raise InvalidArgumentError(
                "question_count exceeds the number of scripted facts")


@dataclass
class Identity:
    index: int
    face_latent: np.ndarray
    voice_latent: np.ndarray

    @property
    def face_tag(self) -> str:
        return f"f{self.index}"

    @property
    def voice_tag(self) -> str:
        return f"v{self.index}"


@dataclass
class QAItem:
    question: str
    reference: str
    plan: SearchPlan
    clip_index: int
    entry_text: str


@dataclass
class SyntheticWorld:
    config: WorldConfig
    identities: list[Identity]
    clips: list[ClipInput]
    questions: list[QAItem]
    # Ground truth by tag: voice tag -> face tag of the same person.
    voice_to_face: dict = field(default_factory=dict)

    def identity_of_tag(self, tag: str) -> int:
        return int(tag[1:])


def _unit(vec: np.ndarray) -> np.ndarray:
    return (vec / np.linalg.norm(vec)).astype(np.float32)


def _perturb(latent: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Latent plus a random direction of length sigma, re-normalized.

    sigma is the expected L2 norm of the perturbation, independent of the
    feature dimension. Zero sigma returns the latent bit-exactly.
    """
    if sigma == 0.0:
        return latent.copy()
    direction = rng.normal(size=latent.shape[0])
    direction = direction / np.linalg.norm(direction)
    return _unit(latent.astype(np.float64) + sigma * direction)


def generate_world(config: WorldConfig) -> SyntheticWorld:
    """Build the scripted cast, clip stream, and QA pairs for one seed."""
    rng = np.random.default_rng(config.seed)
    chooser = random.Random(config.seed ^ 0x5EED)

    identities = []
    for i in range(config.num_identities):
        identities.append(Identity(
            index=i,
            face_latent=_unit(rng.normal(size=config.feature_dim)),
            voice_latent=_unit(rng.normal(size=config.feature_dim))))

    k = config.num_identities
    clips: list[ClipInput] = []
    # Clip -> identities present; the first 2k clips are solo clips so each
    # identity accumulates two high-confidence pairing samples.
    cast_per_clip: list[list[int]] = []
    for c in range(config.num_clips):
        if c < 2 * k:
            cast_per_clip.append([c % k])
        elif k == 1:
            cast_per_clip.append([0])
        else:
            pair = chooser.sample(range(k), 2)
            cast_per_clip.append(sorted(pair))

    # Scripted facts: (identity, ordinal) -> hosting clip, round-robin over
    # the identity's solo clips so facts always land where the cast is known.
    fact_clip: dict[tuple[int, int], int] = {}
    for i in range(k):
        solo_clips = [c for c, cast in enumerate(cast_per_clip) if cast == [i]]
        for j in range(config.facts_per_identity):
            fact_clip[(i, j)] = solo_clips[j % len(solo_clips)]

    facts_by_clip: dict[int, list[tuple[int, int]]] = {}
    for key, clip_index in fact_clip.items():
        facts_by_clip.setdefault(clip_index, []).append(key)

    fact_entry_text: dict[tuple[int, int], str] = {}
    fact_marker: dict[tuple[int, int], str] = {}

    for c, cast in enumerate(cast_per_clip):
        observations = []
        short_faces: list[str] = []
        short_voices: list[str] = []
        entries: list[MemoryEntry] = []
        for i in cast:
            ident = identities[i]
            observations.append(TaggedObservation(
                tag=ident.face_tag,
                observation=FeatureObservation(
                    modality=FACE,
                    embedding=_perturb(ident.face_latent, config.noise_sigma, rng),
                    clip_index=c)))
            observations.append(TaggedObservation(
                tag=ident.voice_tag,
                observation=FeatureObservation(
                    modality=VOICE,
                    embedding=_perturb(ident.voice_latent, config.noise_sigma, rng),
                    clip_index=c,
                    segments=[VoiceSegment(0.0, 4.0, f"scene {c} line {i}")])))
            short_faces.append(ident.face_tag)
            short_voices.append(ident.voice_tag)
            prop = _PROPS[(c + i) % len(_PROPS)]
            entries.append(MemoryEntry(
                kind=EPISODIC,
                text=f"<{ident.face_tag}> stands near the {prop} in scene {c}."))
        if len(cast) == 1:
            ident = identities[cast[0]]
            entries.append(MemoryEntry(
                kind=SEMANTIC,
                text=f"Equivalence: <{ident.face_tag}>, <{ident.voice_tag}>"))
        for (i, j) in sorted(facts_by_clip.get(c, [])):
            ident = identities[i]
            topic = _TOPICS[(i * config.facts_per_identity + j) % len(_TOPICS)]
            marker = f"{topic} plan {i}-{j}"
            text = (f"<{ident.voice_tag}> describes the {marker} while "
                    f"reviewing notes in scene {c}.")
            fact_marker[(i, j)] = marker
            fact_entry_text[(i, j)] = text
            entries.append(MemoryEntry(kind=SEMANTIC, text=text))
        clips.append(ClipInput(
            clip_index=c,
            observations=observations,
            short_clips=[LocalShortClip(faces=short_faces, voices=short_voices)],
            generated=entries))

    questions: list[QAItem] = []
    fact_keys = sorted(fact_marker)
    for q in range(config.question_count):
        key = fact_keys[q % len(fact_keys)]
        marker = fact_marker[key]
        entry_text = fact_entry_text[key]
        queries = []
        if q % 2 == 1:
            # Exercise the multi-round path with a miss before the hit.
            queries.append(f"unrelated warmup probe {q} xylo")
        queries.append(entry_text)
        questions.append(QAItem(
            question=f"Which plan is described in scene {fact_clip[key]}?",
            reference=marker,
            plan=SearchPlan(queries=queries, answer_keyword=marker),
            clip_index=fact_clip[key],
            entry_text=entry_text))

    voice_to_face = {ident.voice_tag: ident.face_tag for ident in identities}
    return SyntheticWorld(config=config, identities=identities, clips=clips,
                          questions=questions, voice_to_face=voice_to_face)


# -- world directory layout ------------------------------------------------------

def clip_to_dict(clip: ClipInput) -> dict:
    return {
        "clip_index": clip.clip_index,
        "observations": [
            {
                "tag": t.tag,
                "modality": t.observation.modality,
                "embedding": [float(x) for x in t.observation.embedding],
                "segments": [
                    {"start": s.start_s, "end": s.end_s, "transcript": s.transcript}
                    for s in t.observation.segments
                ],
            }
            for t in clip.observations
        ],
        "short_clips": [{"faces": sc.faces, "voices": sc.voices}
                        for sc in clip.short_clips],
        "entries": [{"kind": e.kind, "text": e.text} for e in (clip.generated or [])],
    }


def clip_from_dict(data: dict) -> ClipInput:
    observations = []
    for obs in data.get("observations", []):
        observations.append(TaggedObservation(
            tag=obs["tag"],
            observation=FeatureObservation(
                modality=obs["modality"],
                embedding=np.asarray(obs["embedding"], dtype=np.float32),
                clip_index=data["clip_index"],
                segments=[VoiceSegment(s["start"], s["end"], s.get("transcript", ""))
                          for s in obs.get("segments", [])])))
    return ClipInput(
        clip_index=data["clip_index"],
        observations=observations,
        short_clips=[LocalShortClip(faces=list(sc.get("faces", [])),
                                    voices=list(sc.get("voices", [])))
                     for sc in data.get("short_clips", [])],
        generated=[MemoryEntry(kind=e["kind"], text=e["text"])
                   for e in data.get("entries", [])] or None)


def _question_to_dict(item: QAItem) -> dict:
    return {
        "question": item.question,
        "reference": item.reference,
        "queries": item.plan.queries,
        "answer_keyword": item.plan.answer_keyword,
        "clip_index": item.clip_index,
        "entry_text": item.entry_text,
    }


def _question_from_dict(data: dict) -> QAItem:
    return QAItem(
        question=data["question"],
        reference=data["reference"],
        plan=SearchPlan(queries=list(data["queries"]),
                        answer_keyword=data["answer_keyword"]),
        clip_index=data["clip_index"],
        entry_text=data["entry_text"])


def save_world(world: SyntheticWorld, directory) -> None:
    """Write the world as clips.jsonl, questions.jsonl, ground truth, config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "clips.jsonl", "w", encoding="utf-8") as fh:
        for clip in world.clips:
            fh.write(json.dumps(clip_to_dict(clip), sort_keys=True) + "\n")
    with open(directory / "questions.jsonl", "w", encoding="utf-8") as fh:
        for item in world.questions:
            fh.write(json.dumps(_question_to_dict(item), sort_keys=True) + "\n")
    with open(directory / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump({"voice_to_face": world.voice_to_face}, fh, sort_keys=True, indent=2)
    with open(directory / "config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(world.config), fh, sort_keys=True, indent=2)


def load_world(directory) -> SyntheticWorld:
    directory = Path(directory)
    with open(directory / "config.json", encoding="utf-8") as fh:
        config = WorldConfig(**json.load(fh))
    clips = []
    with open(directory / "clips.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                clips.append(clip_from_dict(json.loads(line)))
    questions = []
    with open(directory / "questions.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                questions.append(_question_from_dict(json.loads(line)))
    with open(directory / "ground_truth.json", encoding="utf-8") as fh:
        voice_to_face = json.load(fh)["voice_to_face"]
    # Latents are not persisted; identity structure is recoverable from tags.
    identities = []
    return SyntheticWorld(config=config, identities=identities, clips=clips,
                          questions=questions, voice_to_face=voice_to_face)
