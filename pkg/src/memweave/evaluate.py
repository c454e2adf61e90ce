"""End-to-end evaluation of a synthetic world.

The same evaluation runs against an in-process engine or a running HTTP
service through a small client seam, so both paths can be checked for
identical reports: ingest the clip stream, mine the voice-to-face dictionary
from the short clips, run one scripted control session per question, judge
with the hermetic mock judge, and aggregate.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .control import (ControlConfig, MockJudge, ScriptedPolicy, SearchPlan,
                      judge_answer, run_control)
from .embedding import MockEmbedder
from .errors import MemweaveError
from .graph import GraphConfig, MemoryGraph
from .identity import (IdentityConfig, ShortClip, build_meta_dictionary,
                       extract_meta_clips)
from .ids import NodeId
from .pipeline import ClipInput, FixtureGenerator, ingest_clip, resolve_short_clips
from .retrieval import search_clip
from .world import SyntheticWorld

_REPORT_FIELDS = ("qa_accuracy", "identity_precision", "identity_recall",
                  "identity_f1", "retrieval_top1_rate", "mean_rounds",
                  "question_count", "mapping_size")


@dataclass
class EvalReport:
    qa_accuracy: float
    identity_precision: float
    identity_recall: float
    identity_f1: float
    retrieval_top1_rate: float
    mean_rounds: float
    question_count: int
    mapping_size: int
    records: list = field(default_factory=list, repr=False, compare=False)

    def to_json(self) -> str:
        return json.dumps({name: getattr(self, name) for name in _REPORT_FIELDS},
                          sort_keys=True)


class EngineClient(Protocol):
    """The minimal engine surface the evaluation needs."""

    def ingest(self, clip: ClipInput) -> dict: ...

    def ask(self, question: str, plan: SearchPlan, max_rounds: int) -> dict: ...

    def top_clips(self, query: str) -> list[int]: ...


class LocalClient:
    """Runs the engine in-process on a fresh graph."""

    def __init__(self, embedding_dim: int = 64,
                 identity_config: IdentityConfig | None = None,
                 control_config: ControlConfig | None = None):
        self.graph = MemoryGraph(GraphConfig(embedding_dim=embedding_dim))
        self.embedder = MockEmbedder(embedding_dim)
        self.identity_config = identity_config or IdentityConfig()
        self.control_config = control_config or ControlConfig()

    def ingest(self, clip: ClipInput) -> dict:
        report = ingest_clip(self.graph, clip, FixtureGenerator(), self.embedder,
                             self.identity_config)
        return {
            "clip_index": report.clip_index,
            "matched": {tag: node.render() for tag, node in report.matched.items()},
            "created": [node.render() for node in report.created_nodes],
            "stored": [node.render() for node in report.stored_entries],
            "rejected": report.rejected,
        }

    def ask(self, question: str, plan: SearchPlan, max_rounds: int) -> dict:
        config = ControlConfig(
            max_rounds=max_rounds,
            system_template=self.control_config.system_template,
            instruction_prompt=self.control_config.instruction_prompt,
            last_round_prompt=self.control_config.last_round_prompt,
            clip_k=self.control_config.clip_k,
            clip_threshold=self.control_config.clip_threshold)
        trajectory = run_control(question, self.graph, ScriptedPolicy(plan),
                                 self.embedder, config)
        return {"answer": trajectory.final_answer,
                "rounds_used": trajectory.rounds_used,
                "terminated_by": trajectory.terminated_by}

    def top_clips(self, query: str) -> list[int]:
        result = search_clip(self.graph, query, self.embedder,
                             k=self.control_config.clip_k,
                             threshold=self.control_config.clip_threshold)
        return [section.clip_index for section in result.clips]


class HttpClient:
    """Runs the same evaluation against a served engine."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        resp = requests.post(self.base_url + path, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def ingest(self, clip: ClipInput) -> dict:
        from .world import clip_to_dict

        return self._post("/clips", clip_to_dict(clip))

    def ask(self, question: str, plan: SearchPlan, max_rounds: int) -> dict:
        return self._post("/ask", {
            "question": question,
            "max_rounds": max_rounds,
            "plan": {"queries": plan.queries,
                     "answer_keyword": plan.answer_keyword,
                     "fallback_answer": plan.fallback_answer},
        })

    def top_clips(self, query: str) -> list[int]:
        import requests

        resp = requests.get(self.base_url + "/search",
                            params={"q": query, "mode": "clip"}, timeout=self.timeout)
        resp.raise_for_status()
        return [section["clip_index"] for section in resp.json()["clips"]]


def _identity_metrics(world: SyntheticWorld, reports: list[dict],
                      vote_ratio: float) -> tuple[float, float, float, int]:
    """Precision/recall/F1 of the mined voice-to-face mapping versus ground truth."""
    node_identity: dict[str, int] = {}
    for clip, report in zip(world.clips, reports):
        created = set(report.get("created", []))
        for tag, token in report.get("matched", {}).items():
            if token in created and token not in node_identity:
                node_identity[token] = world.identity_of_tag(tag)

    shorts: list[ShortClip] = []
    for clip, report in zip(world.clips, reports):
        matched = {tag: NodeId.parse(token)
                   for tag, token in report.get("matched", {}).items()}
        shorts.extend(resolve_short_clips(clip, matched))

    dictionary = build_meta_dictionary(extract_meta_clips(shorts), vote_ratio)
    if len(dictionary) == 0:
        return 0.0, 0.0, 0.0, 0
    correct_pairs = [
        (voice, face) for voice, face in dictionary.items()
        if node_identity.get(voice.render()) is not None
        and node_identity.get(voice.render()) == node_identity.get(face.render())
    ]
    precision = len(correct_pairs) / len(dictionary)
    recovered = {node_identity[voice.render()] for voice, _ in correct_pairs}
    recall = len(recovered) / world.config.num_identities
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1, len(dictionary)


def run_eval(world: SyntheticWorld, client: EngineClient | None = None,
             max_rounds: int = 5, vote_ratio: float | None = None) -> EvalReport:
    """Ingest the world, answer its questions, and score everything."""
    if client is None:
        client = LocalClient(embedding_dim=world.config.embedding_dim)
    vote_ratio = vote_ratio if vote_ratio is not None else IdentityConfig().vote_ratio

    reports = [client.ingest(clip) for clip in world.clips]
    precision, recall, f1, mapping_size = _identity_metrics(world, reports, vote_ratio)

    judge = MockJudge()
    records = []
    correct = 0
    top1_hits = 0
    rounds = []
    for item in world.questions:
        record = {"question": item.question}
        try:
            ranked = client.top_clips(item.plan.queries[-1])
            record["top_clip"] = ranked[0] if ranked else None
            if ranked and ranked[0] == item.clip_index:
                top1_hits += 1
            outcome = client.ask(item.question, item.plan, max_rounds)
            record.update(outcome)
        except MemweaveError as exc:
            record["error"] = str(exc)
            record.setdefault("answer", None)
            record.setdefault("rounds_used", max_rounds)
        rounds.append(record.get("rounds_used", max_rounds))
        if judge_answer(item.question, item.reference, record.get("answer"), judge):
            correct += 1
            record["correct"] = True
        else:
            record["correct"] = False
        records.append(record)

    n = len(world.questions)
    return EvalReport(
        qa_accuracy=correct / n,
        identity_precision=precision,
        identity_recall=recall,
        identity_f1=f1,
        retrieval_top1_rate=top1_hits / n,
        mean_rounds=statistics.fmean(rounds) if rounds else 0.0,
        question_count=n,
        mapping_size=mapping_size,
        records=records)
