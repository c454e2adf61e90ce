"""Multi-round search/answer control sessions over a memory graph.

A session runs up to H rounds. Each round the policy emits either a search
action, whose results are appended to the conversation together with the
instruction prompt, or an answer action, which ends the session. Entering the
final permitted round the loop additionally appends the last-round prompt,
mirroring the round bookkeeping exactly: the extra user message rides along
with the regular one rather than replacing it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Protocol

from .embedding import Embedder
from .errors import (ActionParseError, InvalidArgumentError, JudgeProtocolError,
                     PolicySessionError)
from .graph import MemoryGraph
from .ids import TEXT
from .retrieval import (CLIP_THRESHOLD, CLIP_TOP_K, EMPTY_MARKER, SearchQuery,
                        format_results, rewrite_entities, search_clip, search_node)

SEARCH = "search"
ANSWER = "answer"

TERMINATED_BY_ANSWER = "answer"
TERMINATED_BY_ROUND_LIMIT = "round_limit"
TERMINATED_BY_PARSE_FAILURE = "parse_failure"

# A search whose content starts with this prefix routes to node-level search.
NODE_QUERY_PREFIX = "node:"

_ACTION_TOKEN_RE = re.compile(r"\[(Search|Answer)\]", re.IGNORECASE)
_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL)
_CONTENT_PREFIX_RE = re.compile(r"^\s*Content\s*:\s*")


def load_prompt(name: str) -> str:
    """Read one of the bundled prompt resources (without trailing newline)."""
    text = resources.files("memweave.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    return text.rstrip("\n")


@dataclass
class Message:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise InvalidArgumentError(f"unknown role: {self.role!r}")
        if not self.content:
            raise InvalidArgumentError("message content must be non-empty")


@dataclass
class Trajectory:
    """The dialogue state of one control session."""

    messages: list[Message] = field(default_factory=list)
    final_answer: Optional[str] = None
    rounds_used: int = 0
    terminated_by: Optional[str] = None

    def assistant_texts(self) -> list[str]:
        return [m.content for m in self.messages if m.role == "assistant"]

    def user_texts(self) -> list[str]:
        return [m.content for m in self.messages if m.role == "user"]


@dataclass(frozen=True)
class Action:
    kind: str  # search | answer
    content: str


class Policy(Protocol):
    def respond(self, trajectory: Trajectory) -> str: ...


class Judge(Protocol):
    def judge(self, question: str, reference: str, candidate: str) -> bool: ...


@dataclass
class ControlConfig:
    max_rounds: int = 5
    system_template: str = ""
    instruction_prompt: str = ""
    last_round_prompt: str = ""
    clip_k: int = CLIP_TOP_K
    clip_threshold: float = CLIP_THRESHOLD
    node_k: int = 5
    node_threshold: float = 0.0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise InvalidArgumentError("max_rounds must be at least 1")
        if not self.system_template:
            self.system_template = load_prompt("system_prompt")
        if not self.instruction_prompt:
            self.instruction_prompt = load_prompt("instruction_prompt")
        if not self.last_round_prompt:
            self.last_round_prompt = load_prompt("last_round_prompt")
        if "{question}" not in self.system_template:
            raise InvalidArgumentError("system template must contain {question}")


def parse_action(assistant_text: str) -> Action:
    """Extract the acted-upon [Search]/[Answer] token and its content.

    Reasoning wrapped in think markers is ignored, and when several action
    tokens appear the last one wins. The content is whatever follows the
    token, minus an optional "Content:" prefix from the structured format.
    """
    visible = _THINK_RE.sub("", assistant_text)
    matches = list(_ACTION_TOKEN_RE.finditer(visible))
    if not matches:
        raise ActionParseError("no [Search] or [Answer] token in assistant output")
    last = matches[-1]
    kind = SEARCH if last.group(1).lower() == "search" else ANSWER
    content = visible[last.end():]
    content = _CONTENT_PREFIX_RE.sub("", content.lstrip("\r\n "))
    content = content.strip()
    if not content:
        raise ActionParseError(f"empty content after [{last.group(1)}] token")
    return Action(kind=kind, content=content)


def format_node_results(hits, graph: MemoryGraph, character_map) -> str:
    """Deterministic rendering of node-level hits for the conversation."""
    if not hits:
        return EMPTY_MARKER
    lines = []
    for node_id, score in hits:
        node = graph.node(node_id)
        label = node_id.render()
        if node_id.prefix == TEXT:
            text = rewrite_entities(node.text, character_map)
            lines.append(f'{label} ({score:.6f}): {json.dumps(text, ensure_ascii=False)}')
        else:
            token = character_map.token_for(node_id)
            lines.append(f"{label} ({score:.6f}): {token}")
    return "\n".join(lines)


def run_search(graph: MemoryGraph, content: str, embedder: Embedder,
               config: ControlConfig) -> str:
    """Dispatch a search action: a node: prefix selects node-level search."""
    if content.startswith(NODE_QUERY_PREFIX):
        query_text = content[len(NODE_QUERY_PREFIX):].strip()
        hits = search_node(graph, SearchQuery(modality=TEXT, payload=query_text,
                                              k=config.node_k,
                                              threshold=config.node_threshold),
                           embedder=embedder)
        return format_node_results(hits, graph, graph.resolve_characters())
    result = search_clip(graph, content, embedder, k=config.clip_k,
                         threshold=config.clip_threshold)
    return format_results(result)


def run_control(question: str, graph: MemoryGraph, policy: Policy,
                embedder: Embedder, config: ControlConfig | None = None) -> Trajectory:
    """Execute one control session and return the finished trajectory."""
    config = config or ControlConfig()
    trajectory = Trajectory(messages=[
        Message("system", config.system_template.replace("{question}", question)),
        Message("user", config.instruction_prompt),
    ])
    rounds = config.max_rounds
    i = 0
    trajectory.terminated_by = TERMINATED_BY_ROUND_LIMIT
    while i < rounds:
        try:
            assistant_text = policy.respond(trajectory)
        except Exception as exc:
            raise PolicySessionError(f"policy transport failed: {exc}",
                                     partial_trajectory=trajectory) from exc
        trajectory.messages.append(Message("assistant", assistant_text))
        trajectory.rounds_used = i + 1
        try:
            action = parse_action(assistant_text)
        except ActionParseError:
            trajectory.terminated_by = TERMINATED_BY_PARSE_FAILURE
            break
        if action.kind == SEARCH:
            memory = run_search(graph, action.content, embedder, config)
        else:
            trajectory.final_answer = action.content
            trajectory.terminated_by = TERMINATED_BY_ANSWER
            break
        i += 1
        trajectory.messages.append(
            Message("user", memory + "\n" + config.instruction_prompt))
        if i == rounds - 1:
            trajectory.messages.append(
                Message("user", memory + "\n" + config.last_round_prompt))
    return trajectory


def extract_answer(trajectory: Trajectory) -> Optional[str]:
    """The final submitted answer, if the session produced one."""
    return trajectory.final_answer


_NORMALIZE_RE = re.compile(r"[^a-z0-9\s]+")


def _normalize(text: str) -> str:
    return " ".join(_NORMALIZE_RE.sub(" ", text.lower()).split())


class MockJudge:
    """Hermetic answer judge: normalized containment of the reference."""

    def judge(self, question: str, reference: str, candidate: str) -> bool:
        return _normalize(reference) in _normalize(candidate)


class HttpJudge:
    """External judge speaking the strict Yes/No evaluation protocol."""

    def __init__(self, endpoint: str, auth_header: str | None = None,
                 timeout: float = 60.0, prompt_template: str | None = None):
        self.endpoint = endpoint
        self.auth_header = auth_header
        self.timeout = timeout
        self.prompt_template = prompt_template or load_prompt("judge_prompt")

    def judge(self, question: str, reference: str, candidate: str) -> bool:
        import requests

        prompt = (self.prompt_template
                  .replace("{question}", question)
                  .replace("{ground_truth_answer}", reference)
                  .replace("{agent_answer}", candidate))
        headers = {"Content-Type": "application/json"}
        if self.auth_header:
            headers["Authorization"] = self.auth_header
        resp = requests.post(self.endpoint,
                             json={"messages": [{"role": "user", "content": prompt}]},
                             headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        verdict = resp.json()["content"].strip()
        if verdict == "Yes":
            return True
        if verdict == "No":
            return False
        raise JudgeProtocolError(f"judge returned {verdict!r}, expected Yes or No")


def judge_answer(question: str, reference: str, candidate: Optional[str],
                 judge: Judge) -> bool:
    """True when the judge affirms the candidate; an absent answer never passes."""
    if candidate is None:
        return False
    return judge.judge(question, reference, candidate)


class HttpPolicy:
    """Chat-completion style policy adapter.

    Request: ``{"messages": [{"role": ..., "content": ...}, ...]}``;
    response: ``{"content": ...}``.
    """

    def __init__(self, endpoint: str, auth_header: str | None = None,
                 model: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint
        self.auth_header = auth_header
        self.model = model
        self.timeout = timeout

    def respond(self, trajectory: Trajectory) -> str:
        import requests

        payload = {"messages": [{"role": m.role, "content": m.content}
                                for m in trajectory.messages]}
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.auth_header:
            headers["Authorization"] = self.auth_header
        resp = requests.post(self.endpoint, json=payload, headers=headers,
                             timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["content"]


_CLIP_SECTION_RE = re.compile(r'^"CLIP_(\d+)": (\[.*\])$', re.MULTILINE)


def entries_from_user_messages(trajectory: Trajectory) -> list[str]:
    """Collect entry texts from every search-result block in the conversation."""
    entries: list[str] = []
    for content in trajectory.user_texts():
        for match in _CLIP_SECTION_RE.finditer(content):
            try:
                entries.extend(json.loads(match.group(2)))
            except json.JSONDecodeError:  # pragma: no cover - blocks are engine-made
                continue
    return entries


@dataclass
class SearchPlan:
    """Scripted behavior for one question: queries to run, then how to answer."""

    queries: list[str]
    answer_keyword: str
    fallback_answer: str = "No relevant memory was found."


class ScriptedPolicy:
    """Deterministic test policy that follows a fixed search plan.

    Emits the planned searches in order, then answers with the first retrieved
    entry containing the plan's keyword. A forced last round answers early.
    """

    def __init__(self, plan: SearchPlan, last_round_marker: str | None = None):
        self.plan = plan
        self.last_round_marker = last_round_marker or load_prompt("last_round_prompt")

    def respond(self, trajectory: Trajectory) -> str:
        done = len(trajectory.assistant_texts())
        forced = bool(trajectory.messages) and (
            self.last_round_marker in trajectory.messages[-1].content)
        if not forced and done < len(self.plan.queries):
            return f"Action: [Search]\nContent: {self.plan.queries[done]}"
        answer = self.plan.fallback_answer
        for entry in entries_from_user_messages(trajectory):
            if self.plan.answer_keyword in entry:
                answer = entry
                break
        return f"Action: [Answer]\nContent: {answer}"
