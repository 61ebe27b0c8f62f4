"""Expansion pipeline: plot -> tree -> key events -> meta-prompts ->
alternate storylines -> merged branches, breadth-first until every node has
both decisions, with checkpoint/resume.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import prompts, tree as plot_tree
from .errors import (
    BudgetExceeded,
    ConfigDigestMismatch,
    CorruptCheckpoint,
    CountMismatch,
    EmptyPlot,
    IncompleteExpansion,
    InvariantViolation,
    NodeCountMismatch,
    OrderingViolation,
    ParseError,
    PreconditionError,
    SchemaViolation,
    TooFewEvents,
)
from .gateway import CompletionRequest, Gateway, request_messages
from .textnorm import normalize, same_text
from .tree import (
    BranchingPlotTree,
    DecisionKind,
    END,
    PlotNode,
    StorylinePath,
    enumerate_storylines,
    errors_only,
    merge_branch,
    storyline_events,
    storyline_tree,
    validate,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
_ROLES = ("inciting_incident", "crisis", "climax")


@dataclass(frozen=True)
class KeyEvent:
    event_id: int
    event: str


@dataclass(frozen=True)
class KeyEvents:
    """The three structural beats of a storyline, as 1-based event indices."""

    inciting_incident: KeyEvent
    crisis: KeyEvent
    climax: KeyEvent

    def as_ordered(self) -> dict[str, KeyEvent]:
        return {
            "inciting_incident": self.inciting_incident,
            "crisis": self.crisis,
            "climax": self.climax,
        }

    def filtered(self, branching_event: int) -> dict[str, KeyEvent]:
        """Drop beats that happen before the branching event; the past of a
        branch is frozen, so only future beats may be rewritten."""
        return {
            role: entry
            for role, entry in self.as_ordered().items()
            if entry.event_id >= branching_event
        }


def filter_key_events(key_events: KeyEvents, branching_event: int) -> dict[str, KeyEvent]:
    return key_events.filtered(branching_event)


@dataclass(frozen=True)
class MetaPrompt:
    """A pending branch job: everything needed to write one alternate
    storyline from one node."""

    branching_node: int
    branching_event: int
    original_decision: str
    alternate_decision: str
    new_story_length: int
    major_plot_points: dict[str, KeyEvent]
    prompt_text: str

    def check(self) -> None:
        if self.branching_event != prompts.branching_event_number(self.branching_node):
            raise PreconditionError(
                f"branching event {self.branching_event} does not match node "
                f"{self.branching_node}"
            )
        if self.new_story_length < 3 or self.new_story_length % 3:
            raise PreconditionError(
                f"new story length {self.new_story_length} is not a positive multiple of 3"
            )
        for role, entry in self.major_plot_points.items():
            if entry.event_id < self.branching_event:
                raise PreconditionError(
                    f"{role} at event {entry.event_id} precedes branching event "
                    f"{self.branching_event}"
                )
        if not self.prompt_text.strip():
            raise PreconditionError("meta-prompt text is empty")


@dataclass(frozen=True)
class PipelineConfig:
    model_id: str = "gpt-4"
    temperature_generate: float = 0.7
    temperature_extract: float = 0.0
    max_output_tokens: int = 4096

    def digest(self) -> str:
        payload = {
            "model_id": self.model_id,
            "temperature_generate": self.temperature_generate,
            "temperature_extract": self.temperature_extract,
            "prompt_pack": prompts.pack_digest(),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class BranchJob:
    node_id: str
    path: StorylinePath
    meta_prompt: MetaPrompt


@dataclass
class ExpansionCheckpoint:
    tree: BranchingPlotTree
    frontier: list[BranchJob]
    completed: int
    calls: int
    config_digest: str


def default_budget(n: int) -> int:
    """Call cap for a full expansion.

    A complete run costs about 3.5 * 2**n gateway calls before retries;
    2**(n+3) leaves roughly double that for corrective retries.
    """
    return 2 ** (n + 3)


class Pipeline:
    def __init__(self, gateway: Gateway, config: PipelineConfig | None = None):
        self.gateway = gateway
        self.config = config or PipelineConfig()

    # -- request plumbing --------------------------------------------------

    def _request(
        self, stage: prompts.Stage, schema: prompts.SchemaSpec, bindings: Mapping[str, str | int]
    ) -> CompletionRequest:
        full = dict(bindings)
        full["JSON_SCHEMA"] = prompts.schema_json(schema)
        system_text, user_text = prompts.render(stage, full)
        extracting = stage is prompts.Stage.KEY_EVENTS
        return CompletionRequest(
            messages=request_messages(system_text, user_text),
            schema=schema,
            temperature=(
                self.config.temperature_extract if extracting else self.config.temperature_generate
            ),
            model_id=self.config.model_id,
            max_output_tokens=self.config.max_output_tokens,
        )

    # -- stage 1: plot to tree --------------------------------------------

    def initialize_tree(
        self,
        plot: str,
        char_name: str,
        num_nodes: int | None = None,
        title: str = "",
    ) -> BranchingPlotTree:
        if not plot.strip():
            raise EmptyPlot("plot text is empty")
        if not char_name.strip():
            raise PreconditionError("character name is empty")
        schema = prompts.plot_to_tree_schema(num_nodes)
        request = self._request(
            prompts.Stage.PLOT_TO_TREE,
            schema,
            {
                "plot": plot.strip(),
                "char_name": char_name,
                "num_nodes": prompts.OPEN_NODE_COUNT_TEXT if num_nodes is None else num_nodes,
            },
        )
        result = self.gateway.complete_structured(
            request, semantic_check=_check_tree_document
        )
        return _tree_from_stage_document(result.document, char_name, title)

    def events_to_subtree(
        self, new_events: Sequence[str], char_name: str, title: str = ""
    ) -> BranchingPlotTree:
        if not new_events or len(new_events) % 3:
            raise PreconditionError(
                f"storyline length {len(new_events)} is not a positive multiple of 3"
            )
        count = len(new_events) // 3
        schema = prompts.plot_to_tree_schema(count)
        request = self._request(
            prompts.Stage.PLOT_TO_TREE,
            schema,
            {
                "plot": prompts.numbered_events(new_events),
                "char_name": char_name,
                "num_nodes": count,
            },
        )
        try:
            result = self.gateway.complete_structured(
                request,
                semantic_check=_check_tree_document,
                retry_limit=2,
            )
        except SchemaViolation as exc:
            if _is_count_shaped(exc, "node_"):
                raise NodeCountMismatch(
                    f"expected a {count}-node tree: {exc}"
                ) from exc
            raise
        return _tree_from_stage_document(result.document, char_name, title)

    # -- stage 2: key events ----------------------------------------------

    def extract_key_events(self, events: Sequence[str]) -> KeyEvents:
        if len(events) < 3:
            raise TooFewEvents(f"need at least 3 events, got {len(events)}")
        schema = prompts.key_events_schema(len(events))
        request = self._request(
            prompts.Stage.KEY_EVENTS,
            schema,
            {"events": prompts.numbered_events(events)},
        )
        # ordering violations get exactly one corrective retry
        result = self.gateway.complete_structured(
            request, semantic_check=_check_key_event_order, semantic_attempt_limit=2
        )
        extracted = KeyEvents(
            **{
                role: KeyEvent(result.document[role]["eventId"], result.document[role]["event"])
                for role in _ROLES
            }
        )
        for role, entry in extracted.as_ordered().items():
            if not same_text(entry.event, events[entry.event_id - 1]):
                log.warning(
                    "%s text drifts from storyline event %d: %r vs %r",
                    role,
                    entry.event_id,
                    entry.event,
                    events[entry.event_id - 1],
                )
        return extracted

    # -- stage 3: meta-prompts --------------------------------------------

    def generate_meta_prompt(
        self,
        tree: BranchingPlotTree,
        path: StorylinePath,
        node_id: str,
        filtered_key_events: Mapping[str, KeyEvent],
    ) -> MetaPrompt:
        if node_id not in path.node_ids:
            raise PreconditionError(f"node {node_id!r} is not on the given path")
        node = tree.node(node_id)
        if not node.alternate_decision.strip():
            raise PreconditionError(f"node {node_id!r} has no alternate decision")
        branching_node = path.node_ids.index(node_id) + 1
        branching_event = prompts.branching_event_number(branching_node)
        story_length = prompts.new_story_length(tree.n, branching_node)
        for role, entry in filtered_key_events.items():
            if entry.event_id < branching_event:
                raise PreconditionError(
                    f"{role} at event {entry.event_id} precedes branching event "
                    f"{branching_event}; filter before calling"
                )
        plot_points = {
            role: {"eventId": entry.event_id, "event": entry.event}
            for role, entry in filtered_key_events.items()
        }
        all_events = storyline_events(tree, path)
        schema = prompts.meta_prompt_schema(
            branching_event,
            node.key_decision,
            node.alternate_decision,
            story_length,
            plot_points,
        )
        request = self._request(
            prompts.Stage.META_PROMPT,
            schema,
            {
                "all_events": "\n" + prompts.numbered_events(all_events),
                "branching_event": branching_event,
                "char_name": tree.char_name,
                "alternate_decision": node.alternate_decision,
                "original_decision": node.key_decision,
                "new_story_length": story_length,
                "mpp": json.dumps(plot_points, ensure_ascii=False),
            },
        )
        result = self.gateway.complete_structured(
            request,
            semantic_check=lambda doc: _check_meta_prompt_text(
                doc, tree.char_name, node.alternate_decision
            ),
        )
        return MetaPrompt(
            branching_node=branching_node,
            branching_event=branching_event,
            original_decision=result.document["original_decision"],
            alternate_decision=result.document["alternate_decision"],
            new_story_length=result.document["new_story_length"],
            major_plot_points={
                role: KeyEvent(entry["eventId"], entry["event"])
                for role, entry in result.document["major_plot_points"].items()
            },
            prompt_text=result.document["prompt"],
        )

    # -- stage 4: alternate storyline -------------------------------------

    def write_alternate_storyline(
        self, path_events: Sequence[str], meta_prompt: MetaPrompt
    ) -> list[str]:
        meta_prompt.check()
        count = meta_prompt.new_story_length
        schema = prompts.write_storyline_schema(count)
        request = self._request(
            prompts.Stage.WRITE_STORYLINE,
            schema,
            {
                "all_events": prompts.numbered_events(path_events),
                "prompt": meta_prompt.prompt_text,
            },
        )
        try:
            result = self.gateway.complete_structured(
                request,
                semantic_check=lambda doc: _check_first_event(
                    doc, meta_prompt.alternate_decision
                ),
            )
        except SchemaViolation as exc:
            if _is_count_shaped(exc, "events"):
                raise CountMismatch(f"expected {count} events: {exc}") from exc
            raise
        events = result.document["events"]
        return [events[str(i)] for i in range(1, count + 1)]

    # -- stages 5-7: branch, merge, recurse -------------------------------

    def expand_tree(
        self,
        tree: BranchingPlotTree,
        budget: int | None = None,
        progress: Callable[[dict], None] | None = None,
        checkpoint_path: str | Path | None = None,
        resume_state: ExpansionCheckpoint | None = None,
    ) -> BranchingPlotTree:
        """Give every node an alternate branch, breadth-first.

        One branch generation per node of the final tree: 2**n - 1 in all.
        Any error mid-run writes a checkpoint (when a path is given) and
        re-raises; BudgetExceeded does the same once the call cap is hit.
        """
        cap = budget if budget is not None else default_budget(tree.n)
        calls_start = self.gateway.calls
        frontier: deque[BranchJob]
        if resume_state is not None:
            if resume_state.config_digest != self.config.digest():
                raise ConfigDigestMismatch(
                    "checkpoint was produced under a different configuration"
                )
            tree = resume_state.tree
            frontier = deque(resume_state.frontier)
            completed = resume_state.completed
            calls_before = resume_state.calls
        else:
            frontier = deque()
            completed = 0
            calls_before = 0
            original_path = enumerate_storylines(tree)[0]
            events = storyline_events(tree, original_path)
            key_events = self.extract_key_events(events)
            self._enqueue_jobs(frontier, tree, original_path, tree.bfs_node_ids(), key_events)

        def calls_used() -> int:
            return calls_before + (self.gateway.calls - calls_start)

        def snapshot() -> ExpansionCheckpoint:
            return ExpansionCheckpoint(
                tree=tree,
                frontier=list(frontier),
                completed=completed,
                calls=calls_used(),
                config_digest=self.config.digest(),
            )

        while frontier:
            if calls_used() >= cap:
                if checkpoint_path is not None:
                    write_checkpoint(snapshot(), checkpoint_path)
                raise BudgetExceeded(
                    f"{calls_used()} gateway calls used with {len(frontier)} branches left "
                    f"(budget {cap})"
                )
            job = frontier.popleft()
            started = time.monotonic()
            calls_at_branch = calls_used()
            try:
                tree = self._process_branch(tree, job, frontier)
            except Exception:
                frontier.appendleft(job)
                if checkpoint_path is not None:
                    write_checkpoint(snapshot(), checkpoint_path)
                raise
            completed += 1
            if progress is not None:
                progress(
                    {
                        "node_id": job.node_id,
                        "attempts": calls_used() - calls_at_branch,
                        "elapsed": round(time.monotonic() - started, 6),
                        "completed": completed,
                        "pending": len(frontier),
                    }
                )

        problems = errors_only(validate(tree, expect_complete=True))
        if problems:
            raise IncompleteExpansion(
                "; ".join(f"{v.code}: {v.message}" for v in problems[:5])
            )
        return tree

    def _process_branch(
        self, tree: BranchingPlotTree, job: BranchJob, frontier: deque[BranchJob]
    ) -> BranchingPlotTree:
        path_events = storyline_events(tree, job.path)
        new_events = self.write_alternate_storyline(path_events, job.meta_prompt)
        subtree = self.events_to_subtree(new_events, tree.char_name, tree.title)
        tree = merge_branch(tree, job.node_id, subtree)

        position = job.path.node_ids.index(job.node_id) + 1
        chain = _alternate_chain(tree, job.node_id)
        if chain:
            new_path = StorylinePath(
                node_ids=job.path.node_ids[:position] + tuple(chain),
                choices=job.path.choices[: position - 1]
                + (DecisionKind.ALTERNATE,)
                + (DecisionKind.ORIGINAL,) * len(chain),
            )
            merged_events = storyline_events(tree, new_path)
            key_events = self.extract_key_events(merged_events)
            self._enqueue_jobs(frontier, tree, new_path, chain, key_events)
        return tree

    def _enqueue_jobs(
        self,
        frontier: deque[BranchJob],
        tree: BranchingPlotTree,
        path: StorylinePath,
        node_ids: Sequence[str],
        key_events: KeyEvents,
    ) -> None:
        for node_id in node_ids:
            position = path.node_ids.index(node_id) + 1
            branching_event = prompts.branching_event_number(position)
            meta = self.generate_meta_prompt(
                tree, path, node_id, key_events.filtered(branching_event)
            )
            frontier.append(BranchJob(node_id, path, meta))


# -- semantic checks (raised inside the gateway retry loop) ----------------


def _check_tree_document(doc: dict) -> None:
    count = len(doc)
    for i in range(1, count + 1):
        if f"node_{i}" not in doc:
            raise InvariantViolation(
                f"node keys must be contiguous node_1..node_{count}; node_{i} is missing"
            )
    for name, node in doc.items():
        if same_text(node["decision"], node["alternate_decision"]):
            raise InvariantViolation(
                f"{name}: alternate_decision must differ from decision"
            )
        if not node["state"].strip() or not node["decision"].strip():
            raise InvariantViolation(f"{name}: state and decision must be non-empty")


def _check_key_event_order(doc: dict) -> None:
    ids = [doc[role]["eventId"] for role in _ROLES]
    if not ids[0] < ids[1] < ids[2]:
        raise OrderingViolation(
            "event ids must satisfy inciting incident < crisis < climax, got "
            f"{ids[0]}, {ids[1]}, {ids[2]}"
        )


def _check_meta_prompt_text(doc: dict, char_name: str, alternate_decision: str) -> None:
    text = doc["prompt"]
    found = {
        int(m.group(1))
        for m in re.finditer(r"(?m)^\s*([1-9])[.)]\s", text)
    }
    if not {1, 2, 3, 4, 5} <= found:
        raise InvariantViolation(
            "prompt must contain 5 guiding questions numbered 1. through 5."
        )
    tail = alternate_decision
    prefix = f"{char_name} decides to "
    if tail.startswith(prefix):
        tail = tail[len(prefix) :]
    elif tail.startswith(f"{char_name} "):
        tail = tail[len(char_name) + 1 :]
    tail = normalize(tail).rstrip(".")
    if tail and tail not in normalize(text):
        raise InvariantViolation(
            f"prompt must mention the alternate decision ({tail!r})"
        )


def _check_first_event(doc: dict, alternate_decision: str) -> None:
    first = doc["events"].get("1", "")
    if not same_text(first, alternate_decision):
        raise InvariantViolation(
            f"the first event must be the alternate decision {alternate_decision!r}, "
            f"got {first!r}"
        )


def _is_count_shaped(exc: SchemaViolation, subject: str) -> bool:
    """Schema failures about how many properties exist, as opposed to what is
    inside them."""
    for violation in exc.violations:
        validator = violation.split("@", 1)[0]
        if validator in ("required", "additionalProperties", "minProperties", "maxProperties"):
            if subject in violation or "@$" in violation:
                return True
    return False


def _alternate_chain(tree: BranchingPlotTree, node_id: str) -> list[str]:
    """Grafted node ids reachable from a node's alternate edge, in story order."""
    chain: list[str] = []
    edge = tree.edge(node_id, DecisionKind.ALTERNATE)
    current = edge.to_target if edge else END
    while current != END:
        chain.append(current)
        next_edge = tree.edge(current, DecisionKind.ORIGINAL)
        current = next_edge.to_target if next_edge else END
    return chain


def _tree_from_stage_document(doc: dict, char_name: str, title: str) -> BranchingPlotTree:
    count = len(doc)
    nodes = []
    triples = []
    for i in range(1, count + 1):
        raw = doc[f"node_{i}"]
        nodes.append(
            PlotNode(
                id=f"node_{i}",
                state=raw["state"],
                goal=raw["goal"],
                key_decision=raw["decision"],
                alternate_decision=raw["alternate_decision"],
                depth=i,
            )
        )
        triples.append(tuple(raw["edgeEvents"]))
    return storyline_tree(char_name, title, nodes, triples)


# -- checkpoint persistence ------------------------------------------------


def _meta_prompt_to_doc(meta: MetaPrompt) -> dict:
    return {
        "branching_node": meta.branching_node,
        "branching_event": meta.branching_event,
        "original_decision": meta.original_decision,
        "alternate_decision": meta.alternate_decision,
        "new_story_length": meta.new_story_length,
        "major_plot_points": {
            role: {"eventId": entry.event_id, "event": entry.event}
            for role, entry in meta.major_plot_points.items()
        },
        "prompt": meta.prompt_text,
    }


def _meta_prompt_from_doc(doc: dict) -> MetaPrompt:
    return MetaPrompt(
        branching_node=doc["branching_node"],
        branching_event=doc["branching_event"],
        original_decision=doc["original_decision"],
        alternate_decision=doc["alternate_decision"],
        new_story_length=doc["new_story_length"],
        major_plot_points={
            role: KeyEvent(entry["eventId"], entry["event"])
            for role, entry in doc["major_plot_points"].items()
        },
        prompt_text=doc["prompt"],
    )


def write_checkpoint(state: ExpansionCheckpoint, destination: str | Path) -> None:
    doc = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "config_digest": state.config_digest,
        "completed": state.completed,
        "calls": state.calls,
        "tree": plot_tree.tree_to_document(state.tree),
        "frontier": [
            {
                "node_id": job.node_id,
                "path": {
                    "node_ids": list(job.path.node_ids),
                    "choices": job.path.as_choice_string(),
                },
                "meta_prompt": _meta_prompt_to_doc(job.meta_prompt),
            }
            for job in state.frontier
        ],
    }
    path = Path(destination)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    tmp.replace(path)


def read_checkpoint(source: str | Path) -> ExpansionCheckpoint:
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise CorruptCheckpoint("checkpoint must hold a JSON object")
        if doc.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise CorruptCheckpoint(
                f"checkpoint version {doc.get('version')!r} not supported"
            )
        tree = plot_tree.tree_from_document(doc["tree"])
        frontier = []
        for raw in doc["frontier"]:
            choices = tuple(
                DecisionKind.ORIGINAL if ch == "O" else DecisionKind.ALTERNATE
                for ch in raw["path"]["choices"]
            )
            frontier.append(
                BranchJob(
                    node_id=raw["node_id"],
                    path=StorylinePath(tuple(raw["path"]["node_ids"]), choices),
                    meta_prompt=_meta_prompt_from_doc(raw["meta_prompt"]),
                )
            )
        return ExpansionCheckpoint(
            tree=tree,
            frontier=frontier,
            completed=int(doc["completed"]),
            calls=int(doc["calls"]),
            config_digest=doc["config_digest"],
        )
    except CorruptCheckpoint:
        raise
    except (OSError, json.JSONDecodeError, ParseError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint: {exc}") from exc
