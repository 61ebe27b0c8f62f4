"""Prompt templates and structured-output schemas for the five pipeline stages.

Templates live as plain-text data files next to this module so they can be
audited without reading Python; schemas ship as base JSON documents that get
specialized per request (node counts, event counts, pinned fields).
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

from ..errors import MissingBinding, OutOfRange, UnknownStage

_DATA_DIR = Path(__file__).parent / "data"

#: Open node count used by the plot-to-tree prompt when the caller does not
#: pin one; the schema then accepts 1..6 nodes.
OPEN_NODE_COUNT_TEXT = "at most 6"
MAX_OPEN_NODES = 6


class Stage(Enum):
    PLOT_TO_TREE = "plot_to_tree"
    KEY_EVENTS = "key_events"
    META_PROMPT = "meta_prompt"
    WRITE_STORYLINE = "write_storyline"
    NARRATE = "narrate"


@dataclass(frozen=True)
class PromptTemplate:
    stage: Stage
    system_text: str
    user_text: str


@dataclass(frozen=True)
class SchemaSpec:
    """A concrete structured-output schema for one request."""

    stage: Stage
    schema_document: dict


class RenderedPrompt(NamedTuple):
    system_text: str
    user_text: str


_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_SECTION = re.compile(r"^\[(system|user)\]$", re.MULTILINE)


def _parse_template(stage: Stage, text: str) -> PromptTemplate:
    sections: dict[str, str] = {}
    marks = list(_SECTION.finditer(text))
    for i, mark in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        sections[mark.group(1)] = text[mark.end() : end].strip("\n")
    if set(sections) != {"system", "user"}:
        raise ValueError(f"template for {stage.value} must define [system] and [user]")
    return PromptTemplate(stage, sections["system"], sections["user"])


@lru_cache(maxsize=None)
def template(stage: Stage) -> PromptTemplate:
    path = _DATA_DIR / f"{stage.value}.txt"
    return _parse_template(stage, path.read_text(encoding="utf-8"))


def placeholders(stage: Stage) -> set[str]:
    tpl = template(stage)
    return set(_PLACEHOLDER.findall(tpl.system_text)) | set(
        _PLACEHOLDER.findall(tpl.user_text)
    )


def _coerce_stage(stage: Stage | str) -> Stage:
    if isinstance(stage, Stage):
        return stage
    try:
        return Stage(stage)
    except ValueError:
        raise UnknownStage(f"no prompt stage named {stage!r}") from None


def render(stage: Stage | str, bindings: Mapping[str, str | int]) -> RenderedPrompt:
    """Substitute ``bindings`` into the stage template.

    Single-pass substitution: braces inside bound values (JSON payloads) are
    left alone. Raises MissingBinding listing every absent name at once.
    """
    stage = _coerce_stage(stage)
    tpl = template(stage)
    needed = placeholders(stage)
    missing = sorted(needed - set(bindings))
    if missing:
        raise MissingBinding(stage.value, missing)

    def fill(text: str) -> str:
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), text)

    rendered = RenderedPrompt(fill(tpl.system_text), fill(tpl.user_text))
    for text in rendered:
        stray = set(_PLACEHOLDER.findall(text)) & needed
        if stray:
            raise MissingBinding(stage.value, sorted(stray))
    return rendered


def numbered_events(events: Sequence[str]) -> str:
    """Render an event list as numbered lines, the shape prompts refer to by
    event number."""
    return "\n".join(f"{i}. {event}" for i, event in enumerate(events, start=1))


def new_story_length(n: int, branching_node: int) -> int:
    """Events an alternate storyline must contain when branching at the given
    node: three per node from the branching node to the end, inclusive."""
    if not 1 <= branching_node <= n:
        raise OutOfRange(f"branching node {branching_node} outside 1..{n}")
    return (n - branching_node + 1) * 3


def branching_event_number(branching_node: int) -> int:
    """1-based index of a node's decision event in the flattened storyline;
    each node contributes three events and the decision restatement leads."""
    if branching_node < 1:
        raise OutOfRange(f"branching node {branching_node} < 1")
    return (branching_node - 1) * 3 + 1


# -- schema builders ------------------------------------------------------


@lru_cache(maxsize=None)
def _base_schema(stage: Stage) -> dict:
    path = _DATA_DIR / f"{stage.value}.schema.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _specialize(stage: Stage) -> dict:
    doc = copy.deepcopy(_base_schema(stage))
    doc.pop("$comment", None)
    return doc


def plot_to_tree_schema(num_nodes: int | None) -> SchemaSpec:
    """Schema for the tree-summary stage.

    ``num_nodes=None`` leaves the count open (the "at most 6" wording); the
    schema then accepts node_1..node_6 with at least one present. A fixed
    count requires exactly node_1..node_k.
    """
    doc = _specialize(Stage.PLOT_TO_TREE)
    node_ref = {"$ref": "#/$defs/node"}
    if num_nodes is None:
        names = [f"node_{i}" for i in range(1, MAX_OPEN_NODES + 1)]
        doc["properties"] = {name: node_ref for name in names}
        doc["minProperties"] = 1
    else:
        if num_nodes < 1:
            raise OutOfRange(f"node count {num_nodes} < 1")
        names = [f"node_{i}" for i in range(1, num_nodes + 1)]
        doc["properties"] = {name: node_ref for name in names}
        doc["required"] = names
    return SchemaSpec(Stage.PLOT_TO_TREE, doc)


def key_events_schema(num_events: int) -> SchemaSpec:
    if num_events < 1:
        raise OutOfRange(f"event count {num_events} < 1")
    doc = _specialize(Stage.KEY_EVENTS)
    doc["$defs"]["key_event"]["properties"]["eventId"]["maximum"] = num_events
    return SchemaSpec(Stage.KEY_EVENTS, doc)


def meta_prompt_schema(
    branching_event: int,
    original_decision: str,
    alternate_decision: str,
    story_length: int,
    major_plot_points: Mapping[str, Mapping[str, object]],
) -> SchemaSpec:
    """Every bookkeeping field is pinned with const so only the prompt text
    is genuinely authored by the model."""
    doc = _specialize(Stage.META_PROMPT)
    props = doc["properties"]
    props["branching_event_number"]["const"] = branching_event
    props["original_decision"]["const"] = original_decision
    props["alternate_decision"]["const"] = alternate_decision
    props["new_story_length"]["const"] = story_length
    props["major_plot_points"]["const"] = {
        role: dict(entry) for role, entry in major_plot_points.items()
    }
    return SchemaSpec(Stage.META_PROMPT, doc)


def write_storyline_schema(num_events: int) -> SchemaSpec:
    if num_events < 1:
        raise OutOfRange(f"event count {num_events} < 1")
    doc = _specialize(Stage.WRITE_STORYLINE)
    names = [str(i) for i in range(1, num_events + 1)]
    events = doc["properties"]["events"]
    events["properties"] = {name: {"type": "string", "minLength": 1} for name in names}
    events["required"] = names
    events["minProperties"] = num_events
    events["maxProperties"] = num_events
    return SchemaSpec(Stage.WRITE_STORYLINE, doc)


def narrate_schema() -> SchemaSpec:
    return SchemaSpec(Stage.NARRATE, _specialize(Stage.NARRATE))


def schema_json(spec: SchemaSpec) -> str:
    """Canonical single-line form used for the {JSON_SCHEMA} placeholder and
    for request fingerprints."""
    return json.dumps(spec.schema_document, ensure_ascii=False, sort_keys=True)


def pack_digest() -> str:
    """Digest over every template and schema data file; changes whenever the
    prompt pack changes, which invalidates checkpoints made under it."""
    digest = hashlib.sha256()
    for path in sorted(_DATA_DIR.iterdir()):
        digest.update(path.name.encode("utf-8"))
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()
