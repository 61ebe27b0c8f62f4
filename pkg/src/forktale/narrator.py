"""Second-person narration for every tree node, with resumable batch runs."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .errors import EmptyField, InvariantViolation, ParseError, PreconditionError
from .gateway import CompletionRequest, Gateway, request_messages
from .pipeline import PipelineConfig
from .tree import BranchingPlotTree, PlotEdge, dump_tree

log = logging.getLogger(__name__)

NARRATIONS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NodeNarration:
    node_id: str
    paragraphs: str
    button_original: str
    button_alternate: str


def tree_digest(tree: BranchingPlotTree) -> str:
    return hashlib.sha256(dump_tree(tree).encode("utf-8")).hexdigest()


def _check_narration(doc: dict, event_count: int) -> None:
    for name in ("paragraphs", "button_text_1", "button_text_2"):
        if not doc[name].strip():
            raise EmptyField(f"{name} must not be blank")
    paragraphs = [p for p in doc["paragraphs"].split("\n") if p.strip()]
    if len(paragraphs) < event_count:
        raise InvariantViolation(
            f"need at least one paragraph per event ({event_count}), got {len(paragraphs)}"
        )


class Narrator:
    def __init__(self, gateway: Gateway, config: PipelineConfig | None = None):
        self.gateway = gateway
        self.config = config or PipelineConfig()

    def narrate_node(
        self, tree: BranchingPlotTree, node_id: str, incoming_edge: PlotEdge | None
    ) -> NodeNarration:
        """Narrate the events leading into a node, ending on its state/goal.

        The root has no incoming edge; a synthetic opening edge carrying the
        root state as its only event stands in.
        """
        node = tree.node(node_id)
        if incoming_edge is None:
            if node_id != tree.root:
                raise PreconditionError(f"non-root node {node_id!r} needs its incoming edge")
            events: tuple[str, ...] = (node.state,)
        else:
            if incoming_edge.to_target != node_id:
                raise PreconditionError(
                    f"edge into {incoming_edge.to_target!r} is not an edge into {node_id!r}"
                )
            events = incoming_edge.events
        payload = {
            "events": list(events),
            "state": node.state,
            "goal": node.goal,
            "decision": node.key_decision,
            "alternate_decision": node.alternate_decision,
        }
        schema = prompts.narrate_schema()
        system_text, user_text = prompts.render(
            prompts.Stage.NARRATE,
            {
                "char_name": tree.char_name,
                "node": json.dumps(payload, ensure_ascii=False),
                "JSON_SCHEMA": prompts.schema_json(schema),
            },
        )
        request = CompletionRequest(
            messages=request_messages(system_text, user_text),
            schema=schema,
            temperature=self.config.temperature_generate,
            model_id=self.config.model_id,
            max_output_tokens=self.config.max_output_tokens,
        )
        result = self.gateway.complete_structured(
            request, semantic_check=lambda doc: _check_narration(doc, len(events))
        )
        doc = result.document
        mentions = doc["paragraphs"].count(tree.char_name)
        if mentions:
            log.warning(
                "narration for %s mentions %s %d time(s); should stay second-person",
                node_id,
                tree.char_name,
                mentions,
            )
        return NodeNarration(
            node_id=node_id,
            paragraphs=doc["paragraphs"],
            button_original=doc["button_text_1"],
            button_alternate=doc["button_text_2"],
        )

    def narrate_tree(
        self,
        tree: BranchingPlotTree,
        checkpoint_path: str | Path | None = None,
        parallel: int = 1,
    ) -> dict[str, NodeNarration]:
        """One narration per node, breadth-first; previously checkpointed
        narrations for the same tree are reused instead of regenerated."""
        digest = tree_digest(tree)
        done: dict[str, NodeNarration] = {}
        if checkpoint_path is not None and Path(checkpoint_path).exists():
            done = _load_partial(checkpoint_path, digest)

        order = [node_id for node_id in tree.bfs_node_ids() if node_id not in done]
        lock = threading.Lock()

        def work(node_id: str) -> None:
            narration = self.narrate_node(tree, node_id, tree.in_edge(node_id))
            with lock:
                done[node_id] = narration
                if checkpoint_path is not None:
                    _write_partial(checkpoint_path, digest, done)

        if parallel > 1 and len(order) > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                for future in [pool.submit(work, node_id) for node_id in order]:
                    future.result()
        else:
            for node_id in order:
                work(node_id)
        return done


# -- persistence ----------------------------------------------------------


def narrations_to_document(narrations: dict[str, NodeNarration]) -> dict:
    return {
        "version": NARRATIONS_FORMAT_VERSION,
        "narrations": {
            node_id: {
                "paragraphs": narration.paragraphs,
                "button_original": narration.button_original,
                "button_alternate": narration.button_alternate,
            }
            for node_id, narration in sorted(narrations.items())
        },
    }


def narrations_from_document(doc: dict) -> dict[str, NodeNarration]:
    try:
        if doc["version"] != NARRATIONS_FORMAT_VERSION:
            raise ParseError(f"narrations version {doc['version']!r} not supported")
        return {
            node_id: NodeNarration(
                node_id=node_id,
                paragraphs=raw["paragraphs"],
                button_original=raw["button_original"],
                button_alternate=raw["button_alternate"],
            )
            for node_id, raw in doc["narrations"].items()
        }
    except ParseError:
        raise
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed narrations document: {exc}") from exc


def save_narrations(narrations: dict[str, NodeNarration], destination: str | Path) -> None:
    Path(destination).write_text(
        json.dumps(narrations_to_document(narrations), ensure_ascii=False, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )


def load_narrations(source: str | Path) -> dict[str, NodeNarration]:
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("narrations file must hold a JSON object")
    return narrations_from_document(doc)


def _write_partial(path: str | Path, digest: str, done: dict[str, NodeNarration]) -> None:
    doc = narrations_to_document(done)
    doc["tree_digest"] = digest
    target = Path(path)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text(
        json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    tmp.replace(target)


def _load_partial(path: str | Path, digest: str) -> dict[str, NodeNarration]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}
    if not isinstance(doc, dict) or doc.get("tree_digest") != digest:
        log.warning("ignoring narration checkpoint for a different tree")
        return {}
    try:
        return narrations_from_document(doc)
    except ParseError:
        return {}
