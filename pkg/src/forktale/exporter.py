"""Serialize a narrated tree as an Ink script and as a neutral game JSON.

Both exports are pure functions of (tree, narrations) and walk the same
storylines; the Ink file is for Ink tooling, the JSON is the wire contract
the web player consumes.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .errors import MissingNarration, NameCollision, PreconditionError
from .narrator import NodeNarration
from .tree import BranchingPlotTree, DecisionKind, END

_INVALID_KNOT_CHARS = re.compile(r"[^A-Za-z0-9_]")


def knot_name(node_id: str) -> str:
    name = _INVALID_KNOT_CHARS.sub("_", node_id)
    if not name or name[0].isdigit():
        name = f"k_{name}"
    return name


def _paragraph_lines(narration: NodeNarration) -> list[str]:
    return [line.strip() for line in narration.paragraphs.split("\n") if line.strip()]


def _ordered_choices(
    tree: BranchingPlotTree, node_id: str, narration: NodeNarration
) -> list[tuple[DecisionKind, str, "object"]]:
    out = []
    for kind, label in (
        (DecisionKind.ORIGINAL, narration.button_original),
        (DecisionKind.ALTERNATE, narration.button_alternate),
    ):
        edge = tree.edge(node_id, kind)
        if edge is None:
            raise PreconditionError(
                f"node {node_id!r} has no {kind.value} edge; export needs a complete tree"
            )
        out.append((kind, label, edge))
    return out


def _require_narrations(
    tree: BranchingPlotTree, narrations: dict[str, NodeNarration]
) -> list[str]:
    order = tree.bfs_node_ids()
    missing = [node_id for node_id in order if node_id not in narrations]
    if missing:
        raise MissingNarration(f"no narration for: {', '.join(missing[:5])}")
    return order


def export_ink(tree: BranchingPlotTree, narrations: dict[str, NodeNarration]) -> str:
    """Knots, choices, and diverts only.

    Each node becomes one knot; an ending choice carries the final edge's
    closing state as its epilogue lines, then diverts to END.
    """
    order = _require_narrations(tree, narrations)
    names: dict[str, str] = {}
    for node_id in order:
        name = knot_name(node_id)
        clash = next((other for other, taken in names.items() if taken == name), None)
        if clash is not None:
            raise NameCollision(f"{node_id!r} and {clash!r} both map to knot {name!r}")
        names[node_id] = name

    lines: list[str] = [f"-> {names[tree.root]}", ""]
    for node_id in order:
        narration = narrations[node_id]
        lines.append(f"=== {names[node_id]} ===")
        lines.extend(_paragraph_lines(narration))
        for _, label, edge in _ordered_choices(tree, node_id, narration):
            if edge.to_target == END:
                lines.append(f"* [{label}]")
                epilogue = edge.events[-1] if edge.events else ""
                if epilogue.strip():
                    lines.append(f"    {epilogue.strip()}")
                lines.append("    -> END")
            else:
                lines.append(f"* [{label}] -> {names[edge.to_target]}")
        lines.append("")
    return "\n".join(lines)


def export_game_json(tree: BranchingPlotTree, narrations: dict[str, NodeNarration]) -> dict:
    """Neutral game graph: {title, char_name, start, passages}.

    Passage ids are the node ids; an ending choice targets the literal
    string "END".
    """
    order = _require_narrations(tree, narrations)
    passages = {}
    for node_id in order:
        narration = narrations[node_id]
        choices = []
        for kind, label, edge in _ordered_choices(tree, node_id, narration):
            target = "END" if edge.to_target == END else edge.to_target
            choices.append({"label": label, "target": target, "kind": kind.value.lower()})
        passages[node_id] = {"paragraphs": _paragraph_lines(narration), "choices": choices}
    return {
        "title": tree.title,
        "char_name": tree.char_name,
        "start": tree.root,
        "passages": passages,
    }


def dump_game_json(doc: dict) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def save_ink(script: str, destination: str | Path) -> None:
    Path(destination).write_text(script, encoding="utf-8", newline="\n")


def save_game_json(doc: dict, destination: str | Path) -> None:
    Path(destination).write_text(dump_game_json(doc), encoding="utf-8")
