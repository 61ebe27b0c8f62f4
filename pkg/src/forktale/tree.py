"""Branching plot tree: data model, traversal, merging, validation, persistence.

A tree is a snapshot value. Mutating operations (``merge_branch``) return a
new tree and never touch the one they were given, so readers can share
snapshots freely.
"""

from __future__ import annotations

import json
import re
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    AlternateOccupied,
    DepthMismatch,
    InvalidPath,
    ParseError,
    PreconditionError,
    SchemaVersionMismatch,
)
from .textnorm import normalize

TREE_FORMAT_VERSION = 1

#: Sentinel edge target marking the end of the story. Endings are not nodes;
#: keeping them out of the node set keeps every storyline exactly n nodes long.
END = "END"

_ID_ORDINAL = re.compile(r"^node_(\d+)")
_GRAFT_NAMESPACE = uuid.uuid5(uuid.NAMESPACE_URL, "forktale/graft")


class DecisionKind(Enum):
    ORIGINAL = "Original"
    ALTERNATE = "Alternate"


@dataclass(frozen=True)
class PlotNode:
    """One story state: where the protagonist is and what they may do next."""

    id: str
    state: str
    goal: str
    key_decision: str
    alternate_decision: str
    depth: int


@dataclass(frozen=True)
class PlotEdge:
    """Transition carrying the three event sentences between two states.

    ``events`` should be [restated decision, resulting event, next state];
    the length-3 rule is checked by :func:`validate` rather than here so that
    damaged trees can still be loaded and reported on.
    """

    from_node: str
    to_target: str
    decision_kind: DecisionKind
    events: tuple[str, ...]


@dataclass(frozen=True)
class StorylinePath:
    """A root-to-end traversal: the node visited and the decision taken at each."""

    node_ids: tuple[str, ...]
    choices: tuple[DecisionKind, ...]

    def __len__(self) -> int:
        return len(self.node_ids)

    def as_choice_string(self) -> str:
        return "".join("O" if c is DecisionKind.ORIGINAL else "A" for c in self.choices)


@dataclass(frozen=True)
class Violation:
    """One validation finding. ``severity`` is "error" or "warning".

    Lexical drift (goal/decision phrasing) is reported as a warning because
    model output paraphrases; structural damage is an error.
    """

    code: str
    message: str
    subject: str = ""
    severity: str = "error"


@dataclass(frozen=True)
class BranchingPlotTree:
    """Full binary branching plot tree.

    ``n`` is the node count of the original storyline and stays fixed while
    branches are merged in; after full expansion every root-to-END path
    visits exactly ``n`` nodes and there are ``2**n`` endings.
    """

    char_name: str
    title: str
    root: str
    nodes: dict[str, PlotNode]
    edges: tuple[PlotEdge, ...]
    n: int

    # -- lookups ----------------------------------------------------------

    def node(self, node_id: str) -> PlotNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise PreconditionError(f"no node {node_id!r} in tree") from None

    def out_edges(self, node_id: str) -> dict[DecisionKind, PlotEdge]:
        found: dict[DecisionKind, PlotEdge] = {}
        for edge in self.edges:
            if edge.from_node == node_id:
                found[edge.decision_kind] = edge
        return found

    def edge(self, node_id: str, kind: DecisionKind) -> PlotEdge | None:
        for edge in self.edges:
            if edge.from_node == node_id and edge.decision_kind is kind:
                return edge
        return None

    def in_edge(self, node_id: str) -> PlotEdge | None:
        for edge in self.edges:
            if edge.to_target == node_id:
                return edge
        return None

    def bfs_node_ids(self) -> list[str]:
        """Node ids in breadth-first order, Original child before Alternate.

        Tolerates damaged trees: unknown targets are skipped and a cycle is
        walked once, so validation can report on them instead of hanging.
        """
        order: list[str] = []
        seen: set[str] = set()
        queue = [self.root]
        while queue:
            node_id = queue.pop(0)
            if node_id in seen or node_id not in self.nodes:
                continue
            seen.add(node_id)
            order.append(node_id)
            out = self.out_edges(node_id)
            for kind in (DecisionKind.ORIGINAL, DecisionKind.ALTERNATE):
                edge = out.get(kind)
                if edge is not None and edge.to_target != END:
                    queue.append(edge.to_target)
        return order


# -- construction ---------------------------------------------------------


def storyline_tree(
    char_name: str,
    title: str,
    nodes: Iterable[PlotNode],
    edge_events: Iterable[tuple[str, str, str]],
) -> BranchingPlotTree:
    """Build a single-storyline tree from ordered nodes and their edge events.

    The k-th edge leaves the k-th node with Original kind; the last edge
    targets END.
    """
    node_list = list(nodes)
    events_list = [tuple(e) for e in edge_events]
    if not node_list or len(node_list) != len(events_list):
        raise PreconditionError("need one edge-event triple per node")
    edges = []
    for i, node in enumerate(node_list):
        target = node_list[i + 1].id if i + 1 < len(node_list) else END
        edges.append(
            PlotEdge(
                from_node=node.id,
                to_target=target,
                decision_kind=DecisionKind.ORIGINAL,
                events=events_list[i],
            )
        )
    return BranchingPlotTree(
        char_name=char_name,
        title=title,
        root=node_list[0].id,
        nodes={node.id: node for node in node_list},
        edges=tuple(edges),
        n=len(node_list),
    )


# -- traversal ------------------------------------------------------------


def storyline_events(tree: BranchingPlotTree, path: StorylinePath) -> list[str]:
    """Concatenate the edge events along ``path``; 3 events per node visited."""
    if len(path.node_ids) != len(path.choices) or not path.node_ids:
        raise InvalidPath("path must pair every node with a choice")
    if path.node_ids[0] != tree.root:
        raise InvalidPath(f"path must start at root {tree.root!r}")
    events: list[str] = []
    for i, (node_id, kind) in enumerate(zip(path.node_ids, path.choices)):
        edge = tree.edge(node_id, kind)
        if edge is None:
            raise InvalidPath(f"node {node_id!r} has no {kind.value} edge")
        expected = path.node_ids[i + 1] if i + 1 < len(path.node_ids) else END
        if edge.to_target != expected:
            raise InvalidPath(
                f"{kind.value} edge of {node_id!r} leads to {edge.to_target!r}, "
                f"path expects {expected!r}"
            )
        events.extend(edge.events)
    return events


def enumerate_storylines(tree: BranchingPlotTree) -> list[StorylinePath]:
    """All root-to-END paths, Original branch explored before Alternate."""
    paths: list[StorylinePath] = []

    def walk(node_id: str, ids: list[str], kinds: list[DecisionKind]) -> None:
        out = tree.out_edges(node_id)
        for kind in (DecisionKind.ORIGINAL, DecisionKind.ALTERNATE):
            edge = out.get(kind)
            if edge is None:
                continue
            if edge.to_target == END:
                paths.append(StorylinePath(tuple(ids + [node_id]), tuple(kinds + [kind])))
            elif edge.to_target in tree.nodes and edge.to_target not in ids:
                # the not-in-ids guard keeps a cyclic (damaged) tree finite
                walk(edge.to_target, ids + [node_id], kinds + [kind])

    if tree.root in tree.nodes:
        walk(tree.root, [], [])
    return paths


def path_for_choices(tree: BranchingPlotTree, choice_string: str) -> StorylinePath:
    """Resolve a choice vector like "OAO" into a concrete path."""
    kinds = []
    for ch in choice_string:
        if ch == "O":
            kinds.append(DecisionKind.ORIGINAL)
        elif ch == "A":
            kinds.append(DecisionKind.ALTERNATE)
        else:
            raise InvalidPath(f"choice vector may contain only O/A, got {ch!r}")
    node_ids = []
    current = tree.root
    for i, kind in enumerate(kinds):
        node_ids.append(current)
        edge = tree.edge(current, kind)
        if edge is None:
            raise InvalidPath(f"node {current!r} has no {kind.value} edge")
        if edge.to_target == END:
            if i + 1 != len(kinds):
                raise InvalidPath("choice vector continues past the end of the story")
        else:
            current = edge.to_target
    path = StorylinePath(tuple(node_ids), tuple(kinds))
    # re-walk for the END check on the final hop
    storyline_events(tree, path)
    return path


# -- merging --------------------------------------------------------------


def _next_ordinal(tree: BranchingPlotTree) -> int:
    top = 0
    for node_id in tree.nodes:
        match = _ID_ORDINAL.match(node_id)
        if match:
            top = max(top, int(match.group(1)))
    return top + 1


def _graft_id(ordinal: int, at_node: str, position: int) -> str:
    suffix = uuid.uuid5(_GRAFT_NAMESPACE, f"{at_node}:{position}").hex[:8]
    return f"node_{ordinal}_{suffix}"


def merge_branch(
    tree: BranchingPlotTree, at_node: str, subtree: BranchingPlotTree
) -> BranchingPlotTree:
    """Fuse ``subtree`` into the Alternate slot of ``at_node``.

    The subtree root is consumed: ``at_node`` gains an Alternate edge that
    carries the root's Original edge events, and the remaining subtree nodes
    are grafted under fresh ids with rewritten depths. Edges and nodes that
    existed before the merge are carried over untouched.
    """
    anchor = tree.node(at_node)
    if tree.edge(at_node, DecisionKind.ALTERNATE) is not None:
        raise AlternateOccupied(f"node {at_node!r} already has an alternate branch")
    expected = tree.n - anchor.depth + 1
    if subtree.n != expected:
        raise DepthMismatch(
            f"subtree of {subtree.n} nodes cannot merge at depth {anchor.depth}; "
            f"need {expected} to keep every path {tree.n} nodes long"
        )
    sub_root_out = subtree.out_edges(subtree.root)
    root_edge = sub_root_out.get(DecisionKind.ORIGINAL)
    if root_edge is None or DecisionKind.ALTERNATE in sub_root_out:
        raise PreconditionError("subtree root must have exactly one Original edge")

    ordinal = _next_ordinal(tree)
    id_map: dict[str, str] = {}
    new_nodes: dict[str, PlotNode] = dict(tree.nodes)
    # Deterministic graft order: the subtree's own storyline order.
    for position, old_id in enumerate(subtree.bfs_node_ids()):
        if old_id == subtree.root:
            continue
        fresh = _graft_id(ordinal, at_node, position)
        ordinal += 1
        id_map[old_id] = fresh
        old = subtree.nodes[old_id]
        new_nodes[fresh] = replace(
            old, id=fresh, depth=anchor.depth + (old.depth - 1)
        )

    def remap(target: str) -> str:
        if target == END:
            return END
        return id_map[target]

    new_edges = list(tree.edges)
    new_edges.append(
        PlotEdge(
            from_node=at_node,
            to_target=remap(root_edge.to_target),
            decision_kind=DecisionKind.ALTERNATE,
            events=root_edge.events,
        )
    )
    for edge in subtree.edges:
        if edge is root_edge:
            continue
        new_edges.append(
            PlotEdge(
                from_node=id_map[edge.from_node],
                to_target=remap(edge.to_target),
                decision_kind=edge.decision_kind,
                events=edge.events,
            )
        )
    return replace(tree, nodes=new_nodes, edges=tuple(new_edges))


# -- validation -----------------------------------------------------------


def validate(tree: BranchingPlotTree, expect_complete: bool = False) -> list[Violation]:
    """Check type and structure invariants; violations are data, not raises.

    With ``expect_complete`` the full-binary contract is checked too: two
    outgoing edges everywhere, every path exactly ``n`` nodes, ``2**n``
    endings.
    """
    out: list[Violation] = []
    decides_prefix = f"{tree.char_name} decides"

    if tree.root not in tree.nodes:
        out.append(Violation("missing-root", f"root {tree.root!r} is not a node"))
        return out

    for node_id, node in tree.nodes.items():
        if node.id != node_id:
            out.append(Violation("id-mismatch", "node keyed under a different id", node_id))
        if not node.state.strip():
            out.append(Violation("empty-state", "state is empty", node_id))
        if node.depth < 1:
            out.append(Violation("bad-depth", f"depth {node.depth} < 1", node_id))
        if normalize(node.key_decision) == normalize(node.alternate_decision):
            out.append(
                Violation("identical-decisions", "key and alternate decision are the same", node_id)
            )
        if not node.goal.startswith("To "):
            out.append(
                Violation("goal-phrasing", 'goal does not begin with "To "', node_id, "warning")
            )
        for label, text in (("decision", node.key_decision), ("alternate decision", node.alternate_decision)):
            if not normalize(text).startswith(f"{decides_prefix} to "):
                out.append(
                    Violation(
                        "decision-phrasing",
                        f'{label} does not begin with "{decides_prefix} to "',
                        node_id,
                        "warning",
                    )
                )

    seen_slots: set[tuple[str, DecisionKind]] = set()
    in_degree: dict[str, int] = {node_id: 0 for node_id in tree.nodes}
    for edge in tree.edges:
        where = f"{edge.from_node}->{edge.to_target}"
        if edge.from_node not in tree.nodes:
            out.append(Violation("dangling-edge", "edge leaves an unknown node", where))
            continue
        if edge.to_target != END and edge.to_target not in tree.nodes:
            out.append(Violation("dangling-edge", "edge targets an unknown node", where))
            continue
        if len(edge.events) != 3:
            out.append(
                Violation("event-count", f"edge event count {len(edge.events)} != 3", where)
            )
        slot = (edge.from_node, edge.decision_kind)
        if slot in seen_slots:
            out.append(
                Violation("duplicate-slot", f"second {edge.decision_kind.value} edge", where)
            )
        seen_slots.add(slot)
        if edge.to_target != END:
            in_degree[edge.to_target] += 1
        if edge.events and not normalize(edge.events[0]).startswith(decides_prefix):
            out.append(
                Violation(
                    "restated-decision",
                    f'first edge event does not restate a "{decides_prefix}" sentence',
                    where,
                    "warning",
                )
            )

    if in_degree.get(tree.root, 0) != 0:
        out.append(Violation("root-in-edge", "root has an incoming edge", tree.root))
    for node_id, degree in in_degree.items():
        if node_id != tree.root and degree != 1:
            out.append(
                Violation("in-degree", f"node has {degree} incoming edges, expected 1", node_id)
            )

    reachable = set(tree.bfs_node_ids())
    unreachable = set(tree.nodes) - reachable
    for node_id in sorted(unreachable):
        out.append(Violation("unreachable", "node not reachable from root", node_id))

    # depth labels must agree with the actual distance from the root
    if not unreachable:
        depth_from_root = {tree.root: 1}
        for node_id in tree.bfs_node_ids():
            for edge in tree.out_edges(node_id).values():
                if edge.to_target != END and edge.to_target in tree.nodes:
                    depth_from_root[edge.to_target] = depth_from_root[node_id] + 1
        for node_id, depth in depth_from_root.items():
            if tree.nodes[node_id].depth != depth:
                out.append(
                    Violation(
                        "depth-label",
                        f"stored depth {tree.nodes[node_id].depth} != distance {depth}",
                        node_id,
                    )
                )

    if expect_complete and not any(v.severity == "error" for v in out):
        for node_id in tree.nodes:
            slots = tree.out_edges(node_id)
            if len(slots) != 2:
                out.append(
                    Violation(
                        "incomplete-node",
                        f"{len(slots)} outgoing edges, expected Original and Alternate",
                        node_id,
                    )
                )
        paths = enumerate_storylines(tree)
        expected_leaves = 2**tree.n
        if len(paths) != expected_leaves:
            out.append(
                Violation(
                    "leaf-count", f"{len(paths)} endings, expected {expected_leaves}", ""
                )
            )
        for path in paths:
            if len(path) != tree.n:
                out.append(
                    Violation(
                        "path-length",
                        f"storyline {path.as_choice_string()} visits {len(path)} nodes, expected {tree.n}",
                        "",
                    )
                )
    return out


def errors_only(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


# -- persistence ----------------------------------------------------------


def tree_to_document(tree: BranchingPlotTree) -> dict:
    return {
        "version": TREE_FORMAT_VERSION,
        "char_name": tree.char_name,
        "title": tree.title,
        "n": tree.n,
        "root": tree.root,
        "nodes": {
            node_id: {
                "id": node.id,
                "state": node.state,
                "goal": node.goal,
                "key_decision": node.key_decision,
                "alternate_decision": node.alternate_decision,
                "depth": node.depth,
            }
            for node_id, node in sorted(tree.nodes.items())
        },
        "edges": [
            {
                "from_node": edge.from_node,
                "to_target": edge.to_target,
                "decision_kind": edge.decision_kind.value,
                "events": list(edge.events),
            }
            for edge in tree.edges
        ],
    }


def tree_from_document(doc: dict) -> BranchingPlotTree:
    try:
        version = doc["version"]
        if version != TREE_FORMAT_VERSION:
            raise SchemaVersionMismatch(
                f"tree format version {version!r} not supported (want {TREE_FORMAT_VERSION})"
            )
        nodes = {
            node_id: PlotNode(
                id=raw["id"],
                state=raw["state"],
                goal=raw["goal"],
                key_decision=raw["key_decision"],
                alternate_decision=raw["alternate_decision"],
                depth=int(raw["depth"]),
            )
            for node_id, raw in doc["nodes"].items()
        }
        edges = tuple(
            PlotEdge(
                from_node=raw["from_node"],
                to_target=raw["to_target"],
                decision_kind=DecisionKind(raw["decision_kind"]),
                events=tuple(raw["events"]),
            )
            for raw in doc["edges"]
        )
        return BranchingPlotTree(
            char_name=doc["char_name"],
            title=doc["title"],
            root=doc["root"],
            nodes=nodes,
            edges=edges,
            n=int(doc["n"]),
        )
    except SchemaVersionMismatch:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed tree document: {exc}") from exc


def dump_tree(tree: BranchingPlotTree) -> str:
    return json.dumps(tree_to_document(tree), indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def save(tree: BranchingPlotTree, destination: str | Path) -> None:
    Path(destination).write_text(dump_tree(tree), encoding="utf-8")


def load(source: str | Path) -> BranchingPlotTree:
    text = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("tree file must hold a JSON object")
    return tree_from_document(doc)
