"""Shared builders for the test suite.

Everything here is offline: trees come from deterministic text generators
and gateway traffic goes through the in-process fake model or scripted
response queues.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from pathlib import Path

import pytest

from forktale.fakemodel import FakeStoryModel
from forktale.gateway import Gateway, MockBackend, ScriptedBackend
from forktale.tree import (
    BranchingPlotTree,
    DecisionKind,
    PlotNode,
    merge_branch,
    storyline_tree,
)

FIXTURES = Path(__file__).parent / "fixtures"
IRONMAN_PLOT = FIXTURES / "ironman" / "plot.txt"
IRONMAN_CASSETTE = FIXTURES / "ironman" / "cassette.json"

_STATES = (
    "stands at the edge of the ruined bridge",
    "hides in the flooded cellar",
    "argues with the council in the great hall",
    "rides north along the coast road",
    "deciphers the ledger by candlelight",
    "waits out the storm in a shepherd hut",
    "bargains with the ferryman at dawn",
    "tends a wounded stranger in the barn",
)

_ACTS = (
    "follow the smugglers' trail",
    "burn the forged letters",
    "warn the garrison",
    "steal the signal lantern",
    "cross the pass at night",
    "confront the magistrate",
    "free the caged messenger birds",
    "bury the coin hoard",
)


def make_linear_tree(
    n: int,
    char_name: str = "Mara Voss",
    title: str = "The Pass",
    seed: int = 0,
    id_prefix: str = "node",
) -> BranchingPlotTree:
    """A fresh n-node single-path tree with generated but well-formed text."""
    rng = random.Random((seed, n, id_prefix).__repr__())
    nodes: list[PlotNode] = []
    triples: list[tuple[str, str, str]] = []
    state = f"{char_name} {rng.choice(_STATES)}."
    for ordinal in range(1, n + 1):
        act = rng.choice(_ACTS)
        alt = rng.choice([a for a in _ACTS if a != act])
        decision = f"{char_name} decides to {act}."
        next_state = f"{char_name} {rng.choice(_STATES)} ({seed}.{ordinal})."
        nodes.append(
            PlotNode(
                id=f"{id_prefix}_{ordinal}",
                state=state,
                goal=f"To {act} before the rains return.",
                key_decision=decision,
                alternate_decision=f"{char_name} decides to {alt} instead.",
                depth=ordinal,
            )
        )
        triples.append(
            (
                decision,
                f"The attempt to {act} draws unwanted attention ({seed}.{ordinal}).",
                next_state,
            )
        )
        state = next_state
    return storyline_tree(char_name=char_name, title=title, nodes=nodes, edge_events=triples)


def subgraph_hash(tree: BranchingPlotTree, node_ids: set[str], slots: set) -> str:
    """Order-independent digest of a chosen subset of nodes and edge slots."""
    digest = hashlib.sha256()
    for node_id in sorted(node_ids):
        digest.update(repr(dataclasses.astuple(tree.nodes[node_id])).encode())
    for from_node, kind in sorted(slots, key=lambda s: (s[0], s[1].value)):
        edge = tree.edge(from_node, kind)
        assert edge is not None, f"slot {from_node}/{kind.value} vanished"
        digest.update(repr(dataclasses.astuple(edge)).encode())
    return digest.hexdigest()


def tree_slots(tree: BranchingPlotTree) -> set:
    return {(edge.from_node, edge.decision_kind) for edge in tree.edges}


def random_expand(
    tree: BranchingPlotTree, rng: random.Random, on_merge=None
) -> BranchingPlotTree:
    """Merge random well-sized subtrees until every alternate slot is filled."""
    while True:
        open_nodes = sorted(
            node_id
            for node_id in tree.nodes
            if tree.edge(node_id, DecisionKind.ALTERNATE) is None
        )
        if not open_nodes:
            return tree
        at_node = rng.choice(open_nodes)
        need = tree.n - tree.nodes[at_node].depth + 1
        subtree = make_linear_tree(
            need, char_name=tree.char_name, seed=rng.randrange(10**9), id_prefix="sub"
        )
        tree = merge_branch(tree, at_node, subtree)
        if on_merge is not None:
            on_merge(tree, at_node)


@pytest.fixture
def mock_gateway() -> Gateway:
    return Gateway(backend=MockBackend(FakeStoryModel()))


def scripted_gateway(responses: list[str], retry_limit: int = 3) -> tuple[Gateway, ScriptedBackend]:
    backend = ScriptedBackend(responses)
    return Gateway(backend=backend, retry_limit=retry_limit), backend
