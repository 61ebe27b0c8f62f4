"""Stage-by-stage pipeline tests plus the breadth-first expansion loop.

Call counts are checked against hand-derived arithmetic rather than against
what the code happens to do: a full run costs one plot call, one extraction,
three calls per branch generation, and one re-extraction per branch that
grafts new nodes.
"""

from __future__ import annotations

import dataclasses
import json
import logging

import pytest

from conftest import make_linear_tree, scripted_gateway
from forktale.errors import (
    BudgetExceeded,
    ConfigDigestMismatch,
    CorruptCheckpoint,
    CountMismatch,
    EmptyPlot,
    NodeCountMismatch,
    OrderingViolation,
    PreconditionError,
    TooFewEvents,
    TransportError,
)
from forktale.fakemodel import FakeStoryModel
from forktale.gateway import Gateway, MockBackend
from forktale.pipeline import (
    BranchJob,
    ExpansionCheckpoint,
    KeyEvent,
    KeyEvents,
    MetaPrompt,
    Pipeline,
    PipelineConfig,
    default_budget,
    filter_key_events,
    read_checkpoint,
    write_checkpoint,
)
from forktale.textnorm import same_text
from forktale.tree import (
    DecisionKind,
    dump_tree,
    enumerate_storylines,
    errors_only,
    storyline_events,
    validate,
)

PLOT = (
    "Mara Voss guides a mule train over the high pass before the first snow. "
    "A rockslide blocks the northern route, her partner falls ill, and a rival "
    "crew offers to buy the cargo at a loss. She pushes on through the storm "
    "and brings the train down into the valley on the last clear day."
)


def numbered(k: int) -> list[str]:
    return [f"Event {i} happens on the trail." for i in range(1, k + 1)]


def node_doc(i: int, *, decision: str | None = None, alternate: str | None = None) -> dict:
    return {
        "state": f"Mara is at waypoint {i}.",
        "goal": f"To clear waypoint {i} by dusk.",
        "decision": decision or f"Mara decides to press on from waypoint {i}.",
        "edgeEvents": [
            f"Waypoint {i} event one.",
            f"Waypoint {i} event two.",
            f"Waypoint {i} event three.",
        ],
        "alternate_decision": alternate or f"Mara decides to turn back at waypoint {i}.",
    }


def key_doc(inciting: int, crisis: int, climax: int, events: list[str]) -> str:
    return json.dumps(
        {
            "inciting_incident": {"eventId": inciting, "event": events[inciting - 1]},
            "crisis": {"eventId": crisis, "event": events[crisis - 1]},
            "climax": {"eventId": climax, "event": events[climax - 1]},
        }
    )


def hand_meta(new_story_length: int = 6) -> MetaPrompt:
    questions = "\n".join(f"{i}. What happens next?" for i in range(1, 6))
    return MetaPrompt(
        branching_node=2,
        branching_event=4,
        original_decision="Mara decides to press on.",
        alternate_decision="Mara decides to turn back.",
        new_story_length=new_story_length,
        major_plot_points={"climax": KeyEvent(9, "The train descends.")},
        prompt_text="Write the storyline that follows the other choice.\n" + questions,
    )


# -- plot to tree ----------------------------------------------------------


def test_initialize_tree_fixed_count(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=4, title="The Pass")
    assert tree.n == 4
    assert tree.char_name == "Mara Voss"
    assert tree.title == "The Pass"
    assert list(tree.bfs_node_ids()) == [f"node_{i}" for i in range(1, 5)]
    assert [tree.node(f"node_{i}").depth for i in range(1, 5)] == [1, 2, 3, 4]
    assert errors_only(validate(tree)) == []
    assert mock_gateway.calls == 1


def test_initialize_tree_open_count(mock_gateway):
    tree = Pipeline(mock_gateway).initialize_tree(PLOT, "Mara Voss")
    assert 1 <= tree.n <= 6
    assert errors_only(validate(tree)) == []


def test_initialize_tree_rejects_blank_inputs(mock_gateway):
    pipe = Pipeline(mock_gateway)
    with pytest.raises(EmptyPlot):
        pipe.initialize_tree("  \n ", "Mara Voss")
    with pytest.raises(PreconditionError):
        pipe.initialize_tree(PLOT, "   ")
    assert mock_gateway.calls == 0


def test_initialize_tree_retries_identical_decisions():
    twin = node_doc(1, alternate=node_doc(1)["decision"])
    gateway, backend = scripted_gateway(
        [json.dumps({"node_1": twin}), json.dumps({"node_1": node_doc(1)})]
    )
    tree = Pipeline(gateway).initialize_tree(PLOT, "Mara Voss", num_nodes=1)
    assert tree.n == 1
    assert len(backend.requests) == 2
    correction = backend.requests[1].messages[-1].content
    assert "must differ" in correction


# -- events to subtree -----------------------------------------------------


def test_events_to_subtree_builds_matching_tree(mock_gateway):
    events = numbered(6)
    tree = Pipeline(mock_gateway).events_to_subtree(events, "Mara Voss")
    assert tree.n == 2
    assert errors_only(validate(tree)) == []
    assert list(tree.edge("node_1", DecisionKind.ORIGINAL).events) == events[0:3]
    assert list(tree.edge("node_2", DecisionKind.ORIGINAL).events) == events[3:6]


def test_events_to_subtree_rejects_ragged_storyline(mock_gateway):
    pipe = Pipeline(mock_gateway)
    for count in (0, 4):
        with pytest.raises(PreconditionError):
            pipe.events_to_subtree(numbered(count), "Mara Voss")
    assert mock_gateway.calls == 0


def test_events_to_subtree_node_count_mismatch():
    # one node where two were requested; the tighter internal retry limit
    # means only a single corrective attempt before giving up
    short = json.dumps({"node_1": node_doc(1)})
    gateway, backend = scripted_gateway([short, short])
    with pytest.raises(NodeCountMismatch):
        Pipeline(gateway).events_to_subtree(numbered(6), "Mara Voss")
    assert len(backend.requests) == 2


# -- key events ------------------------------------------------------------


def test_extract_key_events_echoes_storyline_text(mock_gateway):
    events = numbered(12)
    keys = Pipeline(mock_gateway).extract_key_events(events)
    ids = [keys.inciting_incident.event_id, keys.crisis.event_id, keys.climax.event_id]
    assert ids[0] < ids[1] < ids[2] <= 12
    for entry in keys.as_ordered().values():
        assert entry.event == events[entry.event_id - 1]


def test_extract_key_events_rejects_short_storyline(mock_gateway):
    with pytest.raises(TooFewEvents):
        Pipeline(mock_gateway).extract_key_events(["One thing.", "Another thing."])
    assert mock_gateway.calls == 0


def test_extract_key_events_retries_bad_ordering():
    events = numbered(9)
    gateway, backend = scripted_gateway(
        [key_doc(5, 2, 9, events), key_doc(2, 5, 9, events)]
    )
    keys = Pipeline(gateway).extract_key_events(events)
    assert keys.crisis.event_id == 5
    assert len(backend.requests) == 2
    correction = backend.requests[1].messages[-1].content
    assert "inciting incident < crisis < climax" in correction


def test_extract_key_events_ordering_exhaustion():
    events = numbered(9)
    bad = key_doc(5, 2, 9, events)
    gateway, _ = scripted_gateway([bad, bad])
    with pytest.raises(OrderingViolation) as info:
        Pipeline(gateway).extract_key_events(events)
    assert info.value.attempts == 2


def test_extract_key_events_warns_on_text_drift(caplog):
    events = numbered(9)
    doc = json.dumps(
        {
            "inciting_incident": {"eventId": 2, "event": "A different recollection."},
            "crisis": {"eventId": 5, "event": events[4]},
            "climax": {"eventId": 9, "event": events[8]},
        }
    )
    gateway, _ = scripted_gateway([doc])
    with caplog.at_level(logging.WARNING, logger="forktale.pipeline"):
        keys = Pipeline(gateway).extract_key_events(events)
    # drift is reported, not repaired: the extracted wording wins
    assert keys.inciting_incident.event == "A different recollection."
    assert any("drifts" in record.getMessage() for record in caplog.records)


def test_key_events_filtering():
    keys = KeyEvents(KeyEvent(2, "Spark."), KeyEvent(5, "Strain."), KeyEvent(8, "Clash."))
    assert list(keys.as_ordered()) == ["inciting_incident", "crisis", "climax"]
    assert set(keys.filtered(1)) == {"inciting_incident", "crisis", "climax"}
    assert set(keys.filtered(4)) == {"crisis", "climax"}
    assert set(keys.filtered(5)) == {"crisis", "climax"}
    assert keys.filtered(9) == {}
    assert filter_key_events(keys, 4) == keys.filtered(4)


# -- meta-prompts ----------------------------------------------------------


def test_generate_meta_prompt_mock(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3)
    path = enumerate_storylines(tree)[0]
    keys = pipe.extract_key_events(storyline_events(tree, path))
    meta = pipe.generate_meta_prompt(tree, path, "node_2", keys.filtered(4))
    node = tree.node("node_2")
    assert meta.branching_node == 2
    assert meta.branching_event == 4
    assert meta.new_story_length == 6
    assert meta.original_decision == node.key_decision
    assert meta.alternate_decision == node.alternate_decision
    assert meta.major_plot_points == keys.filtered(4)
    meta.check()


def test_generate_meta_prompt_preconditions(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3)
    path = enumerate_storylines(tree)[0]
    with pytest.raises(PreconditionError):
        pipe.generate_meta_prompt(tree, path, "node_9", {})
    with pytest.raises(PreconditionError):
        pipe.generate_meta_prompt(
            tree, path, "node_2", {"crisis": KeyEvent(2, "Too early.")}
        )
    blank = dataclasses.replace(tree.node("node_2"), alternate_decision="  ")
    tampered = dataclasses.replace(tree, nodes={**tree.nodes, "node_2": blank})
    with pytest.raises(PreconditionError):
        pipe.generate_meta_prompt(tampered, path, "node_2", {})
    assert mock_gateway.calls == 1  # only the initial plot call went out


def test_meta_prompt_check_contract():
    hand_meta().check()
    with pytest.raises(PreconditionError):
        dataclasses.replace(hand_meta(), branching_event=5).check()
    with pytest.raises(PreconditionError):
        dataclasses.replace(hand_meta(), new_story_length=7).check()
    with pytest.raises(PreconditionError):
        dataclasses.replace(
            hand_meta(), major_plot_points={"crisis": KeyEvent(2, "Early.")}
        ).check()
    with pytest.raises(PreconditionError):
        dataclasses.replace(hand_meta(), prompt_text="   ").check()


# -- alternate storylines --------------------------------------------------


def test_write_alternate_storyline_mock(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3)
    path = enumerate_storylines(tree)[0]
    events = storyline_events(tree, path)
    keys = pipe.extract_key_events(events)
    meta = pipe.generate_meta_prompt(tree, path, "node_2", keys.filtered(4))
    new_events = pipe.write_alternate_storyline(events, meta)
    assert len(new_events) == 6
    assert same_text(new_events[0], meta.alternate_decision)


def test_write_alternate_storyline_count_mismatch():
    short = json.dumps({"events": {str(i): f"Alternate event {i}." for i in range(1, 6)}})
    gateway, backend = scripted_gateway([short, short, short])
    with pytest.raises(CountMismatch):
        Pipeline(gateway).write_alternate_storyline(numbered(9), hand_meta())
    assert len(backend.requests) == 3


def test_write_alternate_storyline_first_event_check():
    meta = hand_meta()

    def doc(first: str) -> str:
        events = {str(i): f"Alternate event {i}." for i in range(1, 7)}
        events["1"] = first
        return json.dumps({"events": events})

    gateway, backend = scripted_gateway(
        [doc("Something unrelated happens."), doc(meta.alternate_decision)]
    )
    events = Pipeline(gateway).write_alternate_storyline(numbered(9), meta)
    assert same_text(events[0], meta.alternate_decision)
    assert len(backend.requests) == 2
    assert "first event" in backend.requests[1].messages[-1].content


# -- full expansion --------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
def test_expand_tree_completes(mock_gateway, n):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=n, title="The Pass")
    full = pipe.expand_tree(tree)
    assert errors_only(validate(full, expect_complete=True)) == []
    paths = enumerate_storylines(full)
    assert len(paths) == 2**n
    assert all(len(path.node_ids) == n for path in paths)
    assert len(full.nodes) == 2**n - 1
    branches = 2**n - 1
    regrafts = branches - 2 ** (n - 1)  # deepest branches graft nothing
    assert mock_gateway.calls == 2 + 3 * branches + regrafts


def test_expand_tree_preserves_original_storyline(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3)
    before_nodes = {node_id: tree.node(node_id) for node_id in tree.bfs_node_ids()}
    before_edges = {
        node_id: tree.edge(node_id, DecisionKind.ORIGINAL) for node_id in before_nodes
    }
    full = pipe.expand_tree(tree)
    for node_id, node in before_nodes.items():
        assert full.node(node_id) == node
        assert full.edge(node_id, DecisionKind.ORIGINAL) == before_edges[node_id]


def test_expand_tree_reports_progress(mock_gateway):
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=2)
    seen: list[dict] = []
    pipe.expand_tree(tree, progress=seen.append)
    assert len(seen) == 3
    assert seen[0]["node_id"] == "node_1"
    assert [entry["completed"] for entry in seen] == [1, 2, 3]
    assert seen[-1]["pending"] == 0
    for entry in seen:
        assert entry["attempts"] >= 0
        assert entry["elapsed"] >= 0


def test_expand_tree_budget_checkpoint_and_resume(mock_gateway, tmp_path):
    checkpoint = tmp_path / "checkpoint.json"
    pipe = Pipeline(mock_gateway)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3, title="The Pass")
    with pytest.raises(BudgetExceeded):
        pipe.expand_tree(tree, budget=10, checkpoint_path=checkpoint)
    state = read_checkpoint(checkpoint)
    assert state.config_digest == pipe.config.digest()
    assert state.frontier
    assert state.calls >= 10

    resumed = pipe.expand_tree(tree, resume_state=state)
    assert errors_only(validate(resumed, expect_complete=True)) == []

    # an uninterrupted run over the same backend lands on the same tree
    reference_pipe = Pipeline(Gateway(backend=MockBackend(FakeStoryModel())))
    reference = reference_pipe.expand_tree(
        reference_pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=3, title="The Pass")
    )
    assert dump_tree(resumed) == dump_tree(reference)


def test_expand_tree_rejects_foreign_checkpoint(mock_gateway):
    tree = make_linear_tree(2)
    state = ExpansionCheckpoint(
        tree=tree,
        frontier=[],
        completed=0,
        calls=0,
        config_digest=PipelineConfig().digest(),
    )
    pipe = Pipeline(mock_gateway, PipelineConfig(temperature_generate=0.21))
    with pytest.raises(ConfigDigestMismatch):
        pipe.expand_tree(tree, resume_state=state)


class FailAfter:
    """Backend wrapper that starts refusing once a call quota is spent."""

    def __init__(self, inner, quota: int):
        self.inner = inner
        self.quota = quota
        self.count = 0

    def send(self, request) -> str:
        self.count += 1
        if self.count > self.quota:
            raise TransportError("backend went away")
        return self.inner.send(request)


def test_expand_tree_checkpoints_on_failure_and_resumes(tmp_path):
    flaky = Gateway(backend=FailAfter(MockBackend(FakeStoryModel()), quota=6))
    pipe = Pipeline(flaky)
    tree = pipe.initialize_tree(PLOT, "Mara Voss", num_nodes=2, title="The Pass")
    checkpoint = tmp_path / "checkpoint.json"
    with pytest.raises(TransportError):
        pipe.expand_tree(tree, checkpoint_path=checkpoint)

    state = read_checkpoint(checkpoint)
    assert len(state.frontier) == 2
    assert state.frontier[0].node_id == "node_1"  # failed job goes back first

    fresh = Pipeline(Gateway(backend=MockBackend(FakeStoryModel())))
    resumed = fresh.expand_tree(tree, resume_state=state)
    assert errors_only(validate(resumed, expect_complete=True)) == []


# -- checkpoint files ------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    tree = make_linear_tree(3)
    path = enumerate_storylines(tree)[0]
    job = BranchJob("node_2", path, hand_meta())
    state = ExpansionCheckpoint(
        tree=tree,
        frontier=[job],
        completed=4,
        calls=17,
        config_digest=PipelineConfig().digest(),
    )
    target = tmp_path / "checkpoint.json"
    write_checkpoint(state, target)
    loaded = read_checkpoint(target)
    assert dump_tree(loaded.tree) == dump_tree(tree)
    assert loaded.completed == 4
    assert loaded.calls == 17
    assert loaded.config_digest == state.config_digest
    assert len(loaded.frontier) == 1
    restored = loaded.frontier[0]
    assert restored.node_id == "node_2"
    assert restored.path == path
    assert restored.meta_prompt == hand_meta()


def test_checkpoint_corruption(tmp_path):
    target = tmp_path / "checkpoint.json"
    target.write_text("not json at all", encoding="utf-8")
    with pytest.raises(CorruptCheckpoint):
        read_checkpoint(target)
    target.write_text(json.dumps([1, 2, 3]), encoding="utf-8")
    with pytest.raises(CorruptCheckpoint):
        read_checkpoint(target)
    target.write_text(json.dumps({"version": 99}), encoding="utf-8")
    with pytest.raises(CorruptCheckpoint):
        read_checkpoint(target)
    with pytest.raises(CorruptCheckpoint):
        read_checkpoint(tmp_path / "missing.json")


# -- configuration ---------------------------------------------------------


def test_config_digest_contract():
    base = PipelineConfig()
    assert base.digest() == PipelineConfig().digest()
    assert len(base.digest()) == 64
    assert PipelineConfig(temperature_generate=0.21).digest() != base.digest()
    assert PipelineConfig(model_id="other").digest() != base.digest()
    # the output-token ceiling affects cost, not content
    assert PipelineConfig(max_output_tokens=512).digest() == base.digest()


def test_default_budget_scale():
    assert default_budget(1) == 16
    assert default_budget(3) == 64
    assert default_budget(6) == 512
