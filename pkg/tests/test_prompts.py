"""Prompt pack: rendering, event arithmetic, schema specialization."""

from __future__ import annotations

import json

import jsonschema
import pytest

from conftest import make_linear_tree
from forktale import prompts
from forktale.errors import MissingBinding, OutOfRange, UnknownStage
from forktale.prompts import Stage
from forktale.tree import enumerate_storylines, storyline_events


def valid(spec: prompts.SchemaSpec, doc: dict) -> bool:
    try:
        jsonschema.Draft202012Validator(spec.schema_document).validate(doc)
        return True
    except jsonschema.ValidationError:
        return False


def sample_node(tag: str) -> dict:
    return {
        "state": f"State {tag}.",
        "goal": f"To do {tag}.",
        "decision": f"Kim decides to {tag}.",
        "edgeEvents": [f"Kim decides to {tag}.", f"{tag} happens.", f"After {tag}."],
        "alternate_decision": f"Kim decides to skip {tag} instead.",
    }


# -- event arithmetic ------------------------------------------------------


def test_new_story_length_matches_events_remaining_after_branch():
    for n in range(1, 11):
        total = n * 3
        for t in range(1, n + 1):
            consumed_before_branch = (t - 1) * 3
            assert prompts.new_story_length(n, t) == total - consumed_before_branch


def test_new_story_length_worked_case():
    assert prompts.new_story_length(6, 2) == 15


def test_new_story_length_rejects_out_of_range():
    with pytest.raises(OutOfRange):
        prompts.new_story_length(4, 0)
    with pytest.raises(OutOfRange):
        prompts.new_story_length(4, 5)


def test_branching_event_points_at_the_decision_event():
    tree = make_linear_tree(5)
    path = enumerate_storylines(tree)[0]
    flat = storyline_events(tree, path)
    for t in range(1, 6):
        event_number = prompts.branching_event_number(t)
        assert flat[event_number - 1] == tree.nodes[f"node_{t}"].key_decision
    with pytest.raises(OutOfRange):
        prompts.branching_event_number(0)


def test_numbered_events_layout():
    text = prompts.numbered_events(["first", "second", "third"])
    assert text == "1. first\n2. second\n3. third"
    assert prompts.numbered_events([]) == ""


# -- templates and rendering ----------------------------------------------


def test_every_stage_has_nonempty_template_sections():
    for stage in Stage:
        tpl = prompts.template(stage)
        assert tpl.system_text.strip()
        assert tpl.user_text.strip()


def test_placeholder_inventory_is_pinned():
    expected = {
        Stage.PLOT_TO_TREE: {"JSON_SCHEMA", "char_name", "num_nodes", "plot"},
        Stage.KEY_EVENTS: {"JSON_SCHEMA", "events"},
        Stage.META_PROMPT: {
            "JSON_SCHEMA",
            "all_events",
            "alternate_decision",
            "branching_event",
            "char_name",
            "mpp",
            "new_story_length",
            "original_decision",
        },
        Stage.WRITE_STORYLINE: {"JSON_SCHEMA", "all_events", "prompt"},
        Stage.NARRATE: {"JSON_SCHEMA", "char_name", "node"},
    }
    for stage, names in expected.items():
        assert prompts.placeholders(stage) == names, stage


def test_render_substitutes_and_accepts_string_stage_names():
    bindings = {
        "plot": "A short tale.",
        "num_nodes": 4,
        "char_name": "Kim Lee",
        "JSON_SCHEMA": "{}",
    }
    by_enum = prompts.render(Stage.PLOT_TO_TREE, bindings)
    by_name = prompts.render("plot_to_tree", bindings)
    assert by_enum == by_name
    assert "A short tale." in by_enum.user_text
    assert "4" in by_enum.user_text
    assert "{plot}" not in by_enum.user_text


def test_render_reports_every_missing_binding_at_once():
    with pytest.raises(MissingBinding) as err:
        prompts.render(Stage.PLOT_TO_TREE, {"plot": "x"})
    message = str(err.value)
    for name in ("JSON_SCHEMA", "char_name", "num_nodes"):
        assert name in message


def test_render_rejects_unknown_stage():
    with pytest.raises(UnknownStage):
        prompts.render("improvise", {})


def test_render_is_single_pass_over_bound_values():
    bindings = {
        "plot": 'He said "see {JSON_SCHEMA} for details" and left.',
        "num_nodes": 2,
        "char_name": "Kim",
        "JSON_SCHEMA": "{}",
    }
    # a bound value that re-introduces a needed placeholder name is refused
    # rather than substituted again
    with pytest.raises(MissingBinding):
        prompts.render(Stage.PLOT_TO_TREE, bindings)
    # brace-wrapped text that is not a template name passes through untouched
    ok = dict(bindings, plot="The {unrelated} brace survives.")
    rendered = prompts.render(Stage.PLOT_TO_TREE, ok)
    assert "{unrelated}" in rendered.user_text


# -- schema specialization -------------------------------------------------


def test_plot_to_tree_schema_fixed_count():
    spec = prompts.plot_to_tree_schema(3)
    doc = {f"node_{i}": sample_node(str(i)) for i in range(1, 4)}
    assert valid(spec, doc)
    assert not valid(spec, {k: doc[k] for k in ("node_1", "node_2")})
    assert not valid(spec, dict(doc, node_4=sample_node("4")))
    bad = dict(doc)
    bad["node_2"] = dict(sample_node("2"), edgeEvents=["only", "two"])
    assert not valid(spec, bad)
    with pytest.raises(OutOfRange):
        prompts.plot_to_tree_schema(0)


def test_plot_to_tree_schema_open_count():
    spec = prompts.plot_to_tree_schema(None)
    two = {f"node_{i}": sample_node(str(i)) for i in range(1, 3)}
    six = {f"node_{i}": sample_node(str(i)) for i in range(1, 7)}
    seven = dict(six, node_7=sample_node("7"))
    assert valid(spec, two)
    assert valid(spec, six)
    assert not valid(spec, seven)
    assert not valid(spec, {})


def test_key_events_schema_bounds_event_ids():
    spec = prompts.key_events_schema(9)
    doc = {
        "inciting_incident": {"eventId": 2, "event": "a"},
        "crisis": {"eventId": 5, "event": "b"},
        "climax": {"eventId": 9, "event": "c"},
    }
    assert valid(spec, doc)
    assert not valid(spec, dict(doc, climax={"eventId": 10, "event": "c"}))
    assert not valid(spec, dict(doc, crisis={"eventId": 0, "event": "b"}))
    assert not valid(spec, {k: doc[k] for k in ("inciting_incident", "crisis")})
    with pytest.raises(OutOfRange):
        prompts.key_events_schema(0)


def test_meta_prompt_schema_pins_bookkeeping_fields():
    points = {"climax": {"eventId": 8, "event": "The duel."}}
    spec = prompts.meta_prompt_schema(4, "Kim decides to stay.", "Kim decides to go.", 9, points)
    doc = {
        "branching_event_number": 4,
        "original_decision": "Kim decides to stay.",
        "alternate_decision": "Kim decides to go.",
        "new_story_length": 9,
        "major_plot_points": points,
        "prompt": "Write it.",
    }
    assert valid(spec, doc)
    assert not valid(spec, dict(doc, new_story_length=12))
    assert not valid(spec, dict(doc, original_decision="Kim decides to stroll."))
    assert not valid(spec, dict(doc, major_plot_points={}))
    assert not valid(spec, dict(doc, prompt=""))


def test_write_storyline_schema_requires_exact_event_keys():
    spec = prompts.write_storyline_schema(3)
    doc = {"events": {"1": "a", "2": "b", "3": "c"}}
    assert valid(spec, doc)
    assert not valid(spec, {"events": {"1": "a", "2": "b"}})
    assert not valid(spec, {"events": {"1": "a", "2": "b", "3": "c", "4": "d"}})
    assert not valid(spec, {"events": {"1": "a", "2": "", "3": "c"}})
    with pytest.raises(OutOfRange):
        prompts.write_storyline_schema(0)


def test_narrate_schema_shape():
    spec = prompts.narrate_schema()
    doc = {"paragraphs": "One.\nTwo.", "button_text_1": "Stay", "button_text_2": "Go"}
    assert valid(spec, doc)
    assert not valid(spec, {"paragraphs": "One."})
    assert not valid(spec, dict(doc, extra="x"))


def test_schema_json_is_canonical_single_line():
    spec = prompts.write_storyline_schema(2)
    text = prompts.schema_json(spec)
    assert "\n" not in text
    assert text == prompts.schema_json(prompts.write_storyline_schema(2))
    assert json.loads(text) == spec.schema_document


def test_base_schemas_are_not_mutated_by_specialization():
    first = prompts.schema_json(prompts.key_events_schema(5))
    prompts.key_events_schema(18)
    assert prompts.schema_json(prompts.key_events_schema(5)) == first


def test_pack_digest_is_stable():
    a = prompts.pack_digest()
    assert a == prompts.pack_digest()
    assert len(a) == 64
    int(a, 16)
