"""Rebuild the recorded Iron Man cassette behind the replay test suite.

A handful of requests get pinned, hand-checked responses: the six-node film
tree, the extracted plot points, the branch prompt for the captivity node,
that branch's fifteen-event alternate timeline, and the narration for the
same node. Everything else falls through to the deterministic in-process
story model. The full generate run is recorded, then replayed once to prove
the cassette covers it.

Rerun after any change that shifts request fingerprints (prompt text,
schemas, request defaults):

    python3 tools/build_demo_cassette.py
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from forktale.fakemodel import FakeStoryModel
from forktale.gateway import (
    Cassette,
    CompletionRequest,
    Gateway,
    MockBackend,
    RecordBackend,
    ReplayBackend,
)
from forktale.narrator import Narrator, NodeNarration
from forktale.pipeline import Pipeline
from forktale.prompts import Stage
from forktale.tree import (
    BranchingPlotTree,
    DecisionKind,
    dump_tree,
    enumerate_storylines,
    errors_only,
    validate,
)

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_OUT = REPO_ROOT / "tests" / "fixtures" / "ironman" / "cassette.json"
PLOT_PATH = REPO_ROOT / "tests" / "fixtures" / "ironman" / "plot.txt"

CHAR_NAME = "Tony Stark"
TITLE = "Iron Man"
NUM_NODES = 6

FILM_TREE = {
    "node_1": {
        "state": "Tony Stark is a wealthy genius who manufactures weapons.",
        "goal": "To demonstrate the new Jericho missile in Afghanistan and manage his company's reputation.",
        "decision": "Tony Stark decides to go to Afghanistan for the demonstration.",
        "edgeEvents": [
            "Tony Stark decides to go to Afghanistan for the demonstration.",
            "Stark is critically wounded and captured by terrorists who demand he build a Jericho missile for them.",
            "Stark is in captivity with a life-threatening injury.",
        ],
        "alternate_decision": "Tony Stark decides to send a representative to demonstrate the Jericho missile, while he monitors from the US.",
    },
    "node_2": {
        "state": "Stark is in captivity with a life-threatening injury.",
        "goal": "To survive and escape captivity without building the missile for the terrorists.",
        "decision": "Tony Stark decides to build an armored suit instead of the missile.",
        "edgeEvents": [
            "Tony Stark decides to build an armored suit instead of the missile.",
            "Stark and Yinsen work on the suit secretly, using available resources.",
            "Stark escapes using the suit but Yinsen dies.",
        ],
        "alternate_decision": "Tony Stark decides to build the missile as requested, planning to escape afterward.",
    },
    "node_3": {
        "state": "Stark escapes using the suit but Yinsen dies.",
        "goal": "To stop Stark Industries from manufacturing weapons that end up in the wrong hands.",
        "decision": "Tony Stark decides to stop manufacturing weapons at Stark Industries.",
        "edgeEvents": [
            "Tony Stark decides to stop manufacturing weapons at Stark Industries.",
            "Stark returns home and announces the cessation of weapon manufacturing.",
            "Obadiah Stane opposes Stark's new directive.",
        ],
        "alternate_decision": "Tony Stark decides to increase security and oversight of weapon sales instead of halting production.",
    },
    "node_4": {
        "state": "Obadiah Stane opposes Stark's new directive.",
        "goal": "To find evidence of Stane's betrayal and stop him.",
        "decision": "Tony Stark decides to improve his suit and find proof of Stane's treachery.",
        "edgeEvents": [
            "Tony Stark decides to improve his suit and find proof of Stane's treachery.",
            "Stark saves Yinsen's village and discovers Stane's involvement with the terrorists.",
            "Stark realizes Stane's intentions and confronts him.",
        ],
        "alternate_decision": "Tony Stark decides to confront Stane directly about his suspicions without gathering evidence.",
    },
    "node_5": {
        "state": "Stark realizes Stane's intentions and confronts him.",
        "goal": "To stop Stane from using the technology for evil and protect his legacy.",
        "decision": "Tony Stark decides to fight Stane, who has built his own suit.",
        "edgeEvents": [
            "Tony Stark decides to fight Stane, who has built his own suit.",
            "During their confrontation, Stark instructs Potts to overload the arc reactor.",
            "Stane is defeated but Stark's identity as Iron Man is revealed.",
        ],
        "alternate_decision": "Tony Stark decides to seek the help of authorities and expose Stane publicly without a direct confrontation.",
    },
    "node_6": {
        "state": "Stane is defeated but Stark's identity as Iron Man is revealed.",
        "goal": "To manage the fallout of his identity as Iron Man being revealed.",
        "decision": "Tony Stark decides to publicly admit he is Iron Man.",
        "edgeEvents": [
            "Tony Stark decides to publicly admit he is Iron Man.",
            "At a press conference, Stark announces his identity, contrasting the offered cover story.",
            "Stark adjusts to his new role as a publicly known superhero.",
        ],
        "alternate_decision": "Tony Stark decides to stick to the cover story provided and hide his identity as Iron Man.",
    },
}

PLOT_POINTS = {
    "inciting_incident": {
        "eventId": 2,
        "event": "Tony is critically wounded in an ambush by terrorists using Stark Industries weapons",
    },
    "crisis": {
        "eventId": 12,
        "event": "Stane steals Stark's arc reactor, leaving him to die.",
    },
    "climax": {
        "eventId": 14,
        "event": "Stark survives using his original reactor, and battles Stane at Stark Industries",
    },
}

BRANCH_PROMPT = (
    "Using the original storyline as a reference, write an alternate storyline that "
    "branches out at event 4 with Tony Stark deciding to build the missile as "
    "requested, planning to escape afterward, instead of deciding to build an armored "
    "suit. As you craft this new narrative, consider and incorporate answers to the "
    "following thought-provoking questions:\n"
    "\n"
    "1. How would building the missile instead of the armored suit impact Stark's "
    "inventive strategy for escape and survival?\n"
    "2. In what ways could this decision affect Stark's moral journey and his "
    "relationship with Yinsen?\n"
    "3. Would Stark still have the motivation to stop manufacturing weapons upon his "
    "return, and how would this decision manifest?\n"
    "4. How would Stark's eventual discovery of Stane's betrayal and eventual "
    "confrontation play out differently?\n"
    "5. How might Stark approach his role as a superhero and his public persona in "
    "this alternate scenario?\n"
    "\n"
    "Describe what an ideal alternate storyline should look like, encapsulating "
    "Stark's complex character development, thrilling escape, consequential actions "
    "upon returning home, and a nuanced showdown with Stane. Then, output "
    "the alternate storyline as a list of 15 events, starting with Tony Stark decides "
    "to build the missile as requested, planning to escape afterward. Ensure the "
    "storyline comprehensively covers new challenges Stark faces, key decisions he "
    "makes to overcome these challenges, and how these contribute to moving the story "
    "forward."
)

BRANCH_META = {
    "branching_event_number": 4,
    "original_decision": FILM_TREE["node_2"]["decision"],
    "alternate_decision": FILM_TREE["node_2"]["alternate_decision"],
    "new_story_length": 15,
    "major_plot_points": {
        "crisis": PLOT_POINTS["crisis"],
        "climax": PLOT_POINTS["climax"],
    },
    "prompt": BRANCH_PROMPT,
}

ALT_EVENTS = [
    "Tony Stark decides to build the missile as requested, planning to escape afterward.",
    "Stark secretly designs a fail-safe within the missile to ensure it won't detonate.",
    "During the missile building, Stark and Yinsen form a deep bond, discussing the impact of weapons on the world.",
    "Yinsen shares his technical knowledge, aiding Stark in creating a concealed, miniaturized drone for their escape.",
    "They initiate their escape using the drone to create a diversion. Yinsen sacrifices himself in a moment of distraction for Stark to flee.",
    "Haunted by Yinsen's sacrifice, Stark is rescued and returns home with a heavy conscience.",
    "Stark decides to halt weapon production at Stark Industries, facing internal opposition.",
    "Discovering Stane's involvement with terrorists, Stark is conflicted over his role in weapon manufacturing.",
    "Stark dedicates himself to dismantling the weapons his company has sold illegally, using technology and intelligence.",
    "Using the drone technology, Stark develops non-lethal weapons and countermeasures against illicit arms dealing.",
    "Stark confronts Stane, who reveals his grander ambitions to monopolize global armaments.",
    "Stane, having developed his own advanced weaponry, threatens Stark and his ideals.",
    "Stark employs his drone army and ingenuity in a non-lethal confrontation against Stane.",
    "With Potts' help, they expose Stane's dealings, leveraging Stark Industries' resources to do so.",
    "Stark transforms Stark Industries into a force for global peacekeeping, maintaining a private life while secretly advising on threats.",
]

CAPTIVITY_NARRATION = "\n\n".join(
    [
        "You've decided to go to Afghanistan for the demonstration of the Jericho "
        "missile, your company's latest and most advanced weapon system. The "
        "demonstration goes off without a hitch, showcasing the devastating power of "
        "what you've created. However, the trip takes a dark turn when your convoy is "
        "ambushed. The attackers are relentless, and amidst the chaos, you're "
        "critically wounded, a piece of shrapnel lodging near your heart.",
        "In the aftermath, you find yourself captured and imprisoned by the terrorist "
        "group known as the Ten Rings. They're well aware of who you are and the "
        "deadly prowess of your weapons. They have a simple demand: build them a "
        "Jericho missile. But the irony of your situation doesn't escape you – "
        "the very weapons you've profited from are now a direct threat to your life, "
        "and potentially countless others.",
        "Now, imprisoned by the Ten Rings in a cave in Afghanistan, you're faced with "
        "the gravest challenge yet. Your captors want a weapon, but you see an "
        "opportunity - not just for escape, but to make a statement against those "
        "who'd use your creations for terror. You must decide how to use your genius "
        "and resources at hand not just to survive, but to fight back.",
    ]
)

CAPTIVITY_BUTTONS = ("Build a suit of armor", "Sabotage the missile")

# request sniffs; each must match exactly one request in the whole run
PLOT_SNIFF = "travels to Afghanistan to show off his company's newest missile"
ORIGINAL_EVENTS_SNIFF = "18. Stark adjusts to his new role as a publicly known superhero."
META_SNIFF = "at event 4 if Tony Stark Tony Stark decides to build the missile as requested"
WRITE_SNIFF = "at event 4 with Tony Stark deciding to build the missile as requested"
NARRATE_STATE_SNIFF = '"state": "Stark is in captivity with a life-threatening injury."'
NARRATE_DECISION_SNIFF = (
    '"decision": "Tony Stark decides to build an armored suit instead of the missile."'
)


def _dumps(document: dict) -> str:
    return json.dumps(document, ensure_ascii=False, indent=1)


class PinnedOverlay:
    """Answers the hand-checked requests; everything else goes to the fake."""

    def __init__(self) -> None:
        self._fake = FakeStoryModel()
        self.pinned_hits: dict[str, int] = {}

    def _hit(self, name: str, document: dict) -> str:
        self.pinned_hits[name] = self.pinned_hits.get(name, 0) + 1
        return _dumps(document)

    def __call__(self, request: CompletionRequest) -> str:
        user = "\n".join(m.content for m in request.messages if m.role == "user")
        stage = request.schema.stage
        if stage is Stage.PLOT_TO_TREE and PLOT_SNIFF in user:
            return self._hit("tree", FILM_TREE)
        if stage is Stage.KEY_EVENTS and ORIGINAL_EVENTS_SNIFF in user:
            return self._hit("key_events", PLOT_POINTS)
        if stage is Stage.META_PROMPT and META_SNIFF in user:
            return self._hit("meta_prompt", BRANCH_META)
        if stage is Stage.WRITE_STORYLINE and WRITE_SNIFF in user:
            events = {str(i): text for i, text in enumerate(ALT_EVENTS, start=1)}
            return self._hit("storyline", {"events": events})
        if (
            stage is Stage.NARRATE
            and NARRATE_STATE_SNIFF in user
            and NARRATE_DECISION_SNIFF in user
        ):
            return self._hit(
                "narration",
                {
                    "paragraphs": CAPTIVITY_NARRATION,
                    "button_text_1": CAPTIVITY_BUTTONS[0],
                    "button_text_2": CAPTIVITY_BUTTONS[1],
                },
            )
        return self._fake(request)


def _generate(gateway: Gateway, plot: str) -> tuple[BranchingPlotTree, dict[str, NodeNarration]]:
    pipeline = Pipeline(gateway)
    tree = pipeline.initialize_tree(plot, CHAR_NAME, NUM_NODES, TITLE)
    tree = pipeline.expand_tree(tree)
    narrations = Narrator(gateway).narrate_tree(tree)
    return tree, narrations


def _check_goldens(tree: BranchingPlotTree, narrations: dict[str, NodeNarration]) -> None:
    assert len(tree.nodes) == 2**NUM_NODES - 1, f"node count {len(tree.nodes)}"
    endings = len(enumerate_storylines(tree))
    assert endings == 2**NUM_NODES, f"ending count {endings}"
    assert not errors_only(validate(tree, expect_complete=True))

    for name, fields in FILM_TREE.items():
        node = tree.node(name)
        assert node.state == fields["state"], name
        assert node.goal == fields["goal"], name
        assert node.key_decision == fields["decision"], name
        assert node.alternate_decision == fields["alternate_decision"], name

    alternate = tree.edge("node_2", DecisionKind.ALTERNATE)
    assert list(alternate.events) == ALT_EVENTS[:3], "fused branch edge"

    captivity = narrations["node_2"]
    assert captivity.paragraphs == CAPTIVITY_NARRATION
    assert (captivity.button_original, captivity.button_alternate) == CAPTIVITY_BUTTONS


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT, help="cassette destination")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    plot = PLOT_PATH.read_text(encoding="utf-8").strip()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.unlink(missing_ok=True)

    overlay = PinnedOverlay()
    cassette = Cassette(args.out)
    gateway = Gateway(backend=RecordBackend(MockBackend(overlay), cassette))
    tree, narrations = _generate(gateway, plot)
    _check_goldens(tree, narrations)

    expected_hits = {"tree": 1, "key_events": 1, "meta_prompt": 1, "storyline": 1, "narration": 1}
    assert overlay.pinned_hits == expected_hits, overlay.pinned_hits
    # identical branches may repeat a fingerprint, but never by much
    assert gateway.calls - len(cassette) < 32, (len(cassette), gateway.calls)

    replay_gateway = Gateway(backend=ReplayBackend(Cassette(args.out)))
    replay_tree, replay_narrations = _generate(replay_gateway, plot)
    _check_goldens(replay_tree, replay_narrations)
    assert dump_tree(replay_tree) == dump_tree(tree), "replay drifted from recording"
    assert replay_gateway.calls == gateway.calls, (replay_gateway.calls, gateway.calls)

    print(f"recorded {len(cassette)} responses ({gateway.calls} calls) to {args.out}")
    print(f"tree: {len(tree.nodes)} nodes, {len(enumerate_storylines(tree))} endings")
    return 0


if __name__ == "__main__":
    sys.exit(main())
