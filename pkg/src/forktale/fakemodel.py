"""Deterministic in-process stand-in for the chat model.

Answers every stage by parsing the rendered prompt it was given, so a run
needs no network and the same request always yields the same response. Story
text is synthesized from hash-seeded word banks; structural fields (counts,
decisions, pinned bookkeeping) are read back out of the prompt and schema to
keep the whole pipeline self-consistent.
"""

from __future__ import annotations

import hashlib
import json
import re

from .errors import ConfigError
from .gateway import CompletionRequest
from .prompts import Stage

_NUMBERED_LINE = re.compile(r"^\s*(\d+)\.\s+(.*\S)\s*$")

_VERBS = (
    "confront the rival openly",
    "slip away under cover of night",
    "bargain with the gatekeeper",
    "destroy the hidden ledger",
    "recruit an unlikely ally",
    "follow the coded map",
    "expose the conspiracy in public",
    "guard the old bridge alone",
)
_TURNS = (
    "The plan collapses at the worst possible moment.",
    "An old friend arrives with troubling news.",
    "A storm forces everyone off the road.",
    "The pursuers lose the trail at the river.",
    "A stranger repays a forgotten debt.",
    "The locked door finally gives way.",
    "Word of the deed spreads through the town.",
    "A signal fire burns on the far hill.",
)
_STATES = (
    "is stranded far from home with few supplies",
    "is celebrated in town but watched closely",
    "is hiding in the hills while rumors spread",
    "is back at the workshop with a new plan",
    "is cornered and out of easy options",
    "is trusted now by people who once doubted",
    "is carrying proof that could change everything",
    "is waiting at the meeting place alone",
)
_GOALS = (
    "To reach safety before the search resumes.",
    "To win back the trust that was lost.",
    "To finish what was started at any cost.",
    "To protect the people left behind.",
    "To learn who set the trap.",
    "To turn rivals into allies.",
)


def _seed(*parts: str) -> int:
    digest = hashlib.sha256(chr(0).join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _pick(bank: tuple[str, ...], seed: int, salt: int) -> str:
    return bank[(seed ^ (salt * 0x9E3779B9)) % len(bank)]


def _strip_numbering(line: str) -> str:
    match = _NUMBERED_LINE.match(line)
    return match.group(2) if match else line.strip()


def _last_user_text(request: CompletionRequest) -> str:
    for message in reversed(request.messages):
        if message.role == "user":
            return message.content
    raise ConfigError("request has no user message")


def _first_user_text(request: CompletionRequest) -> str:
    for message in request.messages:
        if message.role == "user":
            return message.content
    raise ConfigError("request has no user message")


class FakeStoryModel:
    """Callable backend model: CompletionRequest -> raw JSON text."""

    def __call__(self, request: CompletionRequest) -> str:
        stage = request.schema.stage
        if stage is Stage.PLOT_TO_TREE:
            return self._plot_to_tree(request)
        if stage is Stage.KEY_EVENTS:
            return self._key_events(request)
        if stage is Stage.META_PROMPT:
            return self._meta_prompt(request)
        if stage is Stage.WRITE_STORYLINE:
            return self._write_storyline(request)
        if stage is Stage.NARRATE:
            return self._narrate(request)
        raise ConfigError(f"unsupported stage {stage!r}")

    # -- plot-to-tree ------------------------------------------------------

    def _plot_to_tree(self, request: CompletionRequest) -> str:
        user = _first_user_text(request)
        head, marker, _ = user.partition("\nSummarize the plot above into a plot tree of ")
        if not marker:
            raise ConfigError("plot-to-tree prompt missing its instruction line")
        plot = head
        count_match = re.search(
            r"Summarize the plot above into a plot tree of (at most 6|\d+) nodes", user
        )
        char_match = re.search(r"state and goal of (.+?), and the key decision", user)
        if count_match is None or char_match is None:
            raise ConfigError("plot-to-tree prompt missing count or character")
        char = char_match.group(1)
        lines = [_strip_numbering(line) for line in plot.splitlines() if line.strip()]

        if count_match.group(1).isdigit():
            wanted = int(count_match.group(1))
            if len(lines) == wanted * 3:
                return self._tree_from_triples(char, lines)
        else:
            wanted = 3 + _seed(plot, char) % 4
        return self._tree_from_scratch(char, plot, wanted)

    def _tree_from_triples(self, char: str, lines: list[str]) -> str:
        count = len(lines) // 3
        seed = _seed(char, *lines)
        doc: dict[str, dict] = {}
        for i in range(1, count + 1):
            triple = lines[(i - 1) * 3 : i * 3]
            if i == 1:
                state = f"{char} weighs the situation before acting."
            else:
                state = lines[(i - 1) * 3 - 1]
            alt_verb = _pick(_VERBS, seed, i + 17)
            alternate = f"{char} decides to {alt_verb} instead."
            if alternate == triple[0]:
                alt_verb = _VERBS[(_VERBS.index(alt_verb) + 1) % len(_VERBS)]
                alternate = f"{char} decides to {alt_verb} instead."
            doc[f"node_{i}"] = {
                "state": state,
                "goal": _pick(_GOALS, seed, i),
                "decision": triple[0],
                "edgeEvents": triple,
                "alternate_decision": alternate,
            }
        return json.dumps(doc, ensure_ascii=False)

    def _tree_from_scratch(self, char: str, plot: str, count: int) -> str:
        seed = _seed(plot, char, str(count))
        doc: dict[str, dict] = {}
        state = f"{char} {_pick(_STATES, seed, 0)}."
        for i in range(1, count + 1):
            verb = _pick(_VERBS, seed, i * 2)
            alt_verb = _pick(_VERBS, seed, i * 2 + 1)
            if alt_verb == verb:
                alt_verb = _VERBS[(_VERBS.index(verb) + 1) % len(_VERBS)]
            decision = f"{char} decides to {verb}."
            next_state = f"{char} {_pick(_STATES, seed, i * 3 + 2)}."
            doc[f"node_{i}"] = {
                "state": state,
                "goal": _pick(_GOALS, seed, i * 5),
                "decision": decision,
                "edgeEvents": [decision, _pick(_TURNS, seed, i * 7), next_state],
                "alternate_decision": f"{char} decides to {alt_verb}.",
            }
            state = next_state
        return json.dumps(doc, ensure_ascii=False)

    # -- key events --------------------------------------------------------

    def _key_events(self, request: CompletionRequest) -> str:
        user = _last_user_text(request)
        events: dict[int, str] = {}
        for line in user.splitlines():
            match = _NUMBERED_LINE.match(line)
            if match:
                events[int(match.group(1))] = match.group(2)
        if len(events) < 3:
            raise ConfigError("key-events prompt carried fewer than 3 numbered events")
        last = max(events)
        inciting = 1 if last == 3 else 2
        climax = last
        crisis = (inciting + climax) // 2
        doc = {
            "inciting_incident": {"eventId": inciting, "event": events[inciting]},
            "crisis": {"eventId": crisis, "event": events[crisis]},
            "climax": {"eventId": climax, "event": events[climax]},
        }
        return json.dumps(doc, ensure_ascii=False)

    # -- meta-prompt -------------------------------------------------------

    def _meta_prompt(self, request: CompletionRequest) -> str:
        user = _first_user_text(request)
        # decisions are single sentences ending in a period, so ". instead of "
        # marks the template's separator even when a decision itself contains
        # the words "instead of"
        branch_match = re.search(
            r"branches out at event (\d+) if (.+\.) instead of (.+?)\.?$",
            user,
            re.MULTILINE,
        )
        char_match = re.search(r"How would (.+?) make key decisions", user)
        length_match = re.search(r"as a list of (\d+) events that has", user)
        mpp_match = re.search(r"change or replace (\{.*?\})\?", user, re.DOTALL)
        if not (branch_match and char_match and length_match and mpp_match):
            raise ConfigError("meta-prompt request missing expected clauses")
        char = char_match.group(1)
        branching_event = int(branch_match.group(1))
        alternate = branch_match.group(2)
        if alternate.startswith(f"{char} {char} "):
            alternate = alternate[len(char) + 1 :]
        original = branch_match.group(3)
        if not original.endswith("."):
            original += "."
        length = int(length_match.group(1))
        plot_points = json.loads(mpp_match.group(1))
        alt_tail = alternate
        if alt_tail.startswith(f"{char} "):
            alt_tail = alt_tail[len(char) + 1 :]

        prompt = (
            f"Using the original storyline as a reference, write an alternate storyline "
            f"that branches out at event {branching_event} if {char} {alt_tail} "
            f"instead of following the original decision.\n"
            f"Guiding questions to explore:\n"
            f"1. How would the alternate decision change or replace "
            f"{json.dumps(plot_points, ensure_ascii=False)}?\n"
            f"2. How would {char} make key decisions that overcome new challenges "
            f"and propel the story forward?\n"
            f"3. What new obstacles stand in the way once {char} commits to this path?\n"
            f"4. Which allies and rivals change their behavior in response?\n"
            f"5. How does the alternate storyline reach an ending of its own?\n"
            f"An ideal alternate storyline keeps every character recognizable while "
            f"following the new decision to a distinct conclusion.\n"
            f"Output the alternate storyline as a list of {length} events, "
            f"starting with {alternate} Ensure the storyline reads as one "
            f"continuous account."
        )
        doc = {
            "branching_event_number": branching_event,
            "original_decision": original,
            "alternate_decision": alternate,
            "new_story_length": length,
            "major_plot_points": plot_points,
            "prompt": prompt,
        }
        return json.dumps(doc, ensure_ascii=False)

    # -- write storyline ---------------------------------------------------

    def _write_storyline(self, request: CompletionRequest) -> str:
        user = _first_user_text(request)
        events_schema = request.schema.schema_document["properties"]["events"]
        count = events_schema["maxProperties"]
        first_match = re.search(
            r"list of \d+ events, starting with (.+?) Ensure", user, re.DOTALL
        )
        char_match = re.search(r"if (.+?) decides to", user)
        char = char_match.group(1) if char_match else "The protagonist"
        if first_match:
            first_event = " ".join(first_match.group(1).split())
        else:
            first_event = f"{char} decides to take the untried path."
        seed = _seed(user)

        events: dict[str, str] = {"1": first_event}
        for i in range(2, count + 1):
            if i % 3 == 1:
                text = f"{char} decides to {_pick(_VERBS, seed, i)}."
            elif i % 3 == 0:
                text = f"{char} {_pick(_STATES, seed, i)}."
            else:
                text = _pick(_TURNS, seed, i)
            events[str(i)] = text
        return json.dumps({"events": events}, ensure_ascii=False)

    # -- narration ---------------------------------------------------------

    def _narrate(self, request: CompletionRequest) -> str:
        system = request.messages[0].content
        char_match = re.search(r"the player is (.+?)\.\n", system)
        char = char_match.group(1) if char_match else "The protagonist"
        payload = json.loads(_last_user_text(request))
        events = payload.get("events", [])
        state = payload.get("state", "")
        goal = payload.get("goal", "")
        decision = payload.get("decision", "")
        alternate = payload.get("alternate_decision", "")

        paragraphs = [self._second_person(event, char) for event in events]
        tail = f"{self._second_person(state, char)} {self._as_your_goal(goal)}"
        paragraphs.append(tail.strip())
        doc = {
            "paragraphs": "\n".join(paragraphs),
            "button_text_1": self._button(decision, char),
            "button_text_2": self._button(alternate, char),
        }
        return json.dumps(doc, ensure_ascii=False)

    @staticmethod
    def _second_person(text: str, char: str) -> str:
        out = text.replace(f"{char} decides to", "You decide to")
        out = out.replace(f"{char} is", "You are").replace(f"{char} has", "You have")
        out = out.replace(f"{char}'s", "your").replace(char, "you")
        out = re.sub(r"\byou are\b", "you are", out)
        if out and out[0].islower():
            out = out[0].upper() + out[1:]
        return out

    @staticmethod
    def _as_your_goal(goal: str) -> str:
        tail = goal[3:] if goal.startswith("To ") else goal
        tail = tail.rstrip(".")
        return f"Your goal now: {tail}."

    @staticmethod
    def _button(decision: str, char: str) -> str:
        tail = decision
        prefix = f"{char} decides to "
        if tail.startswith(prefix):
            tail = tail[len(prefix) :]
        tail = tail.rstrip(".").strip()
        if not tail:
            tail = "press on"
        return tail[0].upper() + tail[1:]
