"""Strict checker and exhaustive walker for the exported Ink subset.

The subset is knots, bracketed choices, diverts, and END. Anything else is a
parse error: the point is to prove exports stay inside the subset, not to run
full Ink.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ParseError

END = "END"

_KNOT_HEADER = re.compile(r"^===\s*([A-Za-z_][A-Za-z0-9_]*)\s*===$")
_DIVERT = re.compile(r"^->\s*([A-Za-z_][A-Za-z0-9_]*)$")
_CHOICE = re.compile(r"^\*\s*\[(?P<label>[^\[\]]*)\]\s*(?:->\s*(?P<target>[A-Za-z_][A-Za-z0-9_]*))?$")


@dataclass
class InkChoice:
    label: str
    target: str
    body: list[str] = field(default_factory=list)


@dataclass
class InkKnot:
    name: str
    body: list[str] = field(default_factory=list)
    choices: list[InkChoice] = field(default_factory=list)


@dataclass
class InkScript:
    start: str
    knots: dict[str, InkKnot]


def parse_ink(text: str) -> InkScript:
    start: str | None = None
    knots: dict[str, InkKnot] = {}
    knot: InkKnot | None = None
    open_choice: InkChoice | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        indented = raw[:1].isspace()
        line = raw.strip()

        if indented:
            # only a choice body may be indented
            if open_choice is None:
                raise ParseError(f"line {lineno}: indented text outside a choice")
            divert = _DIVERT.match(line)
            if divert:
                open_choice.target = divert.group(1)
                open_choice = None
            else:
                open_choice.body.append(line)
            continue

        header = _KNOT_HEADER.match(line)
        if header:
            if open_choice is not None:
                raise ParseError(f"line {lineno}: choice has no divert before next knot")
            name = header.group(1)
            if name in knots:
                raise ParseError(f"line {lineno}: duplicate knot {name!r}")
            knot = InkKnot(name)
            knots[name] = knot
            continue

        divert = _DIVERT.match(line)
        if divert:
            if start is None and knot is None:
                start = divert.group(1)
                continue
            raise ParseError(f"line {lineno}: stray divert outside a choice")

        choice = _CHOICE.match(line)
        if choice:
            if knot is None:
                raise ParseError(f"line {lineno}: choice before any knot")
            if open_choice is not None:
                raise ParseError(f"line {lineno}: previous choice has no divert")
            parsed = InkChoice(choice.group("label"), choice.group("target") or "")
            knot.choices.append(parsed)
            if not parsed.target:
                open_choice = parsed
            continue

        # plain narration line
        if knot is None:
            raise ParseError(f"line {lineno}: narration before any knot")
        if knot.choices:
            raise ParseError(f"line {lineno}: narration after choices in knot {knot.name!r}")
        knot.body.append(line)

    if open_choice is not None:
        raise ParseError("last choice has no divert")
    if start is None:
        raise ParseError("script must open with a divert to its first knot")
    if start not in knots:
        raise ParseError(f"opening divert targets unknown knot {start!r}")
    for knot in knots.values():
        if not knot.choices:
            raise ParseError(f"knot {knot.name!r} has no choices")
        for choice in knot.choices:
            if not choice.target:
                raise ParseError(f"knot {knot.name!r}: choice {choice.label!r} has no divert")
            if choice.target != END and choice.target not in knots:
                raise ParseError(
                    f"knot {knot.name!r}: divert to unknown knot {choice.target!r}"
                )
    return InkScript(start, knots)


@dataclass(frozen=True)
class Playthrough:
    """One complete run: the labels clicked and the rooms visited."""

    labels: tuple[str, ...]
    visited: tuple[str, ...]


def walk_ink(script: InkScript) -> list[Playthrough]:
    """Every label sequence from start to END, choices taken in order."""
    out: list[Playthrough] = []
    limit = len(script.knots) + 1

    def step(name: str, labels: tuple[str, ...], visited: tuple[str, ...]) -> None:
        if len(visited) >= limit:
            raise ParseError(f"cycle detected through knot {name!r}")
        knot = script.knots[name]
        visited = visited + (name,)
        for choice in knot.choices:
            if choice.target == END:
                out.append(Playthrough(labels + (choice.label,), visited))
            else:
                step(choice.target, labels + (choice.label,), visited)

    step(script.start, (), ())
    return out


def walk_game(doc: dict) -> list[Playthrough]:
    """Same traversal over the game JSON document."""
    passages = doc["passages"]
    out: list[Playthrough] = []
    limit = len(passages) + 1

    def step(passage_id: str, labels: tuple[str, ...], visited: tuple[str, ...]) -> None:
        if len(visited) >= limit:
            raise ParseError(f"cycle detected through passage {passage_id!r}")
        if passage_id not in passages:
            raise ParseError(f"choice targets unknown passage {passage_id!r}")
        passage = passages[passage_id]
        visited = visited + (passage_id,)
        for choice in passage["choices"]:
            if choice["target"] == END:
                out.append(Playthrough(labels + (choice["label"],), visited))
            else:
                step(choice["target"], labels + (choice["label"],), visited)

    step(doc["start"], (), ())
    return out
