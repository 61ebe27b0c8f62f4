// Session engine for exported story games. No DOM in here: the UI layer
// and the test walker both drive the same functions.

export type Choice = {
    label: string;
    target: string; // passage id, or the literal "END"
    kind: "original" | "alternate";
};

export type Passage = {
    paragraphs: string[];
    choices: Choice[];
};

export type Game = {
    title: string;
    char_name: string;
    start: string;
    passages: Record<string, Passage>;
};

export class GameFormatError extends Error {}

const END = "END";

function fail(message: string): never {
    throw new GameFormatError(message);
}

function isStringArray(value: unknown): value is string[] {
    return Array.isArray(value) && value.every((item) => typeof item === "string");
}

/**
 * Parse and validate a game document. Everything the player relies on is
 * checked here so the UI can treat a loaded game as well formed.
 */
export function loadGame(text: string): Game {
    if (!text.trim()) fail("the file is empty");
    let doc: unknown;
    try {
        doc = JSON.parse(text);
    } catch (err) {
        fail(`not valid JSON: ${(err as Error).message}`);
    }
    if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
        fail("the top level must be an object");
    }
    const game = doc as Record<string, unknown>;
    if (typeof game.title !== "string") fail("missing title");
    if (typeof game.char_name !== "string") fail("missing char_name");
    if (typeof game.start !== "string") fail("missing start");
    if (typeof game.passages !== "object" || game.passages === null) {
        fail("missing passages");
    }
    const passages = game.passages as Record<string, unknown>;
    const ids = Object.keys(passages);
    if (ids.length === 0) fail("passages is empty");
    if (!(game.start in passages)) fail(`start passage ${game.start} is missing`);

    for (const id of ids) {
        const passage = passages[id] as Record<string, unknown>;
        if (typeof passage !== "object" || passage === null) {
            fail(`passage ${id} must be an object`);
        }
        if (!isStringArray(passage.paragraphs) || passage.paragraphs.length === 0) {
            fail(`passage ${id} needs at least one paragraph`);
        }
        if (!Array.isArray(passage.choices) || passage.choices.length !== 2) {
            fail(`passage ${id} must offer exactly two choices`);
        }
        for (const raw of passage.choices) {
            const choice = raw as Record<string, unknown>;
            if (typeof choice.label !== "string" || !choice.label.trim()) {
                fail(`passage ${id} has a choice without a label`);
            }
            if (choice.kind !== "original" && choice.kind !== "alternate") {
                fail(`passage ${id} has a choice with kind ${String(choice.kind)}`);
            }
            if (typeof choice.target !== "string") {
                fail(`passage ${id} has a choice without a target`);
            }
            if (choice.target !== END && !(choice.target in passages)) {
                fail(`passage ${id} links to unknown passage ${choice.target}`);
            }
        }
        // option 1 is always the original decision, option 2 the alternate
        const kinds = (passage.choices as Choice[]).map((c) => c.kind);
        if (kinds[0] !== "original" || kinds[1] !== "alternate") {
            fail(`passage ${id} choices must be ordered original, alternate`);
        }
    }
    return game as unknown as Game;
}

// --- Session state ---

export type Step = {
    passageId: string;
    option: 1 | 2;
};

export type Session = {
    game: Game;
    steps: Step[];
    at: string | null; // null once an ending was reached
};

export function startSession(game: Game): Session {
    return { game, steps: [], at: game.start };
}

export function choose(session: Session, option: 1 | 2): Session {
    if (session.at === null) return session; // ending screen has no choices
    const passage = session.game.passages[session.at];
    const picked = passage.choices[option - 1];
    const steps = session.steps.concat([{ passageId: session.at, option }]);
    return {
        game: session.game,
        steps,
        at: picked.target === END ? null : picked.target,
    };
}

export function undo(session: Session): Session {
    const last = session.steps[session.steps.length - 1];
    if (!last) return session; // undo at the start does nothing
    return {
        game: session.game,
        steps: session.steps.slice(0, -1),
        at: last.passageId,
    };
}

export function restart(session: Session): Session {
    return startSession(session.game);
}

function stepChoice(session: Session, step: Step): Choice {
    return session.game.passages[step.passageId].choices[step.option - 1];
}

/** Labels of every decision taken so far, oldest first. */
export function breadcrumb(session: Session): string[] {
    return session.steps.map((step) => stepChoice(session, step).label);
}

/** One O or A per decision taken, the same encoding the CLI inspector reads. */
export function choiceVector(session: Session): string {
    return session.steps.map((step) => (step.option === 1 ? "O" : "A")).join("");
}

/** Replay a choice vector from the start. Rejects letters outside O/A. */
export function applyVector(game: Game, vector: string): Session {
    let session = startSession(game);
    for (const letter of vector) {
        if (letter !== "O" && letter !== "A") {
            fail(`choice vector may contain only O/A, got '${letter}'`);
        }
        if (session.at === null) {
            fail("choice vector continues past an ending");
        }
        session = choose(session, letter === "O" ? 1 : 2);
    }
    return session;
}

// --- Exhaustive walker ---

export type Run = {
    labels: string[];
    vector: string;
    endingId: string; // passage whose choice led to END
};

/**
 * Depth-first traversal of every playthrough, option 1 before option 2.
 * Throws on cycles, so a game that loads and walks has no dead links.
 */
export function walkGame(game: Game): Run[] {
    const runs: Run[] = [];
    const walk = (id: string, trail: string[], labels: string[], vector: string) => {
        if (trail.includes(id)) fail(`cycle through passage ${id}`);
        const passage = game.passages[id];
        for (const [index, choice] of passage.choices.entries()) {
            const nextLabels = labels.concat([choice.label]);
            const nextVector = vector + (index === 0 ? "O" : "A");
            if (choice.target === END) {
                runs.push({ labels: nextLabels, vector: nextVector, endingId: id });
            } else {
                walk(choice.target, trail.concat([id]), nextLabels, nextVector);
            }
        }
    };
    walk(game.start, [], [], "");
    return runs;
}
