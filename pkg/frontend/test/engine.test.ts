import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import {
    Game,
    GameFormatError,
    applyVector,
    breadcrumb,
    choiceVector,
    choose,
    loadGame,
    restart,
    startSession,
    undo,
    walkGame,
} from "../src/game.js";
import { decodePlaythrough, encodePlaythrough } from "../src/hash.js";

const fixturePath = fileURLToPath(new URL("./fixtures/mock_n3_game.json", import.meta.url));
const fixtureText = readFileSync(fixturePath, "utf-8");

function fixture(): Game {
    return loadGame(fixtureText);
}

function mutated(change: (doc: any) => void): string {
    const doc = JSON.parse(fixtureText);
    change(doc);
    return JSON.stringify(doc);
}

describe("loadGame", () => {
    it("accepts the exporter fixture", () => {
        const game = fixture();
        expect(game.title).toBe("The Hourglass");
        expect(game.char_name).toBe("Iris Vane");
        expect(game.start in game.passages).toBe(true);
        expect(Object.keys(game.passages).length).toBe(7);
    });

    it.each<[string, string, string]>([
        ["empty file", "", "empty"],
        ["not json", "this is prose, not JSON", "not valid JSON"],
        ["top-level array", "[1, 2]", "object"],
        ["missing title", mutated((d) => delete d.title), "title"],
        ["unknown start", mutated((d) => { d.start = "node_99"; }), "missing"],
        ["dangling target", mutated((d) => {
            d.passages[d.start].choices[0].target = "nowhere";
        }), "unknown passage"],
        ["one choice", mutated((d) => {
            d.passages[d.start].choices.pop();
        }), "exactly two"],
        ["swapped kinds", mutated((d) => {
            d.passages[d.start].choices.reverse();
        }), "ordered original, alternate"],
        ["blank label", mutated((d) => {
            d.passages[d.start].choices[0].label = "  ";
        }), "without a label"],
        ["prose paragraphs", mutated((d) => {
            d.passages[d.start].paragraphs = "just a string";
        }), "paragraph"],
    ])("rejects %s", (_name, text, needle) => {
        expect(() => loadGame(text)).toThrowError(GameFormatError);
        expect(() => loadGame(text)).toThrowError(needle);
    });
});

describe("session", () => {
    it("starts at the start passage with an empty trail", () => {
        const session = startSession(fixture());
        expect(session.at).toBe(session.game.start);
        expect(session.steps).toEqual([]);
        expect(choiceVector(session)).toBe("");
    });

    it("follows the chosen edge", () => {
        const game = fixture();
        let session = startSession(game);
        const second = game.passages[game.start].choices[1];
        session = choose(session, 2);
        expect(session.at).toBe(second.target);
        expect(breadcrumb(session)).toEqual([second.label]);
        expect(choiceVector(session)).toBe("A");
    });

    it("undo at the start is a no-op", () => {
        const session = startSession(fixture());
        expect(undo(session)).toBe(session);
    });

    it("undo steps back one passage", () => {
        const game = fixture();
        let session = choose(startSession(game), 1);
        session = choose(session, 2);
        session = undo(session);
        expect(session.at).toBe(game.passages[game.start].choices[0].target);
        expect(choiceVector(session)).toBe("O");
    });

    it("undo returns from the ending screen", () => {
        const game = fixture();
        let session = applyVector(game, "OOO");
        expect(session.at).toBeNull();
        session = undo(session);
        expect(session.at).not.toBeNull();
        expect(choiceVector(session)).toBe("OO");
    });

    it("choosing on the ending screen changes nothing", () => {
        const session = applyVector(fixture(), "AAA");
        expect(choose(session, 1)).toBe(session);
    });

    it("restart clears the trail", () => {
        const game = fixture();
        const session = restart(choose(startSession(game), 2));
        expect(session.at).toBe(game.start);
        expect(session.steps).toEqual([]);
    });
});

describe("choice vectors", () => {
    it("replays every walker run to its ending", () => {
        const game = fixture();
        for (const run of walkGame(game)) {
            const session = applyVector(game, run.vector);
            expect(session.at).toBeNull();
            expect(breadcrumb(session)).toEqual(run.labels);
        }
    });

    it("rejects letters outside O/A", () => {
        expect(() => applyVector(fixture(), "OAX")).toThrowError("only O/A");
    });

    it("rejects a vector that runs past the ending", () => {
        expect(() => applyVector(fixture(), "OAOA")).toThrowError("past an ending");
    });
});

describe("walkGame", () => {
    it("finds all eight length-three runs", () => {
        const runs = walkGame(fixture());
        expect(runs.length).toBe(8);
        const vectors = runs.map((r) => r.vector).sort();
        const all = ["AAA", "AAO", "AOA", "AOO", "OAA", "OAO", "OOA", "OOO"];
        expect(vectors).toEqual(all);
        for (const run of runs) expect(run.labels.length).toBe(3);
    });

    it("throws on a cycle instead of spinning", () => {
        const text = mutated((d) => {
            for (const passage of Object.values<any>(d.passages)) {
                for (const choice of passage.choices) {
                    if (choice.target === "END") choice.target = d.start;
                }
            }
        });
        const game = loadGame(text);
        expect(() => walkGame(game)).toThrowError("cycle");
    });
});

describe("playthrough hash", () => {
    it("round-trips vectors, the empty one included", () => {
        for (const vector of ["", "O", "OAO", "AAAAAA"]) {
            expect(decodePlaythrough(encodePlaythrough(vector))).toBe(vector);
        }
    });

    it("tolerates a missing leading #", () => {
        expect(decodePlaythrough("p=OA")).toBe("OA");
    });

    it.each(["", "#", "#other", "#q=OA", "#p=OAX", "#p=oa"])(
        "returns null for %j", (hash) => {
            expect(decodePlaythrough(hash)).toBeNull();
        },
    );
});
