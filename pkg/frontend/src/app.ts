/* app.ts - wires the session engine to the page.
   - Loads game JSON from ?src=<path> or from a file picked by the user
   - Renders narration + the two decision buttons per passage
   - Keeps the playthrough in the URL hash so finished runs are shareable
*/

import {
    Game,
    GameFormatError,
    Session,
    applyVector,
    breadcrumb,
    choiceVector,
    choose,
    loadGame,
    restart,
    startSession,
    undo,
    walkGame,
} from "./game.js";
import { decodePlaythrough, encodePlaythrough } from "./hash.js";

export type PlayerHandle = {
    loadFromText: (text: string) => void;
    session: () => Session | null;
};

export function initPlayer(win: Window): PlayerHandle | null {
    const doc = win.document;
    const screen = doc.getElementById("screen");
    if (!screen) return null;
    const titleEl = doc.getElementById("storyTitle");

    let game: Game | null = null;
    let session: Session | null = null;
    let note = "";

    /* ---------------- State changes ---------------- */

    function loadFromText(text: string) {
        note = "";
        try {
            const loaded = loadGame(text);
            walkGame(loaded); // proves every path reaches an ending
            game = loaded;
        } catch (err) {
            game = null;
            session = null;
            renderError(err instanceof GameFormatError
                ? err.message
                : String(err));
            return;
        }
        session = startSession(game);
        const vector = decodePlaythrough(win.location.hash);
        if (vector) {
            try {
                session = applyVector(game, vector);
            } catch {
                note = "The playthrough in the link does not fit this story; starting over.";
            }
        }
        render();
    }

    function step(mutate: (s: Session) => Session) {
        if (!session) return;
        session = mutate(session);
        syncHash();
        render();
    }

    function syncHash() {
        if (!session) return;
        win.history.replaceState(null, "", encodePlaythrough(choiceVector(session)));
    }

    /* ---------------- Rendering ---------------- */

    function render() {
        if (!game || !session) return;
        if (titleEl) titleEl.textContent = game.title;
        if (session.at === null) {
            renderEnding(session);
        } else {
            renderPassage(session, session.at);
        }
    }

    function trailHtml(s: Session): string {
        const labels = breadcrumb(s);
        if (labels.length === 0) return "";
        return `<nav class="trail">${labels.map(escapeHtml).join(" &rsaquo; ")}</nav>`;
    }

    function renderPassage(s: Session, id: string) {
        const passage = s.game.passages[id];
        const paragraphs = passage.paragraphs
            .map((p) => `<p>${escapeHtml(p)}</p>`)
            .join("\n");
        const buttons = passage.choices
            .map((choice, index) => `
                <button class="choice" data-option="${index + 1}">
                    ${escapeHtml(choice.label)}
                </button>`)
            .join("\n");
        screen!.innerHTML = `
            ${note ? `<p class="note">${escapeHtml(note)}</p>` : ""}
            ${trailHtml(s)}
            <section class="passage">${paragraphs}</section>
            <div class="choices">${buttons}</div>
            <div class="controls">
                <button id="undoBtn" ${s.steps.length === 0 ? "disabled" : ""}>Undo</button>
                <button id="restartBtn">Restart</button>
            </div>
        `;
        note = "";
        screen!.querySelectorAll<HTMLButtonElement>("button.choice").forEach((btn) => {
            btn.addEventListener("click", () => {
                const option = Number(btn.dataset.option) === 2 ? 2 : 1;
                step((current) => choose(current, option));
            });
        });
        wireControl("undoBtn", () => step(undo));
        wireControl("restartBtn", () => step(restart));
    }

    function renderEnding(s: Session) {
        const vector = choiceVector(s);
        screen!.innerHTML = `
            ${trailHtml(s)}
            <section class="ending">
                <h2>THE END</h2>
                <p>You reached one of the story's endings.</p>
                <p class="vector">Playthrough: <code id="vectorText">${vector}</code></p>
            </section>
            <div class="controls">
                <button id="againBtn">Play again</button>
                <button id="copyBtn">Copy playthrough</button>
            </div>
        `;
        wireControl("againBtn", () => step(restart));
        wireControl("copyBtn", () => copyText(vector));
    }

    function renderError(message: string) {
        screen!.innerHTML = `
            <section class="error">
                <h2>That file is not a playable story</h2>
                <p id="errorText">${escapeHtml(message)}</p>
            </section>
            ${pickerHtml()}
        `;
        wirePicker();
    }

    function renderPicker() {
        screen!.innerHTML = `
            <section class="intro">
                <p>Open a <code>game.json</code> produced by the story pipeline,
                   or link one with <code>?src=path/to/game.json</code>.</p>
            </section>
            ${pickerHtml()}
        `;
        wirePicker();
    }

    function pickerHtml(): string {
        return `<div class="picker"><input type="file" id="filePick" accept=".json,application/json"></div>`;
    }

    /* ---------------- Wiring ---------------- */

    function wireControl(id: string, handler: () => void) {
        const btn = doc.getElementById(id);
        btn?.addEventListener("click", handler);
    }

    function wirePicker() {
        const input = doc.getElementById("filePick") as HTMLInputElement | null;
        input?.addEventListener("change", () => {
            const file = input.files && input.files[0];
            if (!file) return;
            file.text().then(loadFromText, (err) => renderError(String(err)));
        });
    }

    function copyText(text: string) {
        const clipboard = win.navigator.clipboard;
        if (clipboard && clipboard.writeText) {
            clipboard.writeText(text).catch(() => win.prompt("Copy the playthrough:", text));
        } else {
            win.prompt("Copy the playthrough:", text);
        }
    }

    /* ---------------- Boot ---------------- */

    win.addEventListener("hashchange", () => {
        if (!game) return;
        const vector = decodePlaythrough(win.location.hash);
        if (vector === null || !session) return;
        if (vector === choiceVector(session)) return;
        try {
            session = applyVector(game, vector);
        } catch {
            note = "That link does not fit this story.";
        }
        render();
    });

    const src = new URLSearchParams(win.location.search).get("src");
    if (src) {
        const fetcher = win.fetch ? win.fetch.bind(win) : fetch;
        fetcher(src, { cache: "no-store" })
            .then((response) => {
                if (!response.ok) throw new Error(`HTTP ${response.status} for ${src}`);
                return response.text();
            })
            .then(loadFromText, (err) => renderError(String(err)));
    } else {
        renderPicker();
    }

    return { loadFromText, session: () => session };
}

function escapeHtml(text: string): string {
    return text.replace(/[&<>"]/g, (ch) => (
        { "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" }[ch]!
    ));
}

// Auto-boot in the browser; tests call initPlayer on their own window.
if (typeof document !== "undefined" && document.getElementById("screen")) {
    initPlayer(window);
}
