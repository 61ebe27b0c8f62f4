// The whole playthrough fits in the URL hash, so a finished game can be
// shared as a link: "#p=" plus one O or A per decision.

export function encodePlaythrough(vector: string): string {
    return "#p=" + vector;
}

/**
 * Returns the choice vector from a location hash, or null when the hash
 * is absent or not in playthrough form.
 */
export function decodePlaythrough(hash: string): string | null {
    const match = /^#?p=([OA]*)$/.exec(hash);
    return match ? match[1] : null;
}
