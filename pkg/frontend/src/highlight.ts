// Splits a text into segments with case-insensitive matches of the unit text
// marked. A hint only: annotators judge semantically, and a missing highlight
// must not suggest a NO verdict.

export interface Segment {
  text: string;
  hit: boolean;
}

export function highlightSegments(haystack: string, needle: string): Segment[] {
  const trimmed = needle.trim();
  if (!trimmed || !haystack) return [{ text: haystack, hit: false }];
  const lower = haystack.toLowerCase();
  const target = trimmed.toLowerCase();
  const segments: Segment[] = [];
  let cursor = 0;
  for (;;) {
    const at = lower.indexOf(target, cursor);
    if (at === -1) break;
    if (at > cursor) segments.push({ text: haystack.slice(cursor, at), hit: false });
    segments.push({ text: haystack.slice(at, at + target.length), hit: true });
    cursor = at + target.length;
  }
  if (cursor < haystack.length) {
    segments.push({ text: haystack.slice(cursor), hit: false });
  }
  return segments.length ? segments : [{ text: haystack, hit: false }];
}
