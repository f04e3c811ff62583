import { describe, expect, it } from "vitest";

import { highlightSegments } from "../src/highlight.js";

describe("highlightSegments", () => {
  it("marks case-insensitive matches", () => {
    const segments = highlightSegments("The Key Event happened. key event!", "key event");
    expect(segments).toEqual([
      { text: "The ", hit: false },
      { text: "Key Event", hit: true },
      { text: " happened. ", hit: false },
      { text: "key event", hit: true },
      { text: "!", hit: false },
    ]);
  });

  it("concatenation reproduces the original text", () => {
    const text = "aaa bbb AAA bbb aaa";
    const joined = highlightSegments(text, "aaa").map((s) => s.text).join("");
    expect(joined).toBe(text);
  });

  it("no match yields a single unhighlighted segment", () => {
    expect(highlightSegments("nothing here", "absent")).toEqual([
      { text: "nothing here", hit: false },
    ]);
  });

  it("empty needle highlights nothing", () => {
    expect(highlightSegments("text", "  ")).toEqual([{ text: "text", hit: false }]);
  });
});
