import { describe, expect, it } from "vitest";

import { auditFromForm } from "../src/audit.js";

const UNITS = [
  { unit_id: "u0", text: "first point", correct: true },
  { unit_id: "u1", text: "second point", correct: true },
];

describe("auditFromForm", () => {
  it("all units correct and no note means parsed ok", () => {
    expect(auditFromForm("e1", UNITS, "")).toEqual({
      explanation_id: "e1",
      parsed_ok: true,
    });
  });

  it("a flagged unit maps to incorrect_extraction", () => {
    const toggles = [UNITS[0], { ...UNITS[1], correct: false }];
    const audit = auditFromForm("e1", toggles, "");
    expect(audit.parsed_ok).toBe(false);
    expect(audit.error_kind).toBe("incorrect_extraction");
    expect(audit.note).toContain("second point");
  });

  it("a missing-points note alone maps to missing_extraction", () => {
    const audit = auditFromForm("e1", UNITS, "missing point: the date");
    expect(audit.parsed_ok).toBe(false);
    expect(audit.error_kind).toBe("missing_extraction");
    expect(audit.note).toBe("missing point: the date");
  });

  it("both flagged and missing maps to missing_and_incorrect", () => {
    const toggles = [{ ...UNITS[0], correct: false }, UNITS[1]];
    const audit = auditFromForm("e1", toggles, "also missing a step");
    expect(audit.error_kind).toBe("missing_and_incorrect");
    expect(audit.note).toContain("first point");
    expect(audit.note).toContain("also missing a step");
  });

  it("whitespace-only note does not count as missing", () => {
    expect(auditFromForm("e1", UNITS, "   ").parsed_ok).toBe(true);
  });
});
