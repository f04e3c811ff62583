// Maps the parse-audit form (per-unit correct/incorrect toggles plus a
// missing-points note) onto the audit payload the server expects.

import type { ParseAuditSubmission } from "./types.js";

export interface UnitToggle {
  unit_id: string;
  text: string;
  correct: boolean;
}

export function auditFromForm(
  explanationId: string,
  toggles: UnitToggle[],
  missingNote: string,
): ParseAuditSubmission {
  const flagged = toggles.filter((t) => !t.correct);
  const missing = missingNote.trim().length > 0;
  if (flagged.length === 0 && !missing) {
    return { explanation_id: explanationId, parsed_ok: true };
  }
  const notes: string[] = [];
  if (flagged.length > 0) {
    notes.push(`incorrect: ${flagged.map((t) => t.text).join("; ")}`);
  }
  if (missing) notes.push(missingNote.trim());
  return {
    explanation_id: explanationId,
    parsed_ok: false,
    error_kind:
      flagged.length > 0 && missing
        ? "missing_and_incorrect"
        : flagged.length > 0
          ? "incorrect_extraction"
          : "missing_extraction",
    note: notes.join(" | "),
  };
}
