// JSON shapes of the annotation service; field names mirror the API exactly.

export type AnnotationTarget = "counterfactual" | "counterfactual_output";

export type AnnotatorKind = "human" | "llm_judge";

export interface AnnotatorRef {
  kind: AnnotatorKind;
  name: string;
}

export interface TaskContext {
  explanation_text: string;
  unit_text: string;
  unit_category: string;
  counterfactual_text: string;
  counterfactual_output_text: string | null;
}

export interface AnnotationTask {
  task_id: string;
  explanation_id: string;
  cf_id: string;
  unit_id: string;
  target: AnnotationTarget;
  context: TaskContext;
  status: "open" | "done";
}

export interface AnnotationSubmission {
  annotator: AnnotatorRef;
  cf_id: string;
  unit_id: string;
  target: AnnotationTarget;
  verdict: boolean;
  note?: string | null;
}

export type ParseErrorKind =
  | "missing_extraction"
  | "incorrect_extraction"
  | "missing_and_incorrect";

export interface ParseAuditSubmission {
  explanation_id: string;
  parsed_ok: boolean;
  error_kind?: ParseErrorKind | null;
  note?: string | null;
}

export interface TargetProgress {
  done: number;
  open: number;
}

export interface AnnotatorProgress {
  done: number;
  open: number;
  by_target: Record<AnnotationTarget, TargetProgress>;
}

export interface RunProgress {
  run_id: string;
  total_tasks: number;
  annotators: Record<string, AnnotatorProgress>;
}

export interface SessionInfo {
  annotator: string;
  token: string;
}
