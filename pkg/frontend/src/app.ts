// Browser entry point: session picker, one-unit-at-a-time verdict screen
// with keyboard shortcuts, a per-explanation parse-audit screen, and the
// completion/progress view. Everything renders from server payloads, so a
// page refresh always reconstructs the same state.

import { ApiClient, ApiError } from "./api.js";
import { auditFromForm, type UnitToggle } from "./audit.js";
import { highlightSegments } from "./highlight.js";
import { TaskQueue } from "./queue.js";
import type { AnnotationTask, AnnotatorRef, RunProgress } from "./types.js";

const api = new ApiClient("");
const root = document.getElementById("app") as HTMLElement;

let runId = new URLSearchParams(location.search).get("run") ?? "";
let annotator: AnnotatorRef | null = null;
let queue: TaskQueue | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function highlighted(container: HTMLElement, text: string, unit: string): void {
  for (const segment of highlightSegments(text, unit)) {
    const span = el("span", segment.hit ? "hit" : undefined, segment.text);
    container.appendChild(span);
  }
}

function clear(): HTMLElement {
  root.replaceChildren();
  return root;
}

// ---- session screen -------------------------------------------------------

function sessionScreen(message?: string): void {
  const box = el("div", "card");
  box.appendChild(el("h1", undefined, "Annotation session"));
  if (message) box.appendChild(el("p", "error", message));

  const runInput = el("input") as HTMLInputElement;
  runInput.placeholder = "run id";
  runInput.value = runId;
  const nameInput = el("input") as HTMLInputElement;
  nameInput.placeholder = "your annotator name";
  const start = el("button", "primary", "Start");
  start.onclick = async () => {
    runId = runInput.value.trim();
    const name = nameInput.value.trim();
    if (!runId || !name) return;
    try {
      const session = await api.openSession(name);
      api.setToken(session.token);
      annotator = { kind: "human", name };
      queue = new TaskQueue(api, runId, annotator);
      await queue.load();
      taskScreen();
    } catch (err) {
      sessionScreen(err instanceof ApiError ? err.detail : String(err));
    }
  };
  for (const node of [runInput, nameInput, start]) box.appendChild(node);
  clear().appendChild(box);
}

// ---- verdict screen --------------------------------------------------------

function taskScreen(error?: string): void {
  if (!queue) return sessionScreen();
  const task = queue.current();
  if (!task) {
    void completionScreen();
    return;
  }

  const stats = queue.stats();
  const box = el("div", "card");
  const head = el("div", "head");
  head.appendChild(el("span", "counter",
    `${stats.total - stats.remaining + 1} / ${stats.total}`));
  if (stats.pendingOffline > 0) {
    head.appendChild(el("span", "offline",
      `${stats.pendingOffline} queued offline`));
  }
  const auditLink = el("button", "link", "parse audit");
  auditLink.onclick = () => auditScreen();
  head.appendChild(auditLink);
  box.appendChild(head);

  if (error) box.appendChild(el("p", "error", error));

  box.appendChild(el("h2", undefined,
    task.target === "counterfactual"
      ? "Does this element appear in the counterfactual?"
      : "Is this element reflected in the output?"));

  const unit = el("div", "unit");
  unit.appendChild(el("span", "badge", task.context.unit_category));
  unit.appendChild(el("strong", undefined, task.context.unit_text));
  box.appendChild(unit);

  const explanation = el("details", "explanation");
  explanation.appendChild(el("summary", undefined, "full explanation"));
  explanation.appendChild(el("p", undefined, task.context.explanation_text));
  box.appendChild(explanation);

  const target = el("div", "target");
  if (task.target === "counterfactual") {
    target.appendChild(el("h3", undefined, "Counterfactual"));
    const body = el("p");
    highlighted(body, task.context.counterfactual_text, task.context.unit_text);
    target.appendChild(body);
  } else {
    target.appendChild(el("h3", undefined, "Counterfactual"));
    target.appendChild(el("p", "dim", task.context.counterfactual_text));
    target.appendChild(el("h3", undefined, "Model output"));
    const body = el("p");
    highlighted(body, task.context.counterfactual_output_text ?? "",
      task.context.unit_text);
    target.appendChild(body);
  }
  box.appendChild(target);
  box.appendChild(el("p", "hint",
    "Matching is flexible: the wording does not need to be identical."));

  const note = el("textarea") as HTMLTextAreaElement;
  note.placeholder = "optional note";
  box.appendChild(note);

  const submit = async (verdict: boolean) => {
    const result = await queue!.submit(verdict, note.value);
    if (result.ok) {
      taskScreen();
    } else {
      // server rejected: the verdict and note stay in the form
      taskScreen(result.error);
    }
  };
  const buttons = el("div", "buttons");
  const yes = el("button", "yes", "Yes (y)");
  yes.onclick = () => submit(true);
  const no = el("button", "no", "No (n)");
  no.onclick = () => submit(false);
  buttons.appendChild(yes);
  buttons.appendChild(no);
  box.appendChild(buttons);

  document.onkeydown = (event) => {
    if (document.activeElement === note) return;
    if (event.key === "y") submit(true);
    if (event.key === "n") submit(false);
  };
  clear().appendChild(box);
}

// ---- parse-audit screen ----------------------------------------------------

async function auditScreen(message?: string): Promise<void> {
  if (!queue || !annotator) return sessionScreen();
  const tasks = await api.listTasks(runId, annotator.name);
  const byExplanation = new Map<string, AnnotationTask[]>();
  for (const task of tasks) {
    const list = byExplanation.get(task.explanation_id) ?? [];
    list.push(task);
    byExplanation.set(task.explanation_id, list);
  }

  const box = el("div", "card");
  box.appendChild(el("h1", undefined, "Parse audit"));
  if (message) box.appendChild(el("p", "notice", message));
  const back = el("button", "link", "back to tasks");
  back.onclick = () => taskScreen();
  box.appendChild(back);

  for (const [explanationId, explTasks] of byExplanation) {
    const section = el("section", "audit");
    section.appendChild(el("h2", undefined, explanationId));
    section.appendChild(el("p", "dim", explTasks[0].context.explanation_text));

    const seen = new Set<string>();
    const toggles: UnitToggle[] = [];
    const list = el("ul");
    for (const task of explTasks) {
      if (seen.has(task.unit_id)) continue;
      seen.add(task.unit_id);
      const toggle: UnitToggle = {
        unit_id: task.unit_id,
        text: task.context.unit_text,
        correct: true,
      };
      toggles.push(toggle);
      const item = el("li");
      const check = el("input") as HTMLInputElement;
      check.type = "checkbox";
      check.checked = true;
      check.onchange = () => {
        toggle.correct = check.checked;
      };
      item.appendChild(check);
      item.appendChild(el("span", undefined,
        ` ${task.context.unit_text} (${task.context.unit_category})`));
      list.appendChild(item);
    }
    section.appendChild(list);

    const missing = el("textarea") as HTMLTextAreaElement;
    missing.placeholder = "missing points or other comments";
    section.appendChild(missing);

    const send = el("button", "primary", "Submit audit");
    send.onclick = async () => {
      try {
        await api.submitParseAudit(
          runId, auditFromForm(explanationId, toggles, missing.value));
        auditScreen(`audit stored for ${explanationId}`);
      } catch (err) {
        auditScreen(err instanceof ApiError ? err.detail : String(err));
      }
    };
    section.appendChild(send);
    box.appendChild(section);
  }
  clear().appendChild(box);
}

// ---- completion screen -----------------------------------------------------

async function completionScreen(): Promise<void> {
  const box = el("div", "card");
  box.appendChild(el("h1", undefined, "All tasks done"));
  try {
    const progress: RunProgress = await api.progress(runId);
    const mine = annotator
      ? progress.annotators[`human:${annotator.name}`]
      : undefined;
    if (mine) {
      box.appendChild(el("p", undefined,
        `You answered ${mine.done} of ${mine.done + mine.open} tasks ` +
        `(${mine.by_target.counterfactual.done} simulatability, ` +
        `${mine.by_target.counterfactual_output.done} precision).`));
    }
    box.appendChild(el("p", "dim", `Run total: ${progress.total_tasks} tasks.`));
  } catch {
    box.appendChild(el("p", "dim", "progress unavailable"));
  }
  const audit = el("button", "link", "parse audit");
  audit.onclick = () => auditScreen();
  box.appendChild(audit);
  clear().appendChild(box);
}

sessionScreen();
