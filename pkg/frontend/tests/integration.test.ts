// Drives the real annotation service with the UI's own modules: fixture
// stores are built by a Python helper, `cfsim serve` runs as a subprocess,
// and verdicts flow through ApiClient/TaskQueue exactly as the browser app
// submits them.

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

const testDir = dirname(fileURLToPath(import.meta.url));

import { ApiClient } from "../src/api.js";
import { TaskQueue } from "../src/queue.js";

const execFileAsync = promisify(execFile);

const PORT = 8630 + Math.floor(Math.random() * 200);
const BASE = `http://127.0.0.1:${PORT}`;
const ALICE = { kind: "human" as const, name: "alice" };

let storeDir: string;
let server: ChildProcess;

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 50; attempt++) {
    try {
      const response = await fetch(`${BASE}/runs/tiny/progress`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("annotation service did not come up");
}

beforeAll(async () => {
  storeDir = mkdtempSync(join(tmpdir(), "cfsim-ui-"));
  await execFileAsync("python3", [join(testDir, "make_fixture.py"), storeDir]);
  server = spawn("cfsim", ["serve", "tiny", "--store", storeDir,
    "--bind", `127.0.0.1:${PORT}`], { stdio: "ignore" });
  await waitForServer();
}, 60_000);

afterAll(() => {
  server?.kill();
  rmSync(storeDir, { recursive: true, force: true });
});

describe("UI routing guard (server-driven task list)", () => {
  it("never offers a medical suggestion unit with the counterfactual target", async () => {
    const api = new ApiClient(BASE);
    const tasks = await api.listTasks("medtiny", "alice");
    expect(tasks.length).toBe(2);
    for (const task of tasks) {
      if (task.context.unit_category === "suggestion") {
        expect(task.target).toBe("counterfactual_output");
      }
      if (task.target === "counterfactual") {
        expect(task.context.unit_category).toBe("patient_information");
      }
    }
  });
});

describe("UI round trip on the 2-unit fixture", () => {
  it("each submit bumps progress by one; report matches hand recomputation", async () => {
    const api = new ApiClient(BASE);
    const session = await api.openSession("alice");
    api.setToken(session.token);

    const before = await api.progress("tiny");
    expect(before.annotators["human:alice"]?.done ?? 0).toBe(0);

    const queue = new TaskQueue(api, "tiny", ALICE);
    await queue.load();
    expect(queue.stats().total).toBe(4); // 2 units x {counterfactual, output}

    // simulatability verdicts [Y, Y], then precision verdicts [Y, N]:
    // presence 2/2 -> simulatable; precision 1/2 -> report precision 0.5
    const verdicts = [true, true, true, false];
    let done = 0;
    for (const verdict of verdicts) {
      const current = queue.current();
      expect(current).not.toBeNull();
      const result = await queue.submit(verdict);
      expect(result.ok).toBe(true);
      done += 1;
      const progress = await api.progress("tiny");
      expect(progress.annotators["human:alice"].done).toBe(done);
    }
    expect(queue.done()).toBe(true);

    const { stdout } = await execFileAsync("cfsim", [
      "report", "tiny", "--store", storeDir,
      "--annotator", "alice", "--format", "json",
    ]);
    const report = JSON.parse(stdout);
    expect(report.precision).toBe(0.5);
    expect(report.n_explanations).toBe(1);
    expect(report.n_samples).toBe(1);
    expect(report.buckets["1.00"]).toBe(1);
  }, 30_000);
});
