import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { branchViewsFromTrace, mountRunInspector } from "../src/runInspector.js";
import type { TraceRecord } from "../src/api.js";

const ACCEPTED_TRACE: TraceRecord[] = [
  {
    branch: 0,
    event: "sketch",
    payload: {
      revision: 0,
      steps: [
        { description: "establish the identity", query: "result about identity" },
        { description: "apply the closure lemma", query: "result about closure" },
      ],
    },
  },
  { branch: 0, event: "retrieve", payload: { step: 0, query: "result about identity", names: ["Lib.id_lemma"] } },
  { branch: 0, event: "filter", payload: { step: 0, kept: ["Lib.id_lemma"], empty: false } },
  { branch: 0, event: "retrieve", payload: { step: 1, query: "result about closure", names: ["Lib.closure"] } },
  { branch: 0, event: "filter", payload: { step: 1, kept: [], empty: true } },
  { branch: 0, event: "judge", payload: { accepted: true, feedback: [] } },
  { branch: 0, event: "done", payload: { status: "good" } },
];

function failBranch(branch: number): TraceRecord[] {
  const records: TraceRecord[] = [];
  for (let revision = 0; revision <= 3; revision++) {
    records.push({
      branch,
      event: revision === 0 ? "sketch" : "revise",
      payload:
        revision === 0
          ? { revision, steps: [{ description: "find support", query: `q${branch}` }] }
          : { revision },
    });
    if (revision === 0) {
      // steps only arrive with the sketch; revise reuses them
    }
    records.push({ branch, event: "retrieve", payload: { step: 0, query: `q${branch}`, names: [] } });
    records.push({ branch, event: "filter", payload: { step: 0, kept: [], empty: true } });
    records.push({
      branch,
      event: "judge",
      payload: { accepted: false, feedback: [{ step_index: 0, reason: "no usable retrieval support" }] },
    });
  }
  records.push({ branch, event: "done", payload: { status: "fail" } });
  return records;
}

const FAIL_FAIL_TRACE: TraceRecord[] = [...failBranch(0), ...failBranch(1)];

const FAIL_FAIL_STATUS = {
  run_id: "run_ff",
  status: "done",
  result: {
    status: "fail",
    winner: null,
    branches: [
      { branch_id: 0, status: "fail", revision: 3, judge_calls: 4 },
      { branch_id: 1, status: "fail", revision: 3, judge_calls: 4 },
    ],
    ranking: [
      { decl_name: "Lib.pooled_a", score: 2.0 },
      { decl_name: "Lib.pooled_b", score: 0.631 },
    ],
  },
};

const ACCEPTED_STATUS = {
  run_id: "run_ok",
  status: "done",
  result: {
    status: "good",
    winner: 0,
    branches: [{ branch_id: 0, status: "good", revision: 0, judge_calls: 1 }],
    ranking: [{ decl_name: "Lib.id_lemma", score: 1.0 }],
  },
};

function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function ndjsonResponse(records: TraceRecord[]): Response {
  const body = records.map((record) => JSON.stringify(record)).join("\n") + "\n";
  return new Response(body, { status: 200, headers: { "Content-Type": "application/x-ndjson" } });
}

function stubService(statusDoc: unknown, trace: TraceRecord[]): void {
  vi.stubGlobal(
    "fetch",
    vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      if (url.endsWith("/trace")) return ndjsonResponse(trace);
      if (url.startsWith("/v1/reason/")) return jsonResponse(statusDoc);
      if (url === "/v1/reason" && init?.method === "POST") {
        return jsonResponse({ run_id: (statusDoc as { run_id: string }).run_id });
      }
      return jsonResponse({ error: "unexpected route " + url }, 404);
    }),
  );
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="root"></div>';
  root = document.getElementById("root")!;
});

afterEach(() => {
  vi.unstubAllGlobals();
  vi.restoreAllMocks();
});

describe("branchViewsFromTrace", () => {
  it("reconstructs identical views on replay", () => {
    const first = branchViewsFromTrace(ACCEPTED_TRACE);
    const second = branchViewsFromTrace(ACCEPTED_TRACE);
    expect(first).toEqual(second);
    expect(first.get(0)!.revision).toBe(0);
    expect(first.get(0)!.steps).toHaveLength(2);
  });

  it("tracks revisions and resets step results", () => {
    const views = branchViewsFromTrace(FAIL_FAIL_TRACE);
    expect([...views.keys()].sort()).toEqual([0, 1]);
    for (const id of [0, 1]) {
      const view = views.get(id)!;
      expect(view.revision).toBe(3);
      expect(view.verdicts).toHaveLength(4);
      expect(view.verdicts.every((v) => !v.accepted)).toBe(true);
      expect(view.status).toBe("fail");
    }
  });
});

describe("run inspector", () => {
  it("renders an accepted-on-initial-sketch run", async () => {
    stubService(ACCEPTED_STATUS, ACCEPTED_TRACE);
    const inspector = mountRunInspector(root);
    await inspector.refresh("run_ok");
    const branches = [...root.querySelectorAll<HTMLElement>(".branch")];
    expect(branches).toHaveLength(1);
    expect(branches[0].querySelector(".revision-badge")!.textContent).toBe("revision 0");
    expect(branches[0].querySelector(".status-badge")!.textContent).toBe("good");
    expect(branches[0].querySelector(".verdict.accepted")).not.toBeNull();
    // the empty-filter signal is user-visible
    expect(branches[0].querySelector(".empty-filter")!.textContent).toBe("no usable results");
    // ranking comes verbatim from the service response
    const entries = [...root.querySelectorAll<HTMLElement>(".ranking-entry")];
    expect(entries.map((e) => e.textContent)).toEqual(["Lib.id_lemma (1.000)"]);
  });

  it("renders a fail-fail run with the pooled ranking visible", async () => {
    stubService(FAIL_FAIL_STATUS, FAIL_FAIL_TRACE);
    const inspector = mountRunInspector(root);
    await inspector.refresh("run_ff");
    const branches = [...root.querySelectorAll<HTMLElement>(".branch")];
    expect(branches).toHaveLength(2);
    for (const branch of branches) {
      expect(branch.querySelector(".revision-badge")!.textContent).toBe("revision 3");
      expect(branch.querySelector(".status-badge")!.textContent).toBe("fail");
      expect(branch.querySelector(".verdict.rejected")).not.toBeNull();
    }
    expect(root.querySelector(".ranking-title")!.textContent).toContain("pooled ranking");
    const entries = [...root.querySelectorAll<HTMLElement>(".ranking-entry")];
    expect(entries.map((e) => e.textContent)).toEqual([
      "Lib.pooled_a (2.000)",
      "Lib.pooled_b (0.631)",
    ]);
  });

  it("launches a run from the form and reports start failures inline", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse({ error: "providers unconfigured" }, 500)),
    );
    mountRunInspector(root);
    root.querySelector<HTMLInputElement>("#run-formal")!.value = "theorem t : P";
    root.querySelector<HTMLFormElement>("#run-form")!.dispatchEvent(new Event("submit"));
    await new Promise((resolve) => setTimeout(resolve, 0));
    const banner = root.querySelector<HTMLElement>("#run-error")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("providers unconfigured");
  });

  it("replaying the same trace rebuilds identical cards", async () => {
    stubService(FAIL_FAIL_STATUS, FAIL_FAIL_TRACE);
    const inspector = mountRunInspector(root);
    await inspector.refresh("run_ff");
    const first = root.querySelector("#run-branches")!.innerHTML;
    await inspector.refresh("run_ff");
    expect(root.querySelector("#run-branches")!.innerHTML).toBe(first);
  });
});
