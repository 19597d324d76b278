// Reasoning-run inspector: launches a run, polls its status, and replays the
// append-only trace into branch-grouped step cards. Rebuilding from the trace
// alone means a page reload reconstructs the exact same cards.

import { runStatus, runTrace, startRun, RunStatus, TraceRecord } from "./api.js";

const POLL_INTERVAL_MS = 1000;

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

interface StepCard {
  description: string;
  query: string;
  kept: string[];
  filtered: boolean;
}

interface BranchView {
  revision: number;
  steps: StepCard[];
  verdicts: { accepted: boolean; feedback: { step_index: number; reason: string }[] }[];
  status?: string;
}

export function branchViewsFromTrace(records: TraceRecord[]): Map<number, BranchView> {
  const branches = new Map<number, BranchView>();
  const ensure = (id: number): BranchView => {
    let view = branches.get(id);
    if (!view) {
      view = { revision: 0, steps: [], verdicts: [] };
      branches.set(id, view);
    }
    return view;
  };
  for (const record of records) {
    const view = ensure(record.branch);
    const payload = record.payload as Record<string, any>;
    switch (record.event) {
      case "sketch":
        view.revision = payload.revision ?? 0;
        view.steps = (payload.steps ?? []).map((step: any) => ({
          description: step.description ?? "",
          query: step.query ?? "",
          kept: [],
          filtered: false,
        }));
        break;
      case "revise":
        view.revision = payload.revision ?? view.revision + 1;
        view.steps = view.steps.map((step) => ({ ...step, kept: [], filtered: false }));
        break;
      case "filter": {
        const step = view.steps[payload.step ?? 0];
        if (step) {
          step.kept = payload.kept ?? [];
          step.filtered = true;
        }
        break;
      }
      case "judge":
        view.verdicts.push({
          accepted: Boolean(payload.accepted),
          feedback: payload.feedback ?? [],
        });
        break;
      case "done":
        view.status = payload.status ?? "done";
        break;
      default:
        break;
    }
  }
  return branches;
}

function renderBranch(id: number, view: BranchView): HTMLElement {
  const section = el("section", "branch");
  section.dataset.branch = String(id);
  const title = el("h3", "branch-title", `branch ${id}`);
  const badge = el("span", `status-badge status-${view.status ?? "running"}`, view.status ?? "running");
  title.appendChild(badge);
  title.appendChild(el("span", "revision-badge", `revision ${view.revision}`));
  section.appendChild(title);

  view.steps.forEach((step, index) => {
    const card = el("div", "step-card");
    card.appendChild(el("div", "step-description", `${index}. ${step.description}`));
    card.appendChild(el("div", "step-query", step.query));
    const list = el("div", "step-candidates");
    if (!step.filtered) {
      list.appendChild(el("div", "pending", "retrieving..."));
    } else if (step.kept.length === 0) {
      list.appendChild(el("div", "empty-filter", "no usable results"));
    } else {
      for (const name of step.kept) {
        list.appendChild(el("div", "candidate", name));
      }
    }
    card.appendChild(list);
    const verdict = view.verdicts[view.verdicts.length - 1];
    if (verdict) {
      const flagged = verdict.feedback.find((f) => f.step_index === index);
      if (!verdict.accepted && flagged) {
        card.appendChild(el("div", "step-feedback", flagged.reason));
      }
    }
    section.appendChild(card);
  });

  const lastVerdict = view.verdicts[view.verdicts.length - 1];
  if (lastVerdict) {
    section.appendChild(
      el(
        "div",
        lastVerdict.accepted ? "verdict accepted" : "verdict rejected",
        lastVerdict.accepted ? "accepted" : "rejected",
      ),
    );
  }
  return section;
}

function renderRanking(container: HTMLElement, status: RunStatus): void {
  const result = status.result;
  if (!result) return;
  const panel = el("div", "ranking-panel");
  panel.appendChild(
    el(
      "h3",
      "ranking-title",
      result.winner === null ? "pooled ranking (no branch accepted)" : `ranking from branch ${result.winner}`,
    ),
  );
  const copy = el("button", "copy-premises", "copy premise list");
  copy.type = "button";
  copy.addEventListener("click", () => {
    void navigator.clipboard?.writeText(result.ranking.map((entry) => entry.decl_name).join("\n"));
  });
  panel.appendChild(copy);
  const list = el("ol", "ranking-list");
  for (const entry of result.ranking) {
    list.appendChild(el("li", "ranking-entry", `${entry.decl_name} (${entry.score.toFixed(3)})`));
  }
  panel.appendChild(list);
  container.appendChild(panel);
}

export interface RunInspectorHandle {
  refresh: (runId: string) => Promise<void>;
  stop: () => void;
}

export function mountRunInspector(root: HTMLElement): RunInspectorHandle {
  root.innerHTML = `
    <form id="run-form">
      <input id="run-informal" type="text" placeholder="informal description" />
      <input id="run-formal" type="text" placeholder="formal statement" />
      <button id="run-submit" type="submit">run</button>
    </form>
    <div id="run-error" class="banner" hidden></div>
    <div id="run-meta"></div>
    <div id="run-branches"></div>
    <div id="run-ranking"></div>
  `;

  const form = root.querySelector<HTMLFormElement>("#run-form")!;
  const informal = root.querySelector<HTMLInputElement>("#run-informal")!;
  const formal = root.querySelector<HTMLInputElement>("#run-formal")!;
  const errorBox = root.querySelector<HTMLDivElement>("#run-error")!;
  const meta = root.querySelector<HTMLDivElement>("#run-meta")!;
  const branchesBox = root.querySelector<HTMLDivElement>("#run-branches")!;
  const rankingBox = root.querySelector<HTMLDivElement>("#run-ranking")!;

  let timer: ReturnType<typeof setTimeout> | null = null;

  const refresh = async (runId: string): Promise<void> => {
    const [status, trace] = await Promise.all([runStatus(runId), runTrace(runId)]);
    meta.textContent = `run ${runId}: ${status.status}`;
    branchesBox.innerHTML = "";
    const views = branchViewsFromTrace(trace);
    for (const id of [...views.keys()].sort((a, b) => a - b)) {
      branchesBox.appendChild(renderBranch(id, views.get(id)!));
    }
    rankingBox.innerHTML = "";
    if (status.status === "done") {
      renderRanking(rankingBox, status);
    } else if (status.status === "error") {
      errorBox.textContent = `run failed: ${status.error ?? "unknown error"}`;
      errorBox.hidden = false;
    } else {
      timer = setTimeout(() => void refresh(runId), POLL_INTERVAL_MS);
    }
  };

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    errorBox.hidden = true;
    void startRun(informal.value, formal.value)
      .then((runId) => refresh(runId))
      .catch((error: Error) => {
        errorBox.textContent = `could not start run: ${error.message}`;
        errorBox.hidden = false;
      });
  });

  return {
    refresh,
    stop: () => {
      if (timer) clearTimeout(timer);
    },
  };
}
