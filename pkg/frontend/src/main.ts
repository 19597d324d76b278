import { mountSearchView } from "./searchView.js";
import { mountRunInspector } from "./runInspector.js";

function activate(tab: "search" | "runs"): void {
  document.querySelectorAll<HTMLElement>(".pane").forEach((pane) => {
    pane.hidden = pane.dataset.pane !== tab;
  });
  document.querySelectorAll<HTMLButtonElement>(".tab").forEach((button) => {
    button.classList.toggle("active", button.dataset.tab === tab);
  });
}

document.addEventListener("DOMContentLoaded", () => {
  const searchRoot = document.querySelector<HTMLElement>('[data-pane="search"]');
  const runsRoot = document.querySelector<HTMLElement>('[data-pane="runs"]');
  if (!searchRoot || !runsRoot) return;
  mountSearchView(searchRoot);
  mountRunInspector(runsRoot);
  document.querySelectorAll<HTMLButtonElement>(".tab").forEach((button) => {
    button.addEventListener("click", () => activate(button.dataset.tab as "search" | "runs"));
  });
  activate("search");
});
