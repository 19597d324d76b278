// Search console: query box, options, hit cards in service order, session
// history. Hit order is exactly the service's response order.

import { declDetail, search, SearchHit } from "./api.js";

export interface SearchViewState {
  history: string[];
}

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

function hitCard(hit: SearchHit): HTMLElement {
  const card = el("div", "hit-card");
  card.dataset.name = hit.name;

  const header = el("div", "hit-header");
  header.appendChild(el("span", "hit-rank", String(hit.rank)));
  header.appendChild(el("span", "hit-name", hit.name));
  header.appendChild(el("span", "hit-kind", hit.kind));
  header.appendChild(el("span", "hit-score", hit.score.toFixed(4)));

  const copy = el("button", "copy-name", "copy");
  copy.type = "button";
  copy.addEventListener("click", (event) => {
    event.stopPropagation();
    void navigator.clipboard?.writeText(hit.name);
  });
  header.appendChild(copy);
  card.appendChild(header);

  const detail = el("div", "hit-detail");
  detail.hidden = true;
  detail.appendChild(el("div", "hit-signature", hit.signature));
  detail.appendChild(el("div", "hit-informal", hit.informal));
  const source = el("div", "hit-source", "");
  detail.appendChild(source);
  card.appendChild(detail);

  header.addEventListener("click", () => {
    detail.hidden = !detail.hidden;
    if (!detail.hidden && !source.textContent) {
      declDetail(hit.name)
        .then((doc) => {
          source.textContent = `${doc.source.file}:${doc.source.line}`;
        })
        .catch(() => {
          source.textContent = "source unavailable";
        });
    }
  });
  return card;
}

export function mountSearchView(root: HTMLElement): SearchViewState {
  const state: SearchViewState = { history: [] };
  root.innerHTML = `
    <form id="search-form">
      <input id="search-query" type="text" placeholder="describe the declaration..." autocomplete="off" />
      <label>k <input id="search-k" type="number" value="10" min="1" /></label>
      <label><input id="search-rerank" type="checkbox" checked /> rerank</label>
      <button id="search-submit" type="submit" disabled>search</button>
    </form>
    <div id="search-banner" class="banner" hidden></div>
    <ul id="search-history"></ul>
    <div id="search-results"></div>
  `;

  const form = root.querySelector<HTMLFormElement>("#search-form")!;
  const input = root.querySelector<HTMLInputElement>("#search-query")!;
  const kInput = root.querySelector<HTMLInputElement>("#search-k")!;
  const rerank = root.querySelector<HTMLInputElement>("#search-rerank")!;
  const submit = root.querySelector<HTMLButtonElement>("#search-submit")!;
  const banner = root.querySelector<HTMLDivElement>("#search-banner")!;
  const historyList = root.querySelector<HTMLUListElement>("#search-history")!;
  const results = root.querySelector<HTMLDivElement>("#search-results")!;

  input.addEventListener("input", () => {
    submit.disabled = input.value.trim().length === 0;
  });

  const renderHistory = () => {
    historyList.innerHTML = "";
    for (const past of state.history.slice(-8).reverse()) {
      const item = el("li", "history-item", past);
      item.addEventListener("click", () => {
        input.value = past;
        submit.disabled = false;
        form.requestSubmit();
      });
      historyList.appendChild(item);
    }
  };

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const query = input.value.trim();
    if (!query) return;
    banner.hidden = true;
    void search(query, { k: Number(kInput.value) || 10, rerank: rerank.checked })
      .then((response) => {
        state.history.push(query);
        renderHistory();
        results.innerHTML = "";
        for (const hit of response.hits) {
          results.appendChild(hitCard(hit));
        }
        if (response.hits.length === 0) {
          results.appendChild(el("div", "empty-state", "no results"));
        }
      })
      .catch((error: Error) => {
        // keep previous results; surface a non-blocking banner
        banner.textContent = `search failed: ${error.message}`;
        banner.hidden = false;
      });
  });

  return state;
}
