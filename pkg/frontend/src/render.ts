import type { Client } from "./api";
import type { SessionStore } from "./session";
import type { BatchItem, UiSession } from "./types";

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

function tileLabel(item: BatchItem): string {
  return Object.entries(item.attributes)
    .map(([key, value]) => `${key}: ${value}`)
    .join("\n");
}

export function renderGrid(
  container: HTMLElement,
  store: SessionStore,
  client: Client,
): void {
  const state = store.state;
  container.textContent = "";
  if (!state) return;
  const active = state.status === "active";
  for (const item of state.batch) {
    const tile = el("div", "tile");
    tile.dataset.id = item.id;
    if (state.selected.has(item.id)) tile.classList.add("selected");
    if (!active) tile.classList.add("disabled");
    if (item.image_uri) {
      const img = el("img");
      img.src = client.imageUrl(item.id);
      img.alt = item.id;
      tile.appendChild(img);
    } else {
      tile.appendChild(el("pre", "attrs", tileLabel(item)));
    }
    tile.appendChild(el("div", "tile-id", item.id));
    const reportButton = el("button", "report-btn", "this is it");
    reportButton.disabled = !active;
    reportButton.addEventListener("click", (event) => {
      event.stopPropagation();
      void store.reportTarget(item.id);
    });
    tile.appendChild(reportButton);
    tile.addEventListener("click", () => store.toggle(item.id));
    container.appendChild(tile);
  }
}

export function renderStatusBanner(
  container: HTMLElement,
  state: UiSession | null,
): void {
  container.textContent = "";
  if (!state) return;
  if (state.status === "converged" && state.result) {
    const banner = el("div", "banner converged");
    banner.appendChild(
      el("span", "result-iterations",
         `found after ${state.result.iterations} rounds`),
    );
    banner.appendChild(
      el("span", "result-score",
         `convergence score ${state.result.convergenceScore.toFixed(3)}`),
    );
    container.appendChild(banner);
  } else if (state.status === "exhausted" || state.status === "abandoned") {
    // sessions closed without a reported target score zero
    const banner = el("div", `banner ${state.status}`);
    banner.appendChild(el("span", "status-label", `session ${state.status}`));
    banner.appendChild(
      el("span", "result-score", `convergence score ${(0).toFixed(3)}`),
    );
    container.appendChild(banner);
  }
}

export function renderProgress(
  container: HTMLElement,
  store: SessionStore,
): void {
  const state = store.state;
  container.textContent = "";
  if (!state) return;
  container.appendChild(el("div", "iteration", `round ${state.iteration}`));
  container.appendChild(
    el("div", "selected-count", `${state.selected.size} selected`),
  );
  const history = state.relevanceHistory;
  if (history.length) {
    const last = history[history.length - 1];
    container.appendChild(
      el("div", "relevance-last", `relevance ${formatFraction(last)}`),
    );
    const running = store.runningRelevance();
    if (running !== null) {
      container.appendChild(
        el("div", "relevance-running",
           `running relevance ${formatFraction(running)}`),
      );
    }
  }
  if (state.lastTrained) {
    const label = state.lastLoss === null
      ? "trained"
      : `trained (loss ${state.lastLoss.toFixed(4)})`;
    container.appendChild(el("div", "trained-indicator", label));
  }
  if (state.counts) {
    container.appendChild(
      el("div", "counts",
         `similar ${state.counts.similar} · dissimilar ` +
         `${state.counts.dissimilar} · remaining ${state.counts.remaining}`),
    );
  }
}

export function formatFraction(value: number): string {
  // trim trailing zeros but keep full precision for values like 0.1875
  return String(Math.round(value * 1e6) / 1e6);
}

export function renderError(container: HTMLElement, message: string): void {
  container.textContent = "";
  container.appendChild(el("div", "error-message", message));
}
