import { ApiError, Client } from "./api";
import { renderError, renderGrid, renderProgress, renderStatusBanner } from "./render";
import { SessionStore } from "./session";

const SESSION_KEY = "faircop.session_id";
const API_KEY = "faircop.api_base";

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  if (fromQuery) {
    localStorage.setItem(API_KEY, fromQuery);
    return fromQuery;
  }
  return localStorage.getItem(API_KEY) ?? "http://127.0.0.1:8765";
}

function readConstraints(form: HTMLElement): Record<string, string> {
  const constraints: Record<string, string> = {};
  for (const row of form.querySelectorAll<HTMLElement>(".constraint-row")) {
    const key = row.querySelector<HTMLInputElement>(".attr-name")?.value.trim();
    const value = row.querySelector<HTMLInputElement>(".attr-value")?.value.trim();
    if (key && value) constraints[key] = value;
  }
  return constraints;
}

function addConstraintRow(list: HTMLElement): void {
  const row = document.createElement("div");
  row.className = "constraint-row";
  const name = document.createElement("input");
  name.className = "attr-name";
  name.placeholder = "attribute (e.g. gender)";
  const value = document.createElement("input");
  value.className = "attr-value";
  value.placeholder = "value (e.g. v0)";
  const remove = document.createElement("button");
  remove.type = "button";
  remove.textContent = "x";
  remove.addEventListener("click", () => row.remove());
  row.append(name, value, remove);
  list.appendChild(row);
}

export function boot(root: HTMLElement): SessionStore {
  const client = new Client(apiBase());
  const store = new SessionStore(client);

  root.innerHTML = `
    <header>
      <h1>image retrieval session</h1>
      <form id="start-form">
        <div id="constraint-list"></div>
        <button type="button" id="add-constraint">add filter</button>
        <button type="submit" id="start-session">start session</button>
      </form>
      <div id="start-error"></div>
    </header>
    <section id="banner"></section>
    <section id="progress"></section>
    <section id="grid"></section>
    <footer>
      <button id="submit-feedback" disabled>submit feedback</button>
    </footer>
  `;

  const grid = root.querySelector<HTMLElement>("#grid")!;
  const banner = root.querySelector<HTMLElement>("#banner")!;
  const progress = root.querySelector<HTMLElement>("#progress")!;
  const startError = root.querySelector<HTMLElement>("#start-error")!;
  const submitButton = root.querySelector<HTMLButtonElement>("#submit-feedback")!;
  const form = root.querySelector<HTMLFormElement>("#start-form")!;
  const constraintList = root.querySelector<HTMLElement>("#constraint-list")!;

  addConstraintRow(constraintList);
  root.querySelector("#add-constraint")!.addEventListener("click", () =>
    addConstraintRow(constraintList),
  );

  store.subscribe((state) => {
    renderGrid(grid, store, client);
    renderStatusBanner(banner, state);
    renderProgress(progress, store);
    submitButton.disabled =
      !state || state.status !== "active" || store.busy;
    if (state) localStorage.setItem(SESSION_KEY, state.sessionId);
  });

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    startError.textContent = "";
    void store.start(readConstraints(form)).catch((error: unknown) => {
      const message =
        error instanceof ApiError
          ? error.status === 404
            ? `no images match those filters (${error.message})`
            : error.message
          : String(error);
      renderError(startError, message);
    });
  });

  submitButton.addEventListener("click", () => {
    void store.submitFeedback();
  });

  const stored = localStorage.getItem(SESSION_KEY);
  if (stored) {
    void store.resume(stored).catch(() => {
      localStorage.removeItem(SESSION_KEY);
    });
  }
  return store;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot(document.getElementById("app")!);
}
