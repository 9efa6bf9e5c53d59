import type { Client } from "./api";
import type { BatchItem, SessionPhase, UiSession } from "./types";

type Listener = (state: UiSession | null) => void;

/** Session store mirroring the server: every field comes from the latest
 * response, selection is the only client-owned piece of state. */
export class SessionStore {
  state: UiSession | null = null;
  private inFlight = false;
  private listeners: Listener[] = [];

  constructor(private readonly client: Client) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  async start(
    constraints: Record<string, string>,
    seed?: number,
  ): Promise<void> {
    const response = await this.client.startSession(constraints, seed);
    this.state = {
      sessionId: response.session_id,
      iteration: response.iteration,
      batch: response.batch,
      selected: new Set(),
      status: "active",
      relevanceHistory: [],
      lastTrained: false,
      lastLoss: null,
      counts: null,
      result: null,
    };
    this.emit();
  }

  async resume(sessionId: string): Promise<void> {
    const snapshot = await this.client.snapshot(sessionId);
    this.state = {
      sessionId,
      iteration: snapshot.iteration,
      batch: snapshot.last_batch,
      selected: new Set(),
      status: snapshot.status as SessionPhase,
      relevanceHistory: [],
      lastTrained: false,
      lastLoss: null,
      counts: snapshot.counts,
      result: null,
    };
    this.emit();
  }

  /** Click-to-toggle; only shown ids are selectable. */
  toggle(imageId: string): void {
    const state = this.state;
    if (!state || state.status !== "active" || this.inFlight) return;
    if (!state.batch.some((item: BatchItem) => item.id === imageId)) return;
    if (state.selected.has(imageId)) {
      state.selected.delete(imageId);
    } else {
      state.selected.add(imageId);
    }
    this.emit();
  }

  /** Posts the toggled ids; at most one request is ever in flight. */
  async submitFeedback(): Promise<boolean> {
    const state = this.state;
    if (!state || state.status !== "active" || this.inFlight) return false;
    this.inFlight = true;
    this.emit();
    try {
      const selected = [...state.selected];
      const relevance = state.batch.length
        ? selected.length / state.batch.length
        : 0;
      const response = await this.client.submitFeedback(
        state.sessionId,
        selected,
      );
      state.relevanceHistory.push(relevance);
      state.iteration = response.iteration;
      if (response.status === "active") {
        state.batch = response.batch;
        state.selected = new Set();
        state.lastTrained = response.trained;
        state.lastLoss = response.loss ?? null;
      } else {
        state.status = response.status;
        state.batch = [];
        state.selected = new Set();
      }
      return true;
    } finally {
      this.inFlight = false;
      this.emit();
    }
  }

  /** "This is it": close the session and keep the reported outcome. */
  async reportTarget(imageId: string): Promise<boolean> {
    const state = this.state;
    if (!state || state.status !== "active" || this.inFlight) return false;
    if (!state.batch.some((item: BatchItem) => item.id === imageId)) return false;
    this.inFlight = true;
    this.emit();
    try {
      const response = await this.client.reportTarget(state.sessionId, imageId);
      state.status = "converged";
      state.result = {
        iterations: response.iterations,
        convergenceScore: response.convergence_score,
      };
      return true;
    } finally {
      this.inFlight = false;
      this.emit();
    }
  }

  /** Mean of the per-round similar fractions so far. */
  runningRelevance(): number | null {
    const history = this.state?.relevanceHistory ?? [];
    if (!history.length) return null;
    return history.reduce((a, b) => a + b, 0) / history.length;
  }
}
