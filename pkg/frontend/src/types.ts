export interface BatchItem {
  id: string;
  image_uri: string | null;
  attributes: Record<string, string>;
}

export interface StartResponse {
  session_id: string;
  iteration: number;
  batch: BatchItem[];
}

export interface FeedbackActive {
  status: "active";
  iteration: number;
  batch: BatchItem[];
  trained: boolean;
  loss?: number;
}

export interface FeedbackClosed {
  status: "exhausted" | "abandoned";
  iteration: number;
}

export type FeedbackResponse = FeedbackActive | FeedbackClosed;

export interface ReportResponse {
  status: "converged";
  iterations: number;
  convergence_score: number;
}

export interface SnapshotResponse {
  status: string;
  iteration: number;
  counts: { similar: number; dissimilar: number; remaining: number };
  last_batch: BatchItem[];
}

export type SessionPhase =
  | "active"
  | "converged"
  | "exhausted"
  | "abandoned";

export interface SessionResult {
  iterations: number;
  convergenceScore: number;
}

/** Client-side mirror of the server session; never invents state. */
export interface UiSession {
  sessionId: string;
  iteration: number;
  batch: BatchItem[];
  selected: Set<string>;
  status: SessionPhase;
  relevanceHistory: number[];
  lastTrained: boolean;
  lastLoss: number | null;
  counts: { similar: number; dissimilar: number; remaining: number } | null;
  result: SessionResult | null;
}
