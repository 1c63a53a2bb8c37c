// Typed client for the labeling service. The service owns all state;
// this client never caches or rewrites labels locally.

import type {
  ConsensusReport,
  LabelSubmission,
  NextPatch,
  SessionMeta,
  SessionStats,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class LabelApi {
  constructor(readonly base: string = "") {}

  sessionMeta(sessionId: string): Promise<SessionMeta> {
    return request(`${this.base}/session/${sessionId}`);
  }

  next(sessionId: string, annotator: string): Promise<NextPatch> {
    const query = new URLSearchParams({ annotator });
    return request(`${this.base}/session/${sessionId}/next?${query}`);
  }

  submit(sessionId: string, label: LabelSubmission): Promise<{ ok: boolean }> {
    return request(`${this.base}/session/${sessionId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(label),
    });
  }

  stats(sessionId: string): Promise<SessionStats> {
    return request(`${this.base}/session/${sessionId}/stats`);
  }

  consensus(sessionId: string, patches?: string[]): Promise<ConsensusReport> {
    const query = new URLSearchParams({ session: sessionId });
    if (patches && patches.length > 0) query.set("patches", patches.join(","));
    return request(`${this.base}/consensus?${query}`);
  }

  imageUrl(relative: string): string {
    return `${this.base}${relative}`;
  }
}
