// ============================================
// TYPE DEFINITIONS (mirror of the service JSON)
// ============================================

export interface PoseDoc {
  rotation: number[]; // unit quaternion [w, x, y, z], server-owned
  translation: number[]; // meters
  scale: number[]; // per-axis extents, meters
}

export interface PoseResponse {
  pose: PoseDoc;
  revision: number;
}

export interface KeyframeRef {
  index: number;
  image_ref: string;
}

/** One wireframe edge, projected: [[u0, v0], [u1, v1]]. */
export type Segment = number[][];

export interface OverlayDoc {
  frame: number;
  box_segments: Segment[];
  keypoints: (number[] | null)[];
}

export interface NudgeResponse extends PoseResponse {
  overlays: OverlayDoc[];
}

export type Axis = "x" | "y" | "z";

export interface NudgeRequest {
  axis: Axis;
  delta_deg?: number;
  delta_cm?: number;
  expected_revision?: number;
}

// ============================================
// ERRORS
// ============================================

/** Another editor won the revision race; carries the winning state. */
export class ConflictError extends Error {
  constructor(
    public readonly pose: PoseDoc,
    public readonly revision: number,
  ) {
    super(`stale revision, server is at ${revision}`);
    this.name = "ConflictError";
  }
}

/** Server unreachable or responded with a transport-level failure. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`annotation service unreachable: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(`service error ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

// ============================================
// CLIENT
// ============================================

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

/**
 * Thin typed wrapper over the annotation service routes. Every pose the UI
 * ever displays comes out of one of these calls unmodified; the client does
 * no geometry of its own.
 */
export class AnnotationApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) =>
      globalThis.fetch(url, init),
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    let res;
    try {
      res = await this.fetchFn(this.baseUrl + path, body === undefined
        ? undefined
        : {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
          });
    } catch (err) {
      throw new NetworkError(err);
    }
    const doc = (await res.json()) as Record<string, unknown>;
    if (res.status === 409) {
      throw new ConflictError(doc.pose as PoseDoc, doc.revision as number);
    }
    if (!res.ok) {
      throw new ApiError(res.status, JSON.stringify(doc));
    }
    return doc as T;
  }

  sequences(): Promise<{ sequences: string[] }> {
    return this.request("/sequences");
  }

  keyframes(seq: string): Promise<{ keyframes: KeyframeRef[] }> {
    return this.request(`/sequences/${seq}/keyframes`);
  }

  getPose(seq: string, obj: string): Promise<PoseResponse> {
    return this.request(`/sequences/${seq}/objects/${obj}/pose`);
  }

  setPose(
    seq: string,
    obj: string,
    pose: PoseDoc,
    expectedRevision: number,
  ): Promise<PoseResponse> {
    return this.request(`/sequences/${seq}/objects/${obj}/pose`, {
      pose,
      expected_revision: expectedRevision,
    });
  }

  nudge(seq: string, obj: string, req: NudgeRequest): Promise<NudgeResponse> {
    return this.request(`/sequences/${seq}/objects/${obj}/nudge`, req);
  }

  overlay(seq: string, obj: string, frame: number): Promise<OverlayDoc> {
    return this.request(
      `/sequences/${seq}/objects/${obj}/overlay?frame=${frame}`,
    );
  }
}
