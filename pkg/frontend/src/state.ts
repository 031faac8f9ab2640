import {
  AnnotationApi,
  Axis,
  ConflictError,
  KeyframeRef,
  NetworkError,
  NudgeRequest,
  OverlayDoc,
  PoseDoc,
} from "./api.js";

// ============================================
// VIEW STATE
// ============================================

export interface ViewState {
  sequenceId: string | null;
  objectId: string | null;
  keyframes: KeyframeRef[];
  /** Last server-acknowledged pose. The UI never computes a pose locally. */
  pose: PoseDoc | null;
  revision: number;
  overlays: OverlayDoc[];
  stepDeg: number;
  stepCm: number;
  /** Non-blocking conflict / status message, null when clear. */
  notice: string | null;
  /** Set when the service is unreachable; all edit controls disable. */
  readOnly: boolean;
  busy: boolean;
}

export type Listener = (state: ViewState) => void;

/**
 * Single-page client store. All edits round-trip through the annotation
 * service; state only ever holds what the server acknowledged, so a render
 * of this state can never show a pose the server does not have.
 *
 * Concurrency model: at most one edit request in flight; reads may overlap.
 */
export class AnnotatorStore {
  private state: ViewState = {
    sequenceId: null,
    objectId: null,
    keyframes: [],
    pose: null,
    revision: -1,
    overlays: [],
    stepDeg: 1.0,
    stepCm: 0.5,
    notice: null,
    readOnly: false,
    busy: false,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: AnnotationApi) {}

  snapshot(): ViewState {
    return { ...this.state };
  }

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) {
      fn(this.state);
    }
  }

  setSteps(deg: number, cm: number): void {
    this.update({ stepDeg: deg, stepCm: cm });
  }

  dismissNotice(): void {
    this.update({ notice: null });
  }

  /** Load the first sequence/object plus keyframes, pose, and overlays. */
  async init(objectId: string): Promise<void> {
    try {
      const { sequences } = await this.api.sequences();
      const seq = sequences[0];
      const [{ keyframes }, poseDoc] = await Promise.all([
        this.api.keyframes(seq),
        this.api.getPose(seq, objectId),
      ]);
      const overlays = await Promise.all(
        keyframes.map((k) => this.api.overlay(seq, objectId, k.index)),
      );
      this.update({
        sequenceId: seq,
        objectId,
        keyframes,
        pose: poseDoc.pose,
        revision: poseDoc.revision,
        overlays,
        readOnly: false,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  nudgeRotation(axis: Axis, sign: 1 | -1): Promise<void> {
    return this.sendNudge({
      axis,
      delta_deg: sign * this.state.stepDeg,
      expected_revision: this.state.revision,
    });
  }

  nudgeTranslation(axis: Axis, sign: 1 | -1): Promise<void> {
    return this.sendNudge({
      axis,
      delta_cm: sign * this.state.stepCm,
      expected_revision: this.state.revision,
    });
  }

  private async sendNudge(req: NudgeRequest): Promise<void> {
    const { sequenceId, objectId } = this.state;
    if (sequenceId === null || objectId === null) {
      return;
    }
    if (this.state.readOnly || this.state.busy) {
      // one edit in flight at a time; drop rather than queue stale intents
      return;
    }
    this.update({ busy: true });
    try {
      const res = await this.api.nudge(sequenceId, objectId, req);
      this.update({
        pose: res.pose,
        revision: res.revision,
        overlays: res.overlays,
        notice: null,
        busy: false,
      });
    } catch (err) {
      if (err instanceof ConflictError) {
        await this.adoptConflict(err);
      } else {
        this.fail(err);
      }
    }
  }

  /** Someone else edited first: adopt their state, refresh, keep editing. */
  private async adoptConflict(err: ConflictError): Promise<void> {
    const { sequenceId, objectId, keyframes } = this.state;
    let overlays = this.state.overlays;
    try {
      overlays = await Promise.all(
        keyframes.map((k) =>
          this.api.overlay(sequenceId!, objectId!, k.index),
        ),
      );
    } catch {
      // keep stale overlays; the notice already tells the user to re-check
    }
    this.update({
      pose: err.pose,
      revision: err.revision,
      overlays,
      notice: `Edit conflict: another session saved revision ${err.revision}; showing their pose.`,
      busy: false,
    });
  }

  private fail(err: unknown): void {
    const unreachable = err instanceof NetworkError;
    this.update({
      readOnly: unreachable ? true : this.state.readOnly,
      notice: unreachable
        ? "Annotation service unreachable — read-only mode."
        : String(err),
      busy: false,
    });
  }
}
