/**
 * Session state machine, independent of the DOM.
 *
 * Rules enforced here:
 *  - the displayed pair is always the server's current pair; after any
 *    conflict the flow resyncs from the server cursor;
 *  - input stays disabled until both images have loaded AND the minimum
 *    viewing time has elapsed;
 *  - a single request is in flight at a time; extra keystrokes while a
 *    judgment is pending are dropped (the server rejects replays anyway);
 *  - the UI advances only on acknowledgement, never optimistically.
 */

import {
  ConflictError,
  JudgmentAck,
  NextPair,
  SessionInfo,
} from "./protocol.js";

/** The slice of the protocol client the flow depends on. */
export interface FlowClient {
  createSession(subjectId: string, seed?: number, sessionId?: string): Promise<SessionInfo>;
  nextPair(sessionId: string): Promise<NextPair>;
  submitJudgment(
    sessionId: string,
    referenceId: string,
    images: [string, string],
    chosen: string,
    cursor: number,
  ): Promise<JudgmentAck>;
  progress(sessionId: string): Promise<SessionInfo>;
}

export type FlowState =
  | "idle"
  | "loading"
  | "showing"
  | "submitting"
  | "completed"
  | "error";

export interface FlowView {
  state: FlowState;
  pair: NextPair | null;
  cursor: number;
  total: number;
  error: string | null;
}

export interface Clock {
  now(): number;
}

export interface FlowOptions {
  subjectId: string;
  seed?: number;
  sessionId?: string;
  minViewMs?: number;
  clock?: Clock;
}

const DEFAULT_MIN_VIEW_MS = 300;

export class SessionFlow {
  readonly minViewMs: number;
  private readonly clock: Clock;
  private state: FlowState = "idle";
  private sessionId: string | null = null;
  private pair: NextPair | null = null;
  private cursor = 0;
  private total = 0;
  private lastError: string | null = null;
  private imagesReady = false;
  private shownAt = 0;
  private listeners: Array<(view: FlowView) => void> = [];

  constructor(
    private readonly client: FlowClient,
    private readonly options: FlowOptions,
  ) {
    this.minViewMs = options.minViewMs ?? DEFAULT_MIN_VIEW_MS;
    this.clock = options.clock ?? { now: () => Date.now() };
  }

  get view(): FlowView {
    return {
      state: this.state,
      pair: this.pair,
      cursor: this.cursor,
      total: this.total,
      error: this.lastError,
    };
  }

  get session(): string | null {
    return this.sessionId;
  }

  onChange(listener: (view: FlowView) => void): void {
    this.listeners.push(listener);
  }

  private emit(): FlowView {
    const view = this.view;
    for (const listener of this.listeners) listener(view);
    return view;
  }

  private fail(error: unknown): FlowView {
    this.state = "error";
    this.lastError = error instanceof Error ? error.message : String(error);
    return this.emit();
  }

  /** Create the session (or resume an existing one) and show its pair. */
  async start(): Promise<FlowView> {
    this.state = "loading";
    this.lastError = null;
    this.emit();
    try {
      if (this.options.sessionId) {
        // Resume: the server cursor is the source of truth after a reload.
        const info = await this.client.progress(this.options.sessionId);
        this.sessionId = info.session_id;
      } else {
        const info = await this.client.createSession(
          this.options.subjectId,
          this.options.seed,
        );
        this.sessionId = info.session_id;
      }
      return await this.refresh();
    } catch (error) {
      return this.fail(error);
    }
  }

  /** Fetch the server's current pair and show it. */
  async refresh(): Promise<FlowView> {
    if (this.sessionId === null) return this.start();
    try {
      const next = await this.client.nextPair(this.sessionId);
      this.cursor = next.cursor;
      this.total = next.total;
      if (next.completed) {
        this.state = "completed";
        this.pair = null;
      } else {
        this.state = "showing";
        this.pair = next;
        this.imagesReady = false;
        this.shownAt = this.clock.now();
      }
      this.lastError = null;
      return this.emit();
    } catch (error) {
      return this.fail(error);
    }
  }

  /** Signal that both candidate images finished loading. */
  imagesLoaded(): void {
    if (this.state === "showing") {
      this.imagesReady = true;
      this.emit();
    }
  }

  /** True once a choice would be accepted rather than ignored. */
  canAcceptInput(): boolean {
    return (
      this.state === "showing" &&
      this.imagesReady &&
      this.clock.now() - this.shownAt >= this.minViewMs
    );
  }

  /**
   * Submit the image on the given side.  Ignored (returns the unchanged
   * view) while images are loading, during the minimum viewing time, or
   * while another judgment is in flight.
   */
  async choose(side: "left" | "right"): Promise<FlowView> {
    if (!this.canAcceptInput() || this.pair === null || this.sessionId === null) {
      return this.view;
    }
    const pair = this.pair;
    const chosen = side === "left" ? pair.left! : pair.right!;
    this.state = "submitting";
    this.emit();
    try {
      await this.client.submitJudgment(
        this.sessionId,
        pair.reference_id!,
        [pair.left!, pair.right!],
        chosen,
        pair.cursor,
      );
      return await this.refresh();
    } catch (error) {
      if (error instanceof ConflictError) {
        // Someone advanced this session elsewhere: resync, do not retry.
        return await this.refresh();
      }
      return this.fail(error);
    }
  }
}
