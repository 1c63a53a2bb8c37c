// Labeling state for one displayed patch: per-class yes/no toggles that
// all must be set before submit, and a display-to-submit timer on a
// monotonic clock. Framework-free so the logic is directly testable.

import type { LabelSubmission } from "./types.js";

export type Toggle = "present" | "absent" | "unset";

export type Clock = () => number;

export class PatchLabeling {
  private toggles: Toggle[];
  private displayedAt: number | null = null;

  constructor(
    readonly patchId: string,
    readonly classes: string[],
    private readonly clock: Clock = () => performance.now(),
  ) {
    this.toggles = classes.map(() => "unset");
  }

  /** Marks the patch as shown; the timer starts here, not at fetch. */
  display(): void {
    if (this.displayedAt === null) this.displayedAt = this.clock();
  }

  get displayed(): boolean {
    return this.displayedAt !== null;
  }

  state(index: number): Toggle {
    const t = this.toggles[index];
    if (t === undefined) throw new RangeError(`class index ${index} out of range`);
    return t;
  }

  set(index: number, state: Toggle): void {
    if (index < 0 || index >= this.toggles.length) {
      throw new RangeError(`class index ${index} out of range`);
    }
    this.toggles[index] = state;
  }

  /** Keyboard semantics: first press marks present, then flips yes/no. */
  cycle(index: number): Toggle {
    const next: Toggle = this.state(index) === "present" ? "absent" : "present";
    this.set(index, next);
    return next;
  }

  /** Submit is allowed only when every class was explicitly decided. */
  get complete(): boolean {
    return this.toggles.every((t) => t !== "unset");
  }

  get unsetClasses(): string[] {
    return this.classes.filter((_, i) => this.toggles[i] === "unset");
  }

  presence(): number[] {
    if (!this.complete) {
      throw new Error(`unset classes: ${this.unsetClasses.join(", ")}`);
    }
    return this.toggles.map((t) => (t === "present" ? 1 : 0));
  }

  elapsedMs(): number {
    if (this.displayedAt === null) throw new Error("patch was never displayed");
    return this.clock() - this.displayedAt;
  }

  submission(annotator: string): LabelSubmission {
    return {
      patch_id: this.patchId,
      annotator,
      presence: this.presence(),
      elapsed_ms: this.elapsedMs(),
    };
  }
}
