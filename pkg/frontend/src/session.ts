import {
  BrushState,
  boundingSphereRadius,
  brushTargetClass,
  verticesWithinBrush,
} from "./brush.js";
import { ClassDef } from "./types.js";

/** One undoable label change: the touched vertices with both label states. */
export interface StrokeDiff {
  indices: Int32Array;
  before: Int32Array;
  after: Int32Array;
}

/**
 * In-memory annotation state: the working per-vertex label map plus undo
 * and redo stacks of stroke diffs. Rendering never goes through this class;
 * only paint/erase/undo/redo/replace mutate labels.
 */
export class AnnotationSession {
  readonly labels: Int32Array;
  readonly classTable: Map<number, ClassDef>;
  dirty = false;

  private readonly positions: Float32Array;
  private readonly meshRadius: number;
  private undoStack: StrokeDiff[] = [];
  private redoStack: StrokeDiff[] = [];

  constructor(
    positions: Float32Array,
    classes: ClassDef[],
    initialLabels?: ArrayLike<number>,
  ) {
    this.positions = positions;
    this.meshRadius = boundingSphereRadius(positions);
    this.classTable = new Map(classes.map((c) => [c.id, c]));
    this.labels = new Int32Array(positions.length / 3);
    if (initialLabels !== undefined) {
      if (initialLabels.length !== this.labels.length) {
        throw new Error(
          `label list has ${initialLabels.length} entries, mesh has ${this.labels.length} vertices`,
        );
      }
      this.labels.set(initialLabels);
    }
  }

  get vertexCount(): number {
    return this.labels.length;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  get redoDepth(): number {
    return this.redoStack.length;
  }

  /**
   * Apply one brush application at a surface hit point. Every vertex within
   * the brush's world radius is set to the brush target class. Records one
   * undoable diff; returns null (and records nothing) when no vertex label
   * actually changes. A new stroke clears the redo stack.
   */
  paintStroke(
    hit: readonly [number, number, number],
    brush: BrushState,
  ): StrokeDiff | null {
    const target = brushTargetClass(brush);
    if (brush.mode === "paint" && !this.classTable.has(target)) {
      throw new Error(`unknown class id ${target}`);
    }
    const worldRadius = brush.radius * this.meshRadius;
    const touched = verticesWithinBrush(this.positions, hit, worldRadius);
    const changed = touched.filter((i) => this.labels[i] !== target);
    if (changed.length === 0) return null;

    const diff: StrokeDiff = {
      indices: Int32Array.from(changed),
      before: Int32Array.from(changed, (i) => this.labels[i]),
      after: Int32Array.from(changed, () => target),
    };
    for (const i of changed) this.labels[i] = target;
    this.undoStack.push(diff);
    this.redoStack = [];
    this.dirty = true;
    return diff;
  }

  /** Revert the most recent stroke exactly; returns the diff undone. */
  undo(): StrokeDiff | null {
    const diff = this.undoStack.pop();
    if (!diff) return null;
    diff.indices.forEach((v, k) => {
      this.labels[v] = diff.before[k];
    });
    this.redoStack.push(diff);
    this.dirty = true;
    return diff;
  }

  /** Re-apply the most recently undone stroke exactly. */
  redo(): StrokeDiff | null {
    const diff = this.redoStack.pop();
    if (!diff) return null;
    diff.indices.forEach((v, k) => {
      this.labels[v] = diff.after[k];
    });
    this.undoStack.push(diff);
    this.dirty = true;
    return diff;
  }

  /** Replace the whole map (import from backend); clears both stacks. */
  replaceLabels(labels: ArrayLike<number>): void {
    if (labels.length !== this.labels.length) {
      throw new Error(
        `label list has ${labels.length} entries, mesh has ${this.labels.length} vertices`,
      );
    }
    this.labels.set(labels);
    this.undoStack = [];
    this.redoStack = [];
    this.dirty = false;
  }

  labeledCount(): number {
    let n = 0;
    for (const v of this.labels) if (v !== 0) n++;
    return n;
  }

  exportPayload(): { labels: number[] } {
    return { labels: Array.from(this.labels) };
  }

  /** Called after the backend accepted an export. */
  markSaved(): void {
    this.dirty = false;
  }
}
