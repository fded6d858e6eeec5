/** Stroke capture for the sketchpad canvas.
 *
 * A stroke is an ordered list of pointer samples in canvas pixels. The pad
 * is a small state machine driven by pen-down / pen-move / pen-up; undo
 * drops the most recent committed stroke, clear drops everything. Strokes
 * serialize to the same newline-delimited JSON schema the backend parses:
 * one object per line with a "drawing" array of [xs, ys] pairs.
 */

export interface Point {
  x: number;
  y: number;
}

export type Stroke = Point[];

export class SketchPad {
  private committed: Stroke[] = [];
  private active: Stroke | null = null;

  penDown(x: number, y: number): void {
    this.active = [{ x, y }];
  }

  penMove(x: number, y: number): void {
    if (this.active === null) return;
    const last = this.active[this.active.length - 1];
    if (last.x === x && last.y === y) return;
    this.active.push({ x, y });
  }

  /** Commit the active stroke. Strokes with fewer than two samples are
   * discarded (a bare click is not a stroke). Returns true when a stroke
   * was added. */
  penUp(): boolean {
    const stroke = this.active;
    this.active = null;
    if (stroke === null || stroke.length < 2) return false;
    this.committed.push(stroke);
    return true;
  }

  undo(): void {
    this.committed.pop();
  }

  clear(): void {
    this.committed = [];
    this.active = null;
  }

  get strokes(): readonly Stroke[] {
    return this.committed;
  }

  /** The stroke being drawn right now, for live rendering. */
  get pending(): readonly Point[] | null {
    return this.active;
  }

  get isEmpty(): boolean {
    return this.committed.length === 0;
  }
}

/** [xs, ys] pairs, the wire format of the /infer "strokes" field. */
export function toWireStrokes(strokes: readonly Stroke[]): number[][][] {
  return strokes.map((s) => [s.map((p) => p.x), s.map((p) => p.y)]);
}

/** One NDJSON line in the drawing schema the backend sketch parser reads. */
export function toNdjson(strokes: readonly Stroke[], word?: string): string {
  const doc: { drawing: number[][][]; word?: string } = { drawing: toWireStrokes(strokes) };
  if (word !== undefined) doc.word = word;
  return JSON.stringify(doc);
}

/** Parse an NDJSON drawing line back into strokes. Mirrors the backend
 * parser's lenient rule: strokes with fewer than two points are dropped. */
export function parseNdjson(line: string): Stroke[] {
  const doc = JSON.parse(line);
  if (typeof doc !== "object" || doc === null || !Array.isArray(doc.drawing)) {
    throw new Error('missing "drawing" field');
  }
  const strokes: Stroke[] = [];
  for (const pair of doc.drawing) {
    if (!Array.isArray(pair) || pair.length !== 2) throw new Error("expected [xs, ys] pair");
    const [xs, ys] = pair;
    if (xs.length !== ys.length) throw new Error("xs and ys length mismatch");
    if (xs.length < 2) continue;
    strokes.push(xs.map((x: number, i: number) => ({ x, y: ys[i] })));
  }
  return strokes;
}
