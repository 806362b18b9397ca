// Frame scheduling for large models.
//
// The model layer is drawn incrementally: nodes are partitioned into batches
// that fit a per-frame triangle budget, and each rendered frame advances one
// batch while the overlay layers (highlight, annotation, floor) redraw every
// frame. A camera or geometry change restarts the model pass at batch zero.

import { cmpCodePoint } from './state.js';

export const DEFAULT_FRAME_BUDGET = 250_000;

export class DrawPlanError extends Error {}

// first-fit-decreasing partition; ties broken by node id so the plan is a
// pure function of its inputs
export function planIterativeDraw(nodes: [string, number][], budget: number): string[][] {
  if (budget < 1) throw new DrawPlanError('draw budget must be at least 1 triangle per frame');
  const order = [...nodes].sort((a, b) => b[1] - a[1] || cmpCodePoint(a[0], b[0]));
  const frames: string[][] = [];
  const sums: number[] = [];
  for (const [nid, tris] of order) {
    let placed = false;
    for (let i = 0; i < frames.length; i++) {
      if (sums[i] + tris <= budget) {
        frames[i].push(nid);
        sums[i] += tris;
        placed = true;
        break;
      }
    }
    if (!placed) {
      frames.push([nid]);
      sums.push(tris);
    }
  }
  return frames;
}

export const LAYERS = ['model', 'highlight', 'annotation', 'floor'] as const;
export type Layer = (typeof LAYERS)[number];

export interface FrameRecord {
  frameIndex: number;
  // node ids newly committed to the model layer this frame; empty once the
  // model pass is complete
  modelBatch: string[];
  batchIndex: number | null;
  // layers whose textures were redrawn this frame; overlays redraw every
  // frame, the model layer only when a batch was committed
  updatedLayers: Layer[];
  modelComplete: boolean;
}

export class FrameScheduler {
  readonly budget: number;
  private plan: string[][] = [];
  private cursor = 0;
  private frameIndex = 0;
  private drawnThisPass = new Set<string>();

  constructor(budget: number = DEFAULT_FRAME_BUDGET) {
    this.budget = budget;
  }

  /** Replace the drawable set (model load, reduction applied, visibility
   * change). Restarts the incremental pass. */
  setNodes(nodes: [string, number][]): void {
    this.plan = planIterativeDraw(nodes, this.budget);
    this.restartPass();
  }

  cameraMoved(): void {
    this.restartPass();
  }

  private restartPass(): void {
    this.cursor = 0;
    this.drawnThisPass.clear();
  }

  get modelComplete(): boolean {
    return this.cursor >= this.plan.length;
  }

  get passBatchCount(): number {
    return this.plan.length;
  }

  renderFrame(): FrameRecord {
    let batch: string[] = [];
    let batchIndex: number | null = null;
    if (!this.modelComplete) {
      batchIndex = this.cursor;
      batch = this.plan[this.cursor];
      for (const nid of batch) {
        if (this.drawnThisPass.has(nid)) {
          throw new DrawPlanError(`node ${nid} drawn twice in one pass`);
        }
        this.drawnThisPass.add(nid);
      }
      this.cursor += 1;
    }
    const updated: Layer[] = ['highlight', 'annotation', 'floor'];
    if (batch.length > 0) updated.unshift('model');
    return {
      frameIndex: this.frameIndex++,
      modelBatch: batch,
      batchIndex,
      updatedLayers: updated,
      modelComplete: this.modelComplete,
    };
  }
}
