// Reduction editor preview.
//
// Re-runs remove and style steps client side against the hierarchy summary
// so the triangle counter updates without a server round trip. Selection and
// counting follow the broker's rules, so for remove/style-only plans the
// preview count matches the server's post-reduction count exactly. Steps the
// client cannot evaluate from a summary (visibility_cull, box_cut) keep the
// count unchanged and flag the preview as an estimate.

import { cmpCodePoint } from './state.js';

export class PreviewError extends Error {}

export interface SummaryNode {
  id: string;
  name: string;
  nodeType: string;
  parent: string | null;
  children: string[];
  triangles: number;
  // own world-space bounds [[minx,miny,minz],[maxx,maxy,maxz]], null when
  // the node carries no geometry
  bounds: [number[], number[]] | null;
}

export interface SummaryModel {
  modelId: string;
  root: string;
  nodes: Map<string, SummaryNode>;
}

export interface StepPreview {
  index: number;
  kind: string;
  removed: string[];
  triangleDelta: number;
  estimated: boolean;
}

export interface PlanPreview {
  initialTriangles: number;
  finalTriangles: number;
  verdict: 'under_ideal' | 'under_hard' | 'over';
  estimated: boolean;
  steps: StepPreview[];
}

export const DEFAULT_IDEAL_BUDGET = 2_000_000;
export const DEFAULT_HARD_BUDGET = 3_000_000;

export function loadSummary(doc: any): SummaryModel {
  const nodes = new Map<string, SummaryNode>();
  for (const n of doc.nodes) {
    nodes.set(n.id, {
      id: n.id,
      name: n.name,
      nodeType: n.node_type,
      parent: n.parent ?? null,
      children: n.children ?? [],
      triangles: n.triangles,
      bounds: n.bounds ?? null,
    });
  }
  return { modelId: doc.model_id, root: doc.root, nodes };
}

function* iterSubtree(model: SummaryModel, alive: Set<string>, nodeId: string): Generator<string> {
  const stack = [nodeId];
  while (stack.length > 0) {
    const nid = stack.pop() as string;
    if (!alive.has(nid)) continue;
    yield nid;
    const kids = (model.nodes.get(nid) as SummaryNode).children;
    for (let i = kids.length - 1; i >= 0; i--) stack.push(kids[i]);
  }
}

type Box = [number[], number[]];

function unionBox(a: Box | null, b: Box | null): Box | null {
  if (a === null) return b;
  if (b === null) return a;
  return [
    [Math.min(a[0][0], b[0][0]), Math.min(a[0][1], b[0][1]), Math.min(a[0][2], b[0][2])],
    [Math.max(a[1][0], b[1][0]), Math.max(a[1][1], b[1][1]), Math.max(a[1][2], b[1][2])],
  ];
}

function diagonal(b: Box): number {
  const dx = b[1][0] - b[0][0];
  const dy = b[1][1] - b[0][1];
  const dz = b[1][2] - b[0][2];
  return Math.sqrt(dx * dx + dy * dy + dz * dz);
}

// world-space bounds of every alive node's subtree, bottom-up
function subtreeBounds(model: SummaryModel, alive: Set<string>): Map<string, Box | null> {
  const order = [...iterSubtree(model, alive, model.root)];
  const agg = new Map<string, Box | null>();
  for (let i = order.length - 1; i >= 0; i--) {
    const nid = order[i];
    const node = model.nodes.get(nid) as SummaryNode;
    let b = node.bounds;
    for (const child of node.children) {
      if (!alive.has(child)) continue;
      b = unionBox(b, agg.get(child) ?? null);
    }
    agg.set(nid, b);
  }
  return agg;
}

function selectBySize(model: SummaryModel, alive: Set<string>, threshold: number): Set<string> {
  const bounds = subtreeBounds(model, alive);
  const out = new Set<string>();
  for (const nid of alive) {
    const node = model.nodes.get(nid) as SummaryNode;
    if (nid === model.root || node.bounds === null) continue;
    const b = bounds.get(nid) ?? null;
    if (b === null) continue;
    if (diagonal(b) < threshold) out.add(nid);
  }
  return out;
}

function selectByName(
  model: SummaryModel,
  alive: Set<string>,
  pattern: string,
  isRegex: boolean,
): Set<string> {
  let match: (name: string) => boolean;
  if (isRegex) {
    let rx: RegExp;
    try {
      rx = new RegExp(pattern);
    } catch (e) {
      throw new PreviewError(`invalid regex ${JSON.stringify(pattern)}: ${e}`);
    }
    match = (name) => rx.test(name);
  } else {
    match = (name) => name.includes(pattern);
  }
  const out = new Set<string>();
  for (const nid of alive) {
    if (nid !== model.root && match((model.nodes.get(nid) as SummaryNode).name)) out.add(nid);
  }
  return out;
}

function selectByType(model: SummaryModel, alive: Set<string>, nodeType: string): Set<string> {
  const out = new Set<string>();
  for (const nid of alive) {
    if (nid !== model.root && (model.nodes.get(nid) as SummaryNode).nodeType === nodeType) {
      out.add(nid);
    }
  }
  return out;
}

// kill the subtrees rooted at ids; returns nothing, mutates alive
function removeSubtrees(model: SummaryModel, alive: Set<string>, ids: Set<string>): void {
  const doomed = new Set<string>();
  for (const nid of ids) {
    if (!alive.has(nid)) throw new PreviewError(`unknown node id ${JSON.stringify(nid)}`);
    for (const d of iterSubtree(model, alive, nid)) doomed.add(d);
  }
  if (doomed.has(model.root)) throw new PreviewError('cannot remove the root node');
  for (const d of doomed) alive.delete(d);
}

function aliveTriangles(model: SummaryModel, alive: Set<string>): number {
  let total = 0;
  for (const nid of alive) total += (model.nodes.get(nid) as SummaryNode).triangles;
  return total;
}

function checkIds(alive: Set<string>, ids: string[], kind: string): Set<string> {
  const set = new Set(ids);
  const unknown = [...set].filter((nid) => !alive.has(nid)).sort(cmpCodePoint);
  if (unknown.length > 0) {
    throw new PreviewError(`${kind}: unknown nodes ${JSON.stringify(unknown)}`);
  }
  return set;
}

export function previewPlan(model: SummaryModel, plan: any): PlanPreview {
  if (!Array.isArray(plan.steps)) throw new PreviewError('plan has no steps');
  const idealBudget = plan.ideal_budget ?? DEFAULT_IDEAL_BUDGET;
  const hardBudget = plan.hard_budget ?? DEFAULT_HARD_BUDGET;

  const alive = new Set(model.nodes.keys());
  const initial = aliveTriangles(model, alive);
  let before = initial;
  let estimatedAny = false;
  const steps: StepPreview[] = [];

  plan.steps.forEach((step: any, i: number) => {
    let removed: Set<string>;
    let estimated = false;
    try {
      switch (step.kind) {
        case 'remove_nodes':
          removed = checkIds(alive, step.ids, 'remove_nodes');
          removeSubtrees(model, alive, removed);
          break;
        case 'remove_by_size':
          removed = selectBySize(model, alive, step.threshold);
          if (removed.size > 0) removeSubtrees(model, alive, removed);
          break;
        case 'remove_by_name':
          removed = selectByName(model, alive, step.pattern, step.is_regex ?? false);
          if (removed.size > 0) removeSubtrees(model, alive, removed);
          break;
        case 'remove_by_type':
          removed = selectByType(model, alive, step.node_type);
          if (removed.size > 0) removeSubtrees(model, alive, removed);
          break;
        case 'set_color':
        case 'set_opacity':
        case 'set_occlusion_only':
          checkIds(alive, step.ids, step.kind);
          removed = new Set();
          break;
        case 'visibility_cull':
        case 'box_cut':
          // needs real geometry; the server computes it, the preview shows
          // the pre-step count with an estimate badge
          removed = new Set();
          estimated = true;
          estimatedAny = true;
          break;
        default:
          throw new PreviewError(`unknown step kind ${JSON.stringify(step.kind)}`);
      }
    } catch (e) {
      if (e instanceof PreviewError) {
        throw new PreviewError(`step ${i} (${step.kind}): ${e.message}`);
      }
      throw e;
    }
    const after = aliveTriangles(model, alive);
    steps.push({
      index: i,
      kind: step.kind,
      removed: [...removed].sort(cmpCodePoint),
      triangleDelta: before - after,
      estimated,
    });
    before = after;
  });

  let verdict: PlanPreview['verdict'];
  if (before <= idealBudget) verdict = 'under_ideal';
  else if (before <= hardBudget) verdict = 'under_hard';
  else verdict = 'over';

  return {
    initialTriangles: initial,
    finalTriangles: before,
    verdict,
    estimated: estimatedAny,
    steps,
  };
}

// triangle counter badge color against the session budgets
export function counterColor(
  triangles: number,
  ideal = DEFAULT_IDEAL_BUDGET,
  hard = DEFAULT_HARD_BUDGET,
): 'green' | 'amber' | 'red' {
  if (triangles <= ideal) return 'green';
  if (triangles <= hard) return 'amber';
  return 'red';
}
