// Materialized session state, derived purely by folding ops.
//
// This mirrors the broker's fold semantics exactly: same handlers, same
// defaulting rules, same slide snapshot emission. Both sides serialize to
// the same canonical bytes, which is what the golden vector suite checks.

import { OpKind, ProtocolError, SessionOp, WireOp, validateWireOp } from './wire.js';

export interface Transform {
  t: number[];
  q: number[];
  s: number[];
}

export interface Slide {
  slideId: string;
  name: string;
  ops: WireOp[];
}

export interface Participant {
  name: string;
  kind: string;
  pose: { t: number[]; q: number[] } | null;
}

export interface CutPlane {
  axis: string;
  offset: number;
}

export interface Poi {
  position: number[];
  anchor: string | null;
  placer: string;
}

export function identityTransform(): Transform {
  return { t: [0, 0, 0], q: [1, 0, 0, 0], s: [1, 1, 1] };
}

const IDENTITY = identityTransform();

export function isIdentityTransform(tr: Transform): boolean {
  // numeric comparison, so -0 counts as 0
  const { t, q, s } = tr;
  return (
    t[0] === 0 && t[1] === 0 && t[2] === 0 &&
    q[0] === 1 && q[1] === 0 && q[2] === 0 && q[3] === 0 &&
    s[0] === 1 && s[1] === 1 && s[2] === 1
  );
}

export class SessionState {
  activeModel: string | null = null;
  wholeTransform: Transform = identityTransform();
  nodeTransforms = new Map<string, Transform>();
  nodeVisibility = new Map<string, boolean>();
  cutPlane: CutPlane | null = null;
  poi: Poi | null = null;
  slides = new Map<string, Slide>();
  participants = new Map<string, Participant>();
  appliedOpId = 0;

  copy(): SessionState {
    const out = new SessionState();
    out.activeModel = this.activeModel;
    out.wholeTransform = this.wholeTransform;
    out.nodeTransforms = new Map(this.nodeTransforms);
    out.nodeVisibility = new Map(this.nodeVisibility);
    out.cutPlane = this.cutPlane;
    out.poi = this.poi;
    out.slides = new Map(this.slides);
    out.participants = new Map(this.participants);
    out.appliedOpId = this.appliedOpId;
    return out;
  }
}

export function emptyState(): SessionState {
  return new SessionState();
}

export function applyInto(state: SessionState, op: SessionOp): void {
  if (op.opId !== 0) {
    if (op.opId <= state.appliedOpId) {
      throw new ProtocolError(`out-of-order op ${op.opId} after ${state.appliedOpId}`);
    }
    state.appliedOpId = op.opId;
  }
  applyKind(state, op.kind, op.body, op.clientId, op.opId);
}

export function applyOp(state: SessionState, op: SessionOp): SessionState {
  const out = state.copy();
  applyInto(out, op);
  return out;
}

export function foldOps(ops: Iterable<SessionOp>, state?: SessionState): SessionState {
  const out = state === undefined ? emptyState() : state.copy();
  for (const op of ops) applyInto(out, op);
  return out;
}

const AXIS_INDEX: Record<string, number> = { X: 0, Y: 1, Z: 2 };

function applyKind(
  state: SessionState,
  kind: OpKind,
  body: Record<string, unknown>,
  cid: string,
  opId: number,
): void {
  switch (kind) {
    case 'transform_node':
      state.nodeTransforms.set(body.node_id as string, body.transform as Transform);
      break;
    case 'set_node_visibility':
      state.nodeVisibility.set(body.node_id as string, body.visible as boolean);
      break;
    case 'nudge_transform':
      applyNudge(state, body);
      break;
    case 'transform_whole':
      state.wholeTransform = body.transform as Transform;
      break;
    case 'set_scale': {
      const w = state.wholeTransform;
      const f = body.factor as number;
      state.wholeTransform = { t: w.t, q: w.q, s: [f, f, f] };
      break;
    }
    case 'set_active_model':
      state.activeModel = body.model_id as string;
      break;
    case 'set_cut_plane':
      state.cutPlane = body.enabled
        ? { axis: body.axis as string, offset: body.offset as number }
        : null;
      break;
    case 'place_poi':
      state.poi = {
        position: body.position as number[],
        anchor: (body.anchor ?? null) as string | null,
        placer: cid,
      };
      break;
    case 'clear_poi':
      state.poi = null;
      break;
    case 'create_slide':
      applyCreateSlide(state, body, opId);
      break;
    case 'load_slide':
      applyLoadSlide(state, body);
      break;
    case 'delete_slide': {
      // deleting a slide that is already gone is not an error
      state.slides.delete(body.slide_id as string);
      break;
    }
    case 'participant_pose': {
      const entry = state.participants.get(cid) ?? { name: '', kind: '', pose: null };
      state.participants.set(cid, {
        name: entry.name,
        kind: entry.kind,
        pose: body.pose as { t: number[]; q: number[] },
      });
      break;
    }
    case 'join':
      state.participants.set(cid, {
        name: body.name as string,
        kind: body.kind as string,
        pose: null,
      });
      break;
    case 'leave':
      state.participants.delete(cid);
      break;
  }
}

function applyNudge(state: SessionState, body: Record<string, unknown>): void {
  const axis = body.axis as string;
  const delta = body.delta as number | number[];
  let dv: number[];
  if (axis === 'free') {
    dv = delta as number[];
  } else {
    dv = [0, 0, 0];
    dv[AXIS_INDEX[axis]] = delta as number;
  }
  const target = body.target as string;
  const base =
    target === '' ? state.wholeTransform : state.nodeTransforms.get(target) ?? IDENTITY;
  const t = base.t;
  const moved: Transform = {
    t: [t[0] + dv[0], t[1] + dv[1], t[2] + dv[2]],
    q: base.q,
    s: base.s,
  };
  if (target === '') {
    state.wholeTransform = moved;
  } else {
    state.nodeTransforms.set(target, moved);
  }
}

function applyCreateSlide(state: SessionState, body: Record<string, unknown>, opId: number): void {
  if ('ops' in body) {
    // server-enriched op: snapshot travels with the message
    if (typeof body.slide_id !== 'string') {
      throw new ProtocolError('create_slide with ops requires slide_id');
    }
    const sid = body.slide_id;
    state.slides.set(sid, { slideId: sid, name: body.name as string, ops: body.ops as WireOp[] });
  } else {
    // bare client request: snapshot current model dimensions locally; an
    // empty slide_id string falls back to the generated id
    const sid = (body.slide_id as string | undefined) || `s${opId}`;
    state.slides.set(sid, { slideId: sid, name: body.name as string, ops: snapshotOps(state) });
  }
}

function applyLoadSlide(state: SessionState, body: Record<string, unknown>): void {
  const sid = body.slide_id as string;
  const slide = state.slides.get(sid);
  if (slide === undefined) return; // unknown slide: ignore
  // model dimensions are replaced wholesale; participants and the slide
  // collection survive
  const fresh = emptyState();
  for (const wire of slide.ops) {
    applyKind(fresh, wire.type, wire.body, wire.cid, 0);
  }
  state.activeModel = fresh.activeModel;
  state.wholeTransform = fresh.wholeTransform;
  state.nodeTransforms = fresh.nodeTransforms;
  state.nodeVisibility = fresh.nodeVisibility;
  state.cutPlane = fresh.cutPlane;
  state.poi = fresh.poi;
}

// sort by code point, matching the broker's key ordering
export function cmpCodePoint(a: string, b: string): number {
  const A = Array.from(a);
  const B = Array.from(b);
  const n = Math.min(A.length, B.length);
  for (let i = 0; i < n; i++) {
    const ca = A[i].codePointAt(0) as number;
    const cb = B[i].codePointAt(0) as number;
    if (ca !== cb) return ca - cb;
  }
  return A.length - B.length;
}

export function sortedKeys<T>(m: Map<string, T>): string[] {
  return [...m.keys()].sort(cmpCodePoint);
}

export function snapshotOps(state: SessionState): WireOp[] {
  return emitStateOps(state, false);
}

function emitStateOps(state: SessionState, includeSlides: boolean): WireOp[] {
  const out: WireOp[] = [];
  const emit = (type: OpKind, body: Record<string, unknown>, cid = 'squash') => {
    out.push({ v: 1, op: out.length + 1, cid, t: 0, type, body });
  };

  if (state.activeModel !== null) {
    emit('set_active_model', { model_id: state.activeModel });
  }
  if (!isIdentityTransform(state.wholeTransform)) {
    emit('transform_whole', { transform: state.wholeTransform });
  }
  for (const nid of sortedKeys(state.nodeTransforms)) {
    emit('transform_node', { node_id: nid, transform: state.nodeTransforms.get(nid) });
  }
  for (const nid of sortedKeys(state.nodeVisibility)) {
    emit('set_node_visibility', { node_id: nid, visible: state.nodeVisibility.get(nid) });
  }
  if (state.cutPlane !== null) {
    emit('set_cut_plane', {
      axis: state.cutPlane.axis,
      offset: state.cutPlane.offset,
      enabled: true,
    });
  }
  if (state.poi !== null) {
    emit(
      'place_poi',
      { position: state.poi.position, anchor: state.poi.anchor },
      state.poi.placer,
    );
  }
  if (includeSlides) {
    for (const sid of sortedKeys(state.slides)) {
      const s = state.slides.get(sid) as Slide;
      emit('create_slide', { slide_id: sid, name: s.name, ops: s.ops });
    }
  }
  return out;
}

export function squashState(state: SessionState): WireOp[] {
  return emitStateOps(state, true);
}

export function opFromWire(w: WireOp): SessionOp {
  return { opId: w.op, clientId: w.cid, wallTime: w.t, kind: w.type, body: w.body };
}

export function foldBundle(bundle: unknown[], state?: SessionState): SessionState {
  const out = state === undefined ? emptyState() : state.copy();
  for (const raw of bundle) {
    if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
      throw new ProtocolError('bundle op must be an object');
    }
    applyInto(out, opFromWire(validateWireOp(raw as Record<string, unknown>)));
  }
  return out;
}
