// Session wire format: frame decoding and validation.
//
// Every frame is one JSON object {v, op, cid, t, type, body}. The server
// assigns op ids; clients propose with op 0. Validation coerces numeric
// leaves to plain numbers and drops unknown body keys, so a decoded op is
// safe to fold regardless of which peer produced it.

export const WIRE_VERSION = 1;

export const OP_KINDS = [
  'set_active_model',
  'transform_whole',
  'transform_node',
  'nudge_transform',
  'set_scale',
  'set_node_visibility',
  'set_cut_plane',
  'place_poi',
  'clear_poi',
  'create_slide',
  'load_slide',
  'delete_slide',
  'participant_pose',
  'join',
  'leave',
] as const;

export type OpKind = (typeof OP_KINDS)[number];

export class ProtocolError extends Error {}

export interface TransformDict {
  t: number[];
  q: number[];
  s: number[];
}

export interface WireOp {
  v: number;
  op: number;
  cid: string;
  t: number;
  type: OpKind;
  body: Record<string, unknown>;
}

export interface SessionOp {
  opId: number;
  clientId: string;
  wallTime: number;
  kind: OpKind;
  body: Record<string, unknown>;
}

function num(v: unknown, what: string): number {
  if (typeof v !== 'number' || !Number.isFinite(v)) {
    throw new ProtocolError(`${what} must be a number`);
  }
  return v;
}

function vec(v: unknown, n: number, what: string): number[] {
  if (!Array.isArray(v) || v.length !== n) {
    throw new ProtocolError(`${what} must be a list of ${n} numbers`);
  }
  return v.map((x) => num(x, what));
}

function transform(v: unknown, what = 'transform'): TransformDict {
  if (typeof v !== 'object' || v === null || Array.isArray(v)) {
    throw new ProtocolError(`${what} must be an object`);
  }
  const o = v as Record<string, unknown>;
  return {
    t: vec(o.t, 3, `${what}.t`),
    q: vec(o.q, 4, `${what}.q`),
    s: vec(o.s, 3, `${what}.s`),
  };
}

function text(v: unknown, what: string): string {
  if (typeof v !== 'string') throw new ProtocolError(`${what} must be a string`);
  return v;
}

export function validateBody(kind: OpKind, body: Record<string, unknown>): Record<string, unknown> {
  switch (kind) {
    case 'set_active_model':
      return { model_id: text(body.model_id, 'model_id') };
    case 'transform_whole':
      return { transform: transform(body.transform) };
    case 'transform_node':
      return {
        node_id: text(body.node_id, 'node_id'),
        transform: transform(body.transform),
      };
    case 'nudge_transform': {
      const axis = body.axis;
      if (axis !== 'X' && axis !== 'Y' && axis !== 'Z' && axis !== 'free') {
        throw new ProtocolError(`nudge axis must be X, Y, Z or free, got ${JSON.stringify(axis)}`);
      }
      const delta = axis === 'free' ? vec(body.delta, 3, 'delta') : num(body.delta, 'delta');
      // explicit null is rejected, only a missing key defaults
      const target = 'target' in body ? body.target : '';
      return { target: text(target, 'target'), axis, delta };
    }
    case 'set_scale': {
      const f = num(body.factor, 'factor');
      if (f <= 0) throw new ProtocolError('scale factor must be positive');
      return { factor: f };
    }
    case 'set_node_visibility': {
      if (typeof body.visible !== 'boolean') {
        throw new ProtocolError('visible must be a boolean');
      }
      return { node_id: text(body.node_id, 'node_id'), visible: body.visible };
    }
    case 'set_cut_plane': {
      const axis = body.axis;
      if (axis !== 'X' && axis !== 'Y' && axis !== 'Z') {
        throw new ProtocolError(`cut plane axis must be X, Y or Z, got ${JSON.stringify(axis)}`);
      }
      if (typeof body.enabled !== 'boolean') {
        throw new ProtocolError('enabled must be a boolean');
      }
      return { axis, offset: num(body.offset, 'offset'), enabled: body.enabled };
    }
    case 'place_poi': {
      const anchor = body.anchor ?? null;
      if (anchor !== null && typeof anchor !== 'string') {
        throw new ProtocolError('anchor must be a node id or null');
      }
      return { position: vec(body.position, 3, 'position'), anchor };
    }
    case 'clear_poi':
    case 'leave':
      return {};
    case 'create_slide': {
      const out: Record<string, unknown> = { name: text(body.name, 'name') };
      if ('slide_id' in body) out.slide_id = text(body.slide_id, 'slide_id');
      if ('ops' in body) {
        if (!Array.isArray(body.ops)) throw new ProtocolError('slide ops must be a list');
        out.ops = body.ops.map((w) => {
          if (typeof w !== 'object' || w === null || Array.isArray(w)) {
            throw new ProtocolError('slide op must be an object');
          }
          return validateWireOp(w as Record<string, unknown>);
        });
      }
      return out;
    }
    case 'load_slide':
    case 'delete_slide':
      return { slide_id: text(body.slide_id, 'slide_id') };
    case 'participant_pose': {
      const pose = body.pose;
      if (typeof pose !== 'object' || pose === null || Array.isArray(pose)) {
        throw new ProtocolError('pose must be an object');
      }
      const p = pose as Record<string, unknown>;
      return { pose: { t: vec(p.t, 3, 'pose.t'), q: vec(p.q, 4, 'pose.q') } };
    }
    case 'join': {
      const k = body.kind;
      if (k !== 'headset' && k !== 'web') {
        throw new ProtocolError(`participant kind must be headset or web, got ${JSON.stringify(k)}`);
      }
      return { name: text(body.name, 'name'), kind: k };
    }
  }
}

// validates one wire-shaped object (used for slide bodies and hello bundles)
export function validateWireOp(doc: Record<string, unknown>): WireOp {
  if (doc.v !== WIRE_VERSION) {
    throw new ProtocolError(`unsupported wire version ${JSON.stringify(doc.v)}`);
  }
  const kind = doc.type;
  if (typeof kind !== 'string' || !(OP_KINDS as readonly string[]).includes(kind)) {
    throw new ProtocolError(`unknown op type ${JSON.stringify(kind)}`);
  }
  const op = 'op' in doc ? doc.op : 0;
  const t = 't' in doc ? doc.t : 0;
  const cid = 'cid' in doc ? doc.cid : '';
  if (!Number.isInteger(op) || !Number.isInteger(t) || typeof cid !== 'string') {
    throw new ProtocolError('op/t must be integers and cid a string');
  }
  const body = doc.body;
  if (typeof body !== 'object' || body === null || Array.isArray(body)) {
    throw new ProtocolError('body must be an object');
  }
  return {
    v: WIRE_VERSION,
    op: op as number,
    cid,
    t: t as number,
    type: kind as OpKind,
    body: validateBody(kind as OpKind, body as Record<string, unknown>),
  };
}

export function decodeFrame(data: string): SessionOp {
  let doc: unknown;
  try {
    doc = JSON.parse(data);
  } catch (e) {
    throw new ProtocolError(`frame is not valid JSON: ${e}`);
  }
  if (typeof doc !== 'object' || doc === null || Array.isArray(doc)) {
    throw new ProtocolError('frame must be a JSON object');
  }
  const w = validateWireOp(doc as Record<string, unknown>);
  return { opId: w.op, clientId: w.cid, wallTime: w.t, kind: w.type, body: w.body };
}

export function wireDict(op: SessionOp): WireOp {
  return {
    v: WIRE_VERSION,
    op: op.opId,
    cid: op.clientId,
    t: op.wallTime,
    type: op.kind,
    body: op.body,
  };
}

export function encodeFrame(op: SessionOp): string {
  const w = wireDict(op);
  return JSON.stringify({ body: w.body, cid: w.cid, op: w.op, t: w.t, type: w.type, v: w.v });
}
