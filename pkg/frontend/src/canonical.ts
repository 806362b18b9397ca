// Canonical state serialization, byte-compatible with the broker.
//
// Floats render as fixed 9-fraction-digit decimals (half-even on the scaled
// double), integers stay bare, keys sort by code point, non-ASCII escapes as
// \uXXXX. Two states serialize identically iff they are the same state.

import { SessionState, Slide, cmpCodePoint } from './state.js';

export function roundHalfEven(v: number): number {
  const f = Math.floor(v);
  const diff = v - f; // exact: f <= v < f + 1
  if (diff > 0.5) return f + 1;
  if (diff < 0.5) return f;
  return f % 2 === 0 ? f : f + 1;
}

export function fixed9(x: number): string {
  const n = roundHalfEven(x * 1e9);
  if (n === 0) return '0.000000000'; // covers -0
  const sign = n < 0 ? '-' : '';
  const b = BigInt(n < 0 ? -n : n);
  const whole = b / 1000000000n;
  const frac = b % 1000000000n;
  return `${sign}${whole}.${String(frac).padStart(9, '0')}`;
}

// JSON string literal with every char >= 0x7f escaped, lowercase hex
export function jstr(s: string): string {
  return JSON.stringify(s).replace(
    /[-￿]/g,
    (c) => '\\u' + c.charCodeAt(0).toString(16).padStart(4, '0'),
  );
}

// wire-op fields holding sequence numbers and timestamps; everything else
// numeric in a session document is a coordinate-like float
const INT_KEYS = new Set(['op', 't', 'v']);

function canonValue(v: unknown, key: string | null): string {
  if (v === null) return 'null';
  switch (typeof v) {
    case 'boolean':
      return v ? 'true' : 'false';
    case 'number':
      if (key !== null && INT_KEYS.has(key)) {
        if (!Number.isInteger(v)) throw new Error(`non-integer at int field ${key}`);
        return String(v);
      }
      return '"' + fixed9(v) + '"';
    case 'string':
      return jstr(v);
  }
  if (Array.isArray(v)) {
    return '[' + v.map((x) => canonValue(x, null)).join(',') + ']';
  }
  if (v instanceof Map) {
    return canonDict([...(v as Map<string, unknown>).entries()]);
  }
  if (typeof v === 'object') {
    return canonDict(Object.entries(v as Record<string, unknown>));
  }
  throw new Error(`cannot serialize ${typeof v}`);
}

function canonDict(entries: [string, unknown][]): string {
  entries.sort((a, b) => cmpCodePoint(a[0], b[0]));
  return '{' + entries.map(([k, v]) => jstr(k) + ':' + canonValue(v, k)).join(',') + '}';
}

function slideDoc(s: Slide): Record<string, unknown> {
  return { slide_id: s.slideId, name: s.name, ops: s.ops };
}

export function canonicalString(state: SessionState, includeParticipants = false): string {
  const doc = new Map<string, unknown>();
  doc.set('active_model', state.activeModel);
  doc.set('cut_plane', state.cutPlane);
  doc.set('node_transforms', state.nodeTransforms);
  doc.set('node_visibility', state.nodeVisibility);
  doc.set('poi', state.poi);
  doc.set('slides', new Map([...state.slides].map(([sid, s]) => [sid, slideDoc(s)])));
  doc.set('whole_transform', state.wholeTransform);
  if (includeParticipants) doc.set('participants', state.participants);
  return canonValue(doc, null);
}
