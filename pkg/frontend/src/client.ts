// Live session client: connects to the broker's session channel, folds the
// op stream into a mirrored SessionState, and sends user commands.
//
// The transport is injectable so tests can drive a client with a scripted
// socket. The default uses the runtime's WebSocket (browser or node).

import { OpKind, ProtocolError, SessionOp, decodeFrame, encodeFrame } from './wire.js';
import { Participant, SessionState, applyInto, emptyState, foldBundle } from './state.js';
import { FollowController } from './follow.js';
import { HierarchyPanel } from './panel.js';
import { Quat, Vec3 } from './viewCube.js';

export interface SocketLike {
  send(data: string): void;
  close(code?: number, reason?: string): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: { code?: number; reason?: string }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  /** ws:// or wss:// base, e.g. "ws://127.0.0.1:8300" */
  baseUrl: string;
  sessionId: string;
  token: string;
  cid: string;
  kind?: 'web' | 'headset';
  name?: string;
  socketFactory?: SocketFactory;
}

export interface Hello {
  session: string;
  client: string;
  role: string;
  head: number;
  readOnly: boolean;
}

export interface ServerError {
  code: string;
  message: string;
}

export class ClientError extends Error {}

export class ConnectError extends Error {
  code: number | undefined;
  constructor(message: string, code?: number) {
    super(message);
    this.code = code;
  }
}

type ConnectionStatus = 'idle' | 'connecting' | 'open' | 'closed';

interface Waiter {
  pred: (state: SessionState) => boolean;
  resolve: () => void;
  reject: (e: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export class SessionClient {
  readonly opts: ClientOptions;
  readonly cid: string;
  state: SessionState = emptyState();
  status: ConnectionStatus = 'idle';
  hello: Hello | null = null;
  errors: ServerError[] = [];
  closeCode: number | undefined;
  follow: FollowController;
  panel = new HierarchyPanel();
  selection = new Set<string>();
  activeTool = 'orbit';
  camera: { position: Vec3; orientation: Quat } = {
    position: [0, 0, 0],
    orientation: [1, 0, 0, 0],
  };
  onOp: ((op: SessionOp) => void) | null = null;
  onNotice: ((notice: string) => void) | null = null;

  private socket: SocketLike | null = null;
  private helloResolve: ((h: Hello) => void) | null = null;
  private helloReject: ((e: Error) => void) | null = null;
  private waiters: Waiter[] = [];

  constructor(opts: ClientOptions) {
    this.opts = opts;
    this.cid = opts.cid;
    this.follow = new FollowController(opts.cid);
  }

  sessionUrl(): string {
    const o = this.opts;
    const q = new URLSearchParams({
      token: o.token,
      cid: o.cid,
      kind: o.kind ?? 'web',
      name: o.name ?? o.cid,
    });
    return `${o.baseUrl}/ws/sessions/${encodeURIComponent(o.sessionId)}?${q.toString()}`;
  }

  connect(): Promise<Hello> {
    if (this.status !== 'idle') {
      return Promise.reject(new ClientError(`connect() while ${this.status}`));
    }
    this.status = 'connecting';
    const factory =
      this.opts.socketFactory ?? ((url: string) => new WebSocket(url) as unknown as SocketLike);
    const sock = factory(this.sessionUrl());
    this.socket = sock;
    sock.onmessage = (ev) => this.handleMessage(String(ev.data));
    sock.onclose = (ev) => this.handleClose(ev?.code, ev?.reason);
    sock.onerror = () => {
      // the close event carries the useful detail; nothing to do here
    };
    return new Promise<Hello>((resolve, reject) => {
      this.helloResolve = resolve;
      this.helloReject = reject;
    });
  }

  private handleMessage(data: string): void {
    let doc: any;
    try {
      doc = JSON.parse(data);
    } catch {
      this.notice(`unparseable frame: ${data.slice(0, 80)}`);
      return;
    }
    if (doc && typeof doc === 'object' && 'hello' in doc) {
      const h = doc.hello;
      this.hello = {
        session: h.session,
        client: h.client,
        role: h.role,
        head: h.head,
        readOnly: h.read_only,
      };
      this.state = foldBundle(h.bundle ?? []);
      this.status = 'open';
      this.poke();
      const resolve = this.helloResolve;
      this.helloResolve = null;
      this.helloReject = null;
      if (resolve) resolve(this.hello);
      return;
    }
    if (doc && typeof doc === 'object' && 'error' in doc) {
      const err: ServerError = { code: doc.error.code, message: doc.error.message };
      this.errors.push(err);
      this.notice(`server error ${err.code}: ${err.message}`);
      return;
    }
    let op: SessionOp;
    try {
      op = decodeFrame(data);
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.notice(`bad frame from server: ${e.message}`);
        return;
      }
      throw e;
    }
    this.applyRemote(op);
  }

  private applyRemote(op: SessionOp): void {
    applyInto(this.state, op);
    this.follow.onOp(op);
    while (this.follow.notices.length > 0) {
      this.notice(this.follow.notices.shift() as string);
    }
    if (this.onOp) this.onOp(op);
    this.poke();
  }

  private handleClose(code?: number, reason?: string): void {
    this.status = 'closed';
    this.closeCode = code;
    if (this.helloReject) {
      const reject = this.helloReject;
      this.helloResolve = null;
      this.helloReject = null;
      reject(new ConnectError(reason || `socket closed before hello (code ${code})`, code));
    }
    for (const w of this.waiters.splice(0)) {
      clearTimeout(w.timer);
      w.reject(new ClientError('socket closed'));
    }
  }

  private notice(text: string): void {
    if (this.onNotice) this.onNotice(text);
  }

  /** Resolves once the mirrored state satisfies the predicate. */
  waitFor(pred: (state: SessionState) => boolean, timeoutMs = 5000): Promise<void> {
    if (pred(this.state)) return Promise.resolve();
    if (this.status === 'closed') {
      return Promise.reject(new ClientError('socket closed'));
    }
    return new Promise((resolve, reject) => {
      const w: Waiter = {
        pred,
        resolve,
        reject,
        timer: setTimeout(() => {
          this.waiters = this.waiters.filter((x) => x !== w);
          reject(new ClientError(`timed out after ${timeoutMs}ms`));
        }, timeoutMs),
      };
      this.waiters.push(w);
    });
  }

  private poke(): void {
    const ready = this.waiters.filter((w) => w.pred(this.state));
    if (ready.length === 0) return;
    this.waiters = this.waiters.filter((w) => !ready.includes(w));
    for (const w of ready) {
      clearTimeout(w.timer);
      w.resolve();
    }
  }

  send(kind: OpKind, body: Record<string, unknown>): void {
    if (this.socket === null || this.status !== 'open') {
      throw new ClientError('not connected');
    }
    this.socket.send(
      encodeFrame({ opId: 0, clientId: this.cid, wallTime: Date.now(), kind, body }),
    );
  }

  close(code = 1000): void {
    if (this.socket !== null) this.socket.close(code);
  }

  // ------------------------------------------------------------- commands

  placePoi(position: Vec3, anchor: string | null = null): void {
    this.send('place_poi', { position, anchor });
  }

  clearPoi(): void {
    this.send('clear_poi', {});
  }

  /** Markers ride the POI channel anchored to the picked node; see
   * marker.ts for the flush orientation math. */
  placeVirtualMarker(position: Vec3, anchor: string): void {
    this.send('place_poi', { position, anchor });
  }

  transformNode(nodeId: string, transform: { t: number[]; q: number[]; s: number[] }): void {
    this.send('transform_node', { node_id: nodeId, transform });
  }

  transformWhole(transform: { t: number[]; q: number[]; s: number[] }): void {
    this.send('transform_whole', { transform });
  }

  nudge(target: string, axis: 'X' | 'Y' | 'Z' | 'free', delta: number | number[]): void {
    this.send('nudge_transform', { target, axis, delta });
  }

  setScale(factor: number): void {
    this.send('set_scale', { factor });
  }

  setCutPlane(axis: 'X' | 'Y' | 'Z', offset: number, enabled = true): void {
    this.send('set_cut_plane', { axis, offset, enabled });
  }

  setNodeVisibility(nodeId: string, visible: boolean): void {
    this.send('set_node_visibility', { node_id: nodeId, visible });
  }

  /** Panel hide toggle: flips the node's session visibility. */
  toggleNodeVisibility(nodeId: string): void {
    const current = this.state.nodeVisibility.get(nodeId) ?? true;
    this.setNodeVisibility(nodeId, !current);
  }

  /** Panel highlight toggle: local only, nothing goes over the wire. */
  toggleHighlight(nodeId: string): void {
    this.panel.toggleHighlight(nodeId);
  }

  setActiveModel(modelId: string): void {
    this.send('set_active_model', { model_id: modelId });
  }

  createSlide(name: string, slideId?: string): void {
    const body: Record<string, unknown> = { name };
    if (slideId !== undefined) body.slide_id = slideId;
    this.send('create_slide', body);
  }

  loadSlide(slideId: string): void {
    this.send('load_slide', { slide_id: slideId });
  }

  deleteSlide(slideId: string): void {
    this.send('delete_slide', { slide_id: slideId });
  }

  sendPose(pose: { t: number[]; q: number[] }): void {
    this.send('participant_pose', { pose });
  }

  /** Presence is server-managed: leaving is closing the channel. The
   * broker sequences the leave op on disconnect. */
  leaveSession(): void {
    this.close(1000);
  }

  followUser(targetCid: string): void {
    this.follow.follow(targetCid, this.state);
  }

  // -------------------------------------------------------------- queries

  /** One avatar per live participant, by construction. */
  get avatarCount(): number {
    return this.state.participants.size;
  }

  avatars(): { cid: string; participant: Participant }[] {
    return [...this.state.participants.entries()].map(([cid, participant]) => ({
      cid,
      participant,
    }));
  }
}

export function httpBaseFrom(wsBase: string): string {
  return wsBase.replace(/^ws/, 'http');
}

/** Submit a reduction plan for server-side execution. */
export async function submitPlan(
  httpBase: string,
  token: string,
  modelId: string,
  plan: { ideal_budget?: number; hard_budget?: number; steps: unknown[] },
  dryRun = false,
): Promise<any> {
  const url = `${httpBase}/api/models/${encodeURIComponent(modelId)}/plan${dryRun ? '?dry_run=true' : ''}`;
  const resp = await fetch(url, {
    method: 'POST',
    headers: { 'content-type': 'application/json', authorization: `Bearer ${token}` },
    body: JSON.stringify(plan),
  });
  const doc = await resp.json();
  if (!resp.ok) {
    const detail = doc?.error?.message ?? resp.statusText;
    throw new ClientError(`plan submission failed: ${detail}`);
  }
  return doc;
}

export const routes = {
  session: (sessionId: string) => `/session/${encodeURIComponent(sessionId)}`,
  reduce: (modelId: string) => `/models/${encodeURIComponent(modelId)}/reduce`,
};
