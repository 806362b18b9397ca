// Follow mode: slave the local camera to another participant's pose stream.

import { SessionOp } from './wire.js';
import { SessionState } from './state.js';

export interface Pose {
  t: number[];
  q: number[];
}

export class FollowError extends Error {}

export class FollowController {
  private target: string | null = null;
  private selfCid: string;
  pose: Pose | null = null;
  notices: string[] = [];

  constructor(selfCid: string) {
    this.selfCid = selfCid;
  }

  get following(): string | null {
    return this.target;
  }

  follow(targetCid: string, state: SessionState): void {
    if (targetCid === this.selfCid) {
      throw new FollowError('cannot follow yourself');
    }
    const participant = state.participants.get(targetCid);
    if (participant === undefined) {
      throw new FollowError(`no such participant ${JSON.stringify(targetCid)}`);
    }
    this.target = targetCid;
    // adopt the last known pose immediately if there is one
    this.pose = participant.pose;
  }

  stop(): void {
    this.target = null;
  }

  /** Feed every received op through here; returns true when the local
   * camera pose changed. */
  onOp(op: SessionOp): boolean {
    if (this.target === null) return false;
    if (op.kind === 'participant_pose' && op.clientId === this.target) {
      this.pose = op.body.pose as Pose;
      return true;
    }
    if (op.kind === 'leave' && op.clientId === this.target) {
      this.notices.push(`${this.target} left the session, follow mode off`);
      this.target = null;
      return false;
    }
    return false;
  }
}
