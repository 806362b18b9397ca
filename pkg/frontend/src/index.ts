export {
  OP_KINDS,
  ProtocolError,
  WIRE_VERSION,
  decodeFrame,
  encodeFrame,
  validateBody,
  validateWireOp,
  wireDict,
} from './wire.js';
export type { OpKind, SessionOp, TransformDict, WireOp } from './wire.js';

export {
  SessionState,
  applyInto,
  applyOp,
  cmpCodePoint,
  emptyState,
  foldBundle,
  foldOps,
  identityTransform,
  isIdentityTransform,
  opFromWire,
  snapshotOps,
  sortedKeys,
  squashState,
} from './state.js';
export type { CutPlane, Participant, Poi, Slide, Transform } from './state.js';

export { canonicalString, fixed9, jstr, roundHalfEven } from './canonical.js';

export {
  DEFAULT_HARD_BUDGET,
  DEFAULT_IDEAL_BUDGET,
  PreviewError,
  counterColor,
  loadSummary,
  previewPlan,
} from './preview.js';
export type { PlanPreview, StepPreview, SummaryModel, SummaryNode } from './preview.js';

export {
  DEFAULT_FRAME_BUDGET,
  DrawPlanError,
  FrameScheduler,
  LAYERS,
  planIterativeDraw,
} from './scheduler.js';
export type { FrameRecord, Layer } from './scheduler.js';

export { OrientationAnimation, quatRotate, slerp, viewCubeOrientation } from './viewCube.js';
export type { CubeOrientation, Quat, Vec3 } from './viewCube.js';

export { FollowController, FollowError } from './follow.js';
export type { Pose } from './follow.js';

export { HierarchyPanel } from './panel.js';
export type { PanelRow } from './panel.js';

export { markerPlacement, orientationFromNormal } from './marker.js';
export type { MarkerPlacement } from './marker.js';

export {
  ClientError,
  ConnectError,
  SessionClient,
  httpBaseFrom,
  routes,
  submitPlan,
} from './client.js';
export type { ClientOptions, Hello, ServerError, SocketFactory, SocketLike } from './client.js';
