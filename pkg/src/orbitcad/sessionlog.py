"""Session operation log: message types, deterministic state folding,
squashing, slides, and late-join synchronization.

Every mutation of a shared session travels as one SessionOp. The server
assigns dense, strictly increasing op_ids per session; clients fold ops in
op_id order into a SessionState. Ops with op_id 0 are unsequenced presence
traffic (participant poses, late-join snapshots) and are never persisted.

Conflict policy is last-writer-wins under the server ordering. The state
reachable from a log is exactly the left fold of ``apply_op`` over the ops,
which makes squashing well defined: fold the log, then emit one op per
surviving state dimension in a fixed order. Canonical serialization renders
every float at 9 decimal places (half-even, computed on the scaled double so
independent implementations agree bit-for-bit), which makes state equality
byte-comparable.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

WIRE_VERSION = 1

OP_KINDS = (
    "set_active_model",
    "transform_whole",
    "transform_node",
    "nudge_transform",
    "set_scale",
    "set_node_visibility",
    "set_cut_plane",
    "place_poi",
    "clear_poi",
    "create_slide",
    "load_slide",
    "delete_slide",
    "participant_pose",
    "join",
    "leave",
)

# kinds that never receive a sequence number and never reach the log
EPHEMERAL_KINDS = ("participant_pose",)

_AXES = ("X", "Y", "Z")
_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class SessionOp:
    __slots__ = ("op_id", "client_id", "wall_time", "kind", "body")
    op_id: int  # 0 = unsequenced
    client_id: str
    wall_time: int  # milliseconds
    kind: str
    body: dict


def identity_transform() -> dict:
    return {"t": [0.0, 0.0, 0.0], "q": [1.0, 0.0, 0.0, 0.0], "s": [1.0, 1.0, 1.0]}


_IDENTITY = identity_transform()


@dataclass
class SessionState:
    """Materialized session state; derivable purely by folding ops.

    Numeric leaves must be Python floats (wire decoding coerces); the
    canonical serializer distinguishes ints from floats.
    """

    active_model: str | None = None
    whole_transform: dict = field(default_factory=identity_transform)
    node_transforms: dict = field(default_factory=dict)
    node_visibility: dict = field(default_factory=dict)
    cut_plane: dict | None = None
    poi: dict | None = None
    slides: dict = field(default_factory=dict)
    participants: dict = field(default_factory=dict)
    applied_op_id: int = 0

    def copy(self) -> "SessionState":
        # leaf dicts are replaced, never mutated, so per-dimension shallow
        # copies give value semantics
        return SessionState(
            active_model=self.active_model,
            whole_transform=self.whole_transform,
            node_transforms=dict(self.node_transforms),
            node_visibility=dict(self.node_visibility),
            cut_plane=self.cut_plane,
            poi=self.poi,
            slides=dict(self.slides),
            participants=dict(self.participants),
            applied_op_id=self.applied_op_id,
        )


def empty_state() -> SessionState:
    return SessionState()


# ------------------------------------------------------------------ apply


def apply_op(state: SessionState, op: SessionOp) -> SessionState:
    """Pure application: returns a new state, input untouched."""
    out = state.copy()
    _apply_mut(out, op)
    return out


def fold_ops(ops, state: SessionState | None = None) -> SessionState:
    out = empty_state() if state is None else state.copy()
    for op in ops:
        _apply_mut(out, op)
    return out


def _apply_mut(state: SessionState, op: SessionOp) -> None:
    if op.op_id != 0:
        if op.op_id <= state.applied_op_id:
            raise ProtocolError(
                f"out-of-order op {op.op_id} after {state.applied_op_id}"
            )
        state.applied_op_id = op.op_id
    _apply_kind(state, op.kind, op.body, op.client_id, op.op_id)


def _apply_kind(state: SessionState, kind: str, body: dict, cid: str, op_id: int) -> None:
    if kind == "transform_node":
        state.node_transforms[body["node_id"]] = body["transform"]
    elif kind == "set_node_visibility":
        state.node_visibility[body["node_id"]] = body["visible"]
    elif kind == "nudge_transform":
        _apply_nudge(state, body)
    elif kind == "transform_whole":
        state.whole_transform = body["transform"]
    elif kind == "set_scale":
        w = state.whole_transform
        f = body["factor"]
        state.whole_transform = {"t": w["t"], "q": w["q"], "s": [f, f, f]}
    elif kind == "set_active_model":
        state.active_model = body["model_id"]
    elif kind == "set_cut_plane":
        if body["enabled"]:
            state.cut_plane = {"axis": body["axis"], "offset": body["offset"]}
        else:
            state.cut_plane = None
    elif kind == "place_poi":
        state.poi = {
            "position": body["position"],
            "anchor": body.get("anchor"),
            "placer": cid,
        }
    elif kind == "clear_poi":
        state.poi = None
    elif kind == "create_slide":
        _apply_create_slide(state, body, op_id)
    elif kind == "load_slide":
        _apply_load_slide(state, body)
    elif kind == "delete_slide":
        sid = body["slide_id"]
        if sid in state.slides:
            del state.slides[sid]
        else:
            log.warning("delete of unknown slide %r ignored", sid)
    elif kind == "participant_pose":
        entry = state.participants.get(cid)
        if entry is None:
            entry = {"name": "", "kind": "", "pose": None}
        state.participants[cid] = {
            "name": entry["name"], "kind": entry["kind"], "pose": body["pose"],
        }
    elif kind == "join":
        state.participants[cid] = {"name": body["name"], "kind": body["kind"], "pose": None}
    elif kind == "leave":
        state.participants.pop(cid, None)
    else:
        raise ProtocolError(f"unknown op kind {kind!r}")


def _apply_nudge(state: SessionState, body: dict) -> None:
    axis = body["axis"]
    delta = body["delta"]
    if axis == "free":
        dv = delta
    else:
        dv = [0.0, 0.0, 0.0]
        dv[_AXIS_INDEX[axis]] = delta
    target = body["target"]
    base = state.whole_transform if target == "" else state.node_transforms.get(target) or _IDENTITY
    t = base["t"]
    moved = {"t": [t[0] + dv[0], t[1] + dv[1], t[2] + dv[2]], "q": base["q"], "s": base["s"]}
    if target == "":
        state.whole_transform = moved
    else:
        state.node_transforms[target] = moved


def _apply_create_slide(state: SessionState, body: dict, op_id: int) -> None:
    if "ops" in body:
        # server-enriched op: snapshot travels with the message
        sid = body["slide_id"]
        state.slides[sid] = {"slide_id": sid, "name": body["name"], "ops": body["ops"]}
    else:
        # bare client request: snapshot current model dimensions here; the
        # result is deterministic because prior ops determine the state
        sid = body.get("slide_id") or f"s{op_id}"
        state.slides[sid] = {
            "slide_id": sid, "name": body["name"], "ops": snapshot_ops(state),
        }


def _apply_load_slide(state: SessionState, body: dict) -> None:
    sid = body["slide_id"]
    slide = state.slides.get(sid)
    if slide is None:
        log.warning("load of unknown slide %r ignored", sid)
        return
    # model dimensions are replaced wholesale; participants and the slide
    # collection survive
    fresh = empty_state()
    for wire in slide["ops"]:
        _apply_kind(fresh, wire["type"], wire["body"], wire["cid"], 0)
    state.active_model = fresh.active_model
    state.whole_transform = fresh.whole_transform
    state.node_transforms = fresh.node_transforms
    state.node_visibility = fresh.node_visibility
    state.cut_plane = fresh.cut_plane
    state.poi = fresh.poi


# ----------------------------------------------------------------- squash


def snapshot_ops(state: SessionState) -> list[dict]:
    """Wire-shaped ops reconstructing the model dimensions of ``state``
    (slides and participants excluded). Used for slide bodies."""
    return [_wire_dict(op) for op in _emit_state_ops(state, include_slides=False)]


def _emit_state_ops(state: SessionState, include_slides: bool) -> list[SessionOp]:
    # fixed emission order; op_ids assigned densely afterwards
    out: list[SessionOp] = []

    def emit(kind: str, body: dict, cid: str = "squash"):
        out.append(SessionOp(op_id=len(out) + 1, client_id=cid, wall_time=0, kind=kind, body=body))

    if state.active_model is not None:
        emit("set_active_model", {"model_id": state.active_model})
    if state.whole_transform != _IDENTITY:
        emit("transform_whole", {"transform": state.whole_transform})
    for nid in sorted(state.node_transforms):
        emit("transform_node", {"node_id": nid, "transform": state.node_transforms[nid]})
    for nid in sorted(state.node_visibility):
        emit("set_node_visibility", {"node_id": nid, "visible": state.node_visibility[nid]})
    if state.cut_plane is not None:
        emit("set_cut_plane", {
            "axis": state.cut_plane["axis"], "offset": state.cut_plane["offset"], "enabled": True,
        })
    if state.poi is not None:
        emit("place_poi", {"position": state.poi["position"], "anchor": state.poi["anchor"]},
             cid=state.poi["placer"])
    if include_slides:
        for sid in sorted(state.slides):
            s = state.slides[sid]
            emit("create_slide", {"slide_id": sid, "name": s["name"], "ops": s["ops"]})
    return out


def squash(ops: list[SessionOp]) -> list[SessionOp]:
    """Minimal op list whose fold reproduces fold(ops), participants and
    unsequenced traffic excluded. Output op_ids run densely from 1.

    Length is bounded by 3 + 2 x touched_nodes + slides + 1: one op each for
    active model, whole transform, cut plane and POI, plus at most two per
    node ever touched and one per slide.
    """
    state = fold_ops(op for op in ops if op.op_id != 0)
    return squash_state(state)


def squash_state(state: SessionState) -> list[SessionOp]:
    """Squash directly from an already-folded state; equivalent to
    ``squash`` over any op list folding to it."""
    return _emit_state_ops(state, include_slides=True)


def squash_bound(state: SessionState) -> int:
    touched = set(state.node_transforms) | set(state.node_visibility)
    return 3 + 2 * len(touched) + len(state.slides) + 1


def late_join_bundle(ops: list[SessionOp], participants: dict | None = None) -> list[SessionOp]:
    """Ops bringing a fresh client up to date: the squashed log followed by
    join/pose ops for current participants.

    Every bundle op carries op_id 0: the bundle is a state snapshot, not part
    of the sequence, so the live stream can continue from the server's next
    op_id regardless of the bundle's length.
    """
    state = fold_ops(op for op in ops if op.op_id != 0)
    if participants is not None:
        state.participants = participants
    return bundle_from_state(state)


def bundle_from_state(state: SessionState) -> list[SessionOp]:
    """Late-join bundle built from a folded state, participants included."""
    bundle = [
        SessionOp(op_id=0, client_id=op.client_id, wall_time=0, kind=op.kind, body=op.body)
        for op in squash_state(state)
    ]
    for cid in sorted(state.participants):
        p = state.participants[cid]
        bundle.append(SessionOp(op_id=0, client_id=cid, wall_time=0, kind="join",
                                body={"name": p["name"], "kind": p["kind"]}))
        if p.get("pose") is not None:
            bundle.append(SessionOp(op_id=0, client_id=cid, wall_time=0,
                                    kind="participant_pose", body={"pose": p["pose"]}))
    return bundle


# ----------------------------------------------------------------- slides


def create_slide(state: SessionState, name: str, slide_id: str | None = None) -> SessionState:
    sid = slide_id or f"s{state.applied_op_id + 1}"
    op = SessionOp(op_id=state.applied_op_id + 1, client_id="local", wall_time=0,
                   kind="create_slide",
                   body={"slide_id": sid, "name": name, "ops": snapshot_ops(state)})
    return apply_op(state, op)


def load_slide(state: SessionState, slide_id: str) -> SessionState:
    if slide_id not in state.slides:
        raise ProtocolError(f"unknown slide {slide_id!r}")
    op = SessionOp(op_id=state.applied_op_id + 1, client_id="local", wall_time=0,
                   kind="load_slide", body={"slide_id": slide_id})
    return apply_op(state, op)


# ------------------------------------------------- canonical serialization


def fixed9(x: float) -> str:
    """Decimal rendering at exactly 9 fractional digits.

    Rounding is half-even on the scaled double x * 1e9, so any IEEE-754
    implementation reproduces these bytes without printf dialect concerns.
    Negative zero renders as zero.
    """
    n = round(x * 1e9)
    if n == 0:
        return "0.000000000"
    sign = "-" if n < 0 else ""
    n = abs(n)
    return f"{sign}{n // 1000000000}.{n % 1000000000:09d}"


def _canon(x):
    if isinstance(x, float):
        return fixed9(x)
    if isinstance(x, dict):
        return {k: _canon(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_canon(v) for v in x]
    return x


def canonical_bytes(state: SessionState, include_participants: bool = False) -> bytes:
    doc = {
        "active_model": state.active_model,
        "cut_plane": state.cut_plane,
        "node_transforms": state.node_transforms,
        "node_visibility": state.node_visibility,
        "poi": state.poi,
        "slides": state.slides,
        "whole_transform": state.whole_transform,
    }
    if include_participants:
        doc["participants"] = state.participants
    return json.dumps(_canon(doc), sort_keys=True, separators=(",", ":")).encode("utf-8")


def state_hash(state: SessionState, include_participants: bool = False) -> str:
    return hashlib.sha256(canonical_bytes(state, include_participants)).hexdigest()


# ------------------------------------------------------------ wire format


def _wire_dict(op: SessionOp) -> dict:
    return {"v": WIRE_VERSION, "op": op.op_id, "cid": op.client_id,
            "t": op.wall_time, "type": op.kind, "body": op.body}


def encode_op(op: SessionOp) -> bytes:
    return json.dumps(_wire_dict(op), sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_op(data: bytes | str) -> SessionOp:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"frame is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ProtocolError("frame must be a JSON object")
    if doc.get("v") != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {doc.get('v')!r}")
    kind = doc.get("type")
    if kind not in OP_KINDS:
        raise ProtocolError(f"unknown op type {kind!r}")
    op_id = doc.get("op", 0)
    wall = doc.get("t", 0)
    cid = doc.get("cid", "")
    if not isinstance(op_id, int) or not isinstance(wall, int) or not isinstance(cid, str):
        raise ProtocolError("op/t must be integers and cid a string")
    body = doc.get("body")
    if not isinstance(body, dict):
        raise ProtocolError("body must be an object")
    return SessionOp(op_id=op_id, client_id=cid, wall_time=wall, kind=kind,
                     body=validate_body(kind, body))


def _num(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"{what} must be a number")
    f = float(v)
    if f != f or f in (float("inf"), float("-inf")):
        raise ProtocolError(f"{what} must be finite")
    return f


def _vec(v, n: int, what: str) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise ProtocolError(f"{what} must be a list of {n} numbers")
    return [_num(x, what) for x in v]


def _transform(v, what: str = "transform") -> dict:
    if not isinstance(v, dict):
        raise ProtocolError(f"{what} must be an object")
    return {"t": _vec(v.get("t"), 3, f"{what}.t"),
            "q": _vec(v.get("q"), 4, f"{what}.q"),
            "s": _vec(v.get("s"), 3, f"{what}.s")}


def _text(v, what: str) -> str:
    if not isinstance(v, str):
        raise ProtocolError(f"{what} must be a string")
    return v


def validate_body(kind: str, body: dict) -> dict:
    """Check shape, coerce numeric leaves to float, drop unknown keys."""
    if kind == "set_active_model":
        return {"model_id": _text(body.get("model_id"), "model_id")}
    if kind == "transform_whole":
        return {"transform": _transform(body.get("transform"))}
    if kind == "transform_node":
        return {"node_id": _text(body.get("node_id"), "node_id"),
                "transform": _transform(body.get("transform"))}
    if kind == "nudge_transform":
        axis = body.get("axis")
        if axis not in (*_AXES, "free"):
            raise ProtocolError(f"nudge axis must be X, Y, Z or free, got {axis!r}")
        delta = _vec(body.get("delta"), 3, "delta") if axis == "free" else _num(body.get("delta"), "delta")
        return {"target": _text(body.get("target", ""), "target"), "axis": axis, "delta": delta}
    if kind == "set_scale":
        f = _num(body.get("factor"), "factor")
        if f <= 0:
            raise ProtocolError("scale factor must be positive")
        return {"factor": f}
    if kind == "set_node_visibility":
        vis = body.get("visible")
        if not isinstance(vis, bool):
            raise ProtocolError("visible must be a boolean")
        return {"node_id": _text(body.get("node_id"), "node_id"), "visible": vis}
    if kind == "set_cut_plane":
        axis = body.get("axis")
        if axis not in _AXES:
            raise ProtocolError(f"cut plane axis must be X, Y or Z, got {axis!r}")
        enabled = body.get("enabled")
        if not isinstance(enabled, bool):
            raise ProtocolError("enabled must be a boolean")
        return {"axis": axis, "offset": _num(body.get("offset"), "offset"), "enabled": enabled}
    if kind == "place_poi":
        anchor = body.get("anchor")
        if anchor is not None and not isinstance(anchor, str):
            raise ProtocolError("anchor must be a node id or null")
        return {"position": _vec(body.get("position"), 3, "position"), "anchor": anchor}
    if kind in ("clear_poi", "leave"):
        return {}
    if kind == "create_slide":
        out = {"name": _text(body.get("name"), "name")}
        if "slide_id" in body:
            out["slide_id"] = _text(body["slide_id"], "slide_id")
        if "ops" in body:
            ops = body["ops"]
            if not isinstance(ops, list):
                raise ProtocolError("slide ops must be a list")
            out["ops"] = [
                _wire_dict(decode_op(json.dumps(w))) if isinstance(w, dict)
                else _raise(ProtocolError("slide op must be an object"))
                for w in ops
            ]
        return out
    if kind in ("load_slide", "delete_slide"):
        return {"slide_id": _text(body.get("slide_id"), "slide_id")}
    if kind == "participant_pose":
        pose = body.get("pose")
        if not isinstance(pose, dict):
            raise ProtocolError("pose must be an object")
        return {"pose": {"t": _vec(pose.get("t"), 3, "pose.t"), "q": _vec(pose.get("q"), 4, "pose.q")}}
    if kind == "join":
        k = body.get("kind")
        if k not in ("headset", "web"):
            raise ProtocolError(f"participant kind must be headset or web, got {k!r}")
        return {"name": _text(body.get("name"), "name"), "kind": k}
    raise ProtocolError(f"unknown op kind {kind!r}")


def _raise(e: Exception):
    raise e
