#!/usr/bin/env python3
"""Generate the cross-language fixture files consumed by the web viewer's
test suite: 500 op-stream vectors with expected canonical serializations,
and 20 reduction-plan previews with expected triangle accounting.

Run from the repository root:

    python3 scripts/make_frontend_fixtures.py [--out frontend/test/fixtures]
"""

import argparse
import json
import random
from pathlib import Path

import numpy as np

from orbitcad.reduction import apply_plan, parse_plan
from orbitcad.scene import Mesh, SceneModel, SceneNode, total_triangles, world_transforms
from orbitcad.sessionlog import (
    SessionOp, canonical_bytes, decode_op, encode_op, fold_ops, snapshot_ops,
    state_hash,
)
from orbitcad.transforms import Transform

SEED = 96001


# ------------------------------------------------------------- op vectors

NODE_IDS = [f"n{i:02d}" for i in range(12)]
NAMES = ["overview", "close up", "café view", "Ренат",
         "stage \U0001f680", "final"]
CLIENTS = ["web-1", "web-2", "hl-ü", "ops"]

# values chosen to stress the 9-digit rendering: signs, magnitudes around
# one tick, and results that depend on half-even rounding of the scaled double
SPICY = [0.0, -0.0, 1.0, -1.0, 0.1, -0.25, 1e-9, -1e-9, 2.5e-10, 7.5e-10,
         1.0000000005, -3.1415926535, 12345.678901234, 0.3333333333, -2.5e-9]


def _val(rng):
    if rng.random() < 0.4:
        return rng.choice(SPICY)
    if rng.random() < 0.15:
        return rng.randrange(-20, 21)  # integer leaf, coerced to float on decode
    return round(rng.uniform(-50, 50), rng.randrange(0, 12))


def _vec3(rng):
    return [_val(rng) for _ in range(3)]


def _transform(rng):
    return {"t": _vec3(rng), "q": [_val(rng) for _ in range(4)], "s": _vec3(rng)}


def _next_body(rng, state, joined, next_id):
    """One random op; returns (op_id, cid, kind, body)."""
    roll = rng.random()
    cid = rng.choice(CLIENTS)
    if roll < 0.20:
        return next_id, cid, "transform_node", {
            "node_id": rng.choice(NODE_IDS), "transform": _transform(rng)}
    if roll < 0.32:
        return next_id, cid, "set_node_visibility", {
            "node_id": rng.choice(NODE_IDS), "visible": rng.random() < 0.5}
    if roll < 0.42:
        axis = rng.choice(["X", "Y", "Z", "free"])
        delta = _vec3(rng) if axis == "free" else _val(rng)
        target = rng.choice(["", *NODE_IDS])
        return next_id, cid, "nudge_transform", {
            "target": target, "axis": axis, "delta": delta}
    if roll < 0.50:
        return next_id, cid, "transform_whole", {"transform": _transform(rng)}
    if roll < 0.55:
        return next_id, cid, "set_scale", {"factor": abs(_val(rng)) + 0.0625}
    if roll < 0.62:
        return next_id, cid, "set_cut_plane", {
            "axis": rng.choice("XYZ"), "offset": _val(rng),
            "enabled": rng.random() < 0.7}
    if roll < 0.70:
        anchor = rng.choice([None, *NODE_IDS])
        return next_id, cid, "place_poi", {"position": _vec3(rng), "anchor": anchor}
    if roll < 0.74:
        return next_id, cid, "clear_poi", {}
    if roll < 0.78:
        return next_id, cid, "set_active_model", {
            "model_id": rng.choice(["m0001", "m0002", "asm-é"])}
    if roll < 0.84:
        body = {"name": rng.choice(NAMES)}
        if rng.random() < 0.3:
            # server-enriched create: snapshot travels in the message
            body["slide_id"] = f"sx{next_id}"
            body["ops"] = snapshot_ops(state)
        return next_id, cid, "create_slide", body
    if roll < 0.88:
        pool = sorted(state.slides) or ["missing"]
        return next_id, cid, "load_slide", {"slide_id": rng.choice(pool + ["nope"])}
    if roll < 0.90:
        pool = sorted(state.slides) or ["missing"]
        return next_id, cid, "delete_slide", {"slide_id": rng.choice(pool + ["gone"])}
    if roll < 0.95 and joined:
        who = rng.choice(sorted(joined))
        return 0, who, "participant_pose", {
            "pose": {"t": _vec3(rng), "q": [_val(rng) for _ in range(4)]}}
    if roll < 0.975 or not joined:
        who = rng.choice(CLIENTS)
        joined.add(who)
        return next_id, who, "join", {
            "name": rng.choice(NAMES), "kind": rng.choice(["headset", "web"])}
    who = rng.choice(sorted(joined))
    joined.discard(who)
    return next_id, who, "leave", {}


def make_vectors(count=500):
    rng = random.Random(SEED)
    vectors = []
    for _ in range(count):
        n_ops = rng.randrange(1, 61)
        state = fold_ops([])
        joined = set()
        frames = []
        next_id = 1
        for _ in range(n_ops):
            op_id, cid, kind, body = _next_body(rng, state, joined, next_id)
            op = SessionOp(op_id, cid, 0 if op_id == 0 else op_id * 7, kind, body)
            frame = encode_op(op).decode("utf-8")
            # fold what the wire carries: decoding coerces numeric leaves to
            # float exactly as every client sees them
            state = fold_ops([decode_op(frame)], state)
            frames.append(frame)
            if op_id != 0:
                next_id = op_id + 1
        vectors.append({
            "frames": frames,
            "canonical": canonical_bytes(state).decode("utf-8"),
            "canonical_with_participants":
                canonical_bytes(state, include_participants=True).decode("utf-8"),
            "hash": state_hash(state),
        })
    return vectors


# ------------------------------------------------------- preview fixtures


def build_fixture_model():
    """Deterministic three-level assembly with shared meshes, group nodes,
    and size spread wide enough for by-size selection to bite."""
    rng = random.Random(SEED + 1)
    meshes = {}

    def box_mesh(mid, half):
        pos = np.array([[sx * half, sy * half, sz * half]
                        for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)],
                       dtype=np.float64)
        faces = np.array([[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
                          [0, 1, 4], [1, 5, 4], [1, 3, 5], [3, 7, 5],
                          [3, 2, 7], [2, 6, 7], [2, 0, 6], [0, 4, 6]],
                         dtype=np.uint32)
        reps = rng.randrange(1, 9)
        meshes[mid] = Mesh(mesh_id=mid, positions=np.tile(pos, (reps, 1)),
                           lods=[np.vstack([faces + 8 * r for r in range(reps)])])

    for i, half in enumerate([0.01, 0.02, 0.05, 0.12, 0.3, 0.7, 1.5]):
        box_mesh(f"mesh{i}", half)

    nodes = {"root": SceneNode(id="root", name="FIXTURE ROOT", node_type="assembly",
                               children=[])}
    kinds = ["part", "part", "part", "fastener", "bracket", "harness"]
    words = ["PANEL", "BRKT", "BOLT", "STRUT", "TANK", "CLAMP", "WIRE"]
    serial = 0
    for g in range(6):
        gid = f"grp{g}"
        nodes[gid] = SceneNode(id=gid, name=f"GROUP {g}", node_type="assembly",
                               parent="root", children=[])
        nodes["root"].children.append(gid)
        for _ in range(rng.randrange(10, 22)):
            serial += 1
            nid = f"p{serial:03d}"
            mesh = f"mesh{rng.randrange(7)}"
            name = f"{rng.choice(words)}_{serial:03d}"
            off = np.array([rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 1)])
            nodes[nid] = SceneNode(id=nid, name=name, node_type=rng.choice(kinds),
                                   parent=gid, mesh=mesh,
                                   local_transform=Transform.from_translation(off))
            nodes[gid].children.append(nid)
            if rng.random() < 0.25:
                serial += 1
                sub = f"p{serial:03d}"
                nodes[sub] = SceneNode(id=sub, name=f"{name}_SUB", node_type="part",
                                       parent=nid, mesh=f"mesh{rng.randrange(4)}",
                                       local_transform=Transform.from_translation(
                                           np.array([0.2, 0.0, 0.1])))
                nodes[nid].children.append(sub)
    return SceneModel(model_id="fixture", root="root", nodes=nodes, meshes=meshes)


def summarize(model):
    worlds = world_transforms(model)
    out = []
    for nid in sorted(model.nodes):
        node = model.nodes[nid]
        entry = {"id": nid, "name": node.name, "node_type": node.node_type,
                 "parent": node.parent, "children": list(node.children),
                 "triangles": 0, "bounds": None}
        if node.mesh is not None:
            mesh = model.meshes[node.mesh]
            entry["triangles"] = int(mesh.lods[0].shape[0])
            if mesh.positions.shape[0]:
                w = worlds[nid]
                pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
                entry["bounds"] = [pts.min(axis=0).tolist(), pts.max(axis=0).tolist()]
        out.append(entry)
    return out


def fixture_plans(model):
    rng = random.Random(SEED + 2)
    ids = [nid for nid in sorted(model.nodes) if nid != "root"]
    mesh_ids = [nid for nid in ids if model.nodes[nid].mesh is not None]
    plans = []
    for i in range(20):
        steps = []
        for _ in range(rng.randrange(1, 5)):
            roll = rng.random()
            if roll < 0.25:
                steps.append({"kind": "remove_by_size",
                              "threshold": rng.choice([0.05, 0.12, 0.3, 0.8, 2.0])})
            elif roll < 0.45:
                if rng.random() < 0.5:
                    steps.append({"kind": "remove_by_name",
                                  "pattern": rng.choice(["BOLT", "BRKT", "WIRE", "_0"])})
                else:
                    steps.append({"kind": "remove_by_name", "is_regex": True,
                                  "pattern": rng.choice(["^CLAMP", "TANK_1.5$",
                                                         "STRUT_0[0-4]", "SUB$"])})
            elif roll < 0.60:
                steps.append({"kind": "remove_by_type",
                              "node_type": rng.choice(["fastener", "bracket", "harness"])})
            elif roll < 0.72:
                steps.append({"kind": "remove_nodes",
                              "ids": sorted(rng.sample(ids, rng.randrange(1, 5)))})
            elif roll < 0.82:
                steps.append({"kind": "set_color",
                              "ids": sorted(rng.sample(mesh_ids, 3)),
                              "rgb": [0.8, 0.2, 0.2]})
            elif roll < 0.92:
                steps.append({"kind": "set_opacity",
                              "ids": sorted(rng.sample(mesh_ids, 2)),
                              "value": round(rng.uniform(0.1, 1.0), 2)})
            else:
                steps.append({"kind": "set_occlusion_only",
                              "ids": sorted(rng.sample(mesh_ids, 2)), "flag": True})
        doc = {"model_id": "fixture", "ideal_budget": rng.choice([300, 600, 1200]),
               "hard_budget": 2400, "steps": steps}
        # remove_nodes steps may reference nodes a prior step deleted; the
        # server rejects that, so the fixture keeps only plans that execute
        try:
            _, report = apply_plan(model, parse_plan(doc))
        except Exception:
            continue
        plans.append({
            "plan": doc,
            "expected": {
                "initial_triangles": report.initial_triangles,
                "final_triangles": report.final_triangles,
                "verdict": report.verdict,
                "step_removed": [s.removed for s in report.steps],
                "step_deltas": [s.triangle_delta for s in report.steps],
            },
        })
        if len(plans) == 20:
            break
    while len(plans) < 20:
        # top up with single-step by-size plans at fresh thresholds
        t = 0.07 + 0.11 * len(plans)
        doc = {"model_id": "fixture", "ideal_budget": 600, "hard_budget": 2400,
               "steps": [{"kind": "remove_by_size", "threshold": t}]}
        _, report = apply_plan(model, parse_plan(doc))
        plans.append({"plan": doc, "expected": {
            "initial_triangles": report.initial_triangles,
            "final_triangles": report.final_triangles,
            "verdict": report.verdict,
            "step_removed": [s.removed for s in report.steps],
            "step_deltas": [s.triangle_delta for s in report.steps]}})
    return plans


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="frontend/test/fixtures", type=Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    vectors = make_vectors()
    (args.out / "golden_vectors.json").write_text(
        json.dumps(vectors, indent=None, separators=(",", ":")))
    print(f"wrote {len(vectors)} golden vectors")

    model = build_fixture_model()
    doc = {"model": {"model_id": model.model_id, "root": model.root,
                     "nodes": summarize(model),
                     "total_triangles": total_triangles(model)},
           "plans": fixture_plans(model)}
    (args.out / "preview_fixtures.json").write_text(
        json.dumps(doc, indent=None, separators=(",", ":")))
    print(f"wrote {len(doc['plans'])} preview plans "
          f"({doc['model']['total_triangles']} fixture triangles)")


if __name__ == "__main__":
    main()
