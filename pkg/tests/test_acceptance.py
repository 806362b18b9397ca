"""Release gate.

One test per binding product guarantee, each pinned at its stated
tolerance. These are heavier than the unit suites (multi-second random
batteries, subprocess servers) and intentionally independent of each
other; ``pytest -v tests/test_acceptance.py`` prints one pass/fail line
per guarantee.
"""

import asyncio
import contextlib
import json
import math
import os
import random
import signal
import subprocess
import sys
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import websockets
from fastapi.testclient import TestClient

from conftest import cube_arrays, sphere_arrays
from orbitcad import meshio
from orbitcad.alignment import (
    CameraIntrinsics, Correspondence, build_tag_layout, solve_pnp,
)
from orbitcad.broker.app import create_app
from orbitcad.broker.storage import SegmentedLog
from orbitcad.lods import generate_lods
from orbitcad.png import encode_png
from orbitcad.reduction import apply_plan, fibonacci_directions, parse_plan, visibility_cull
from orbitcad.renderer import plan_iterative_draw, sheet_grid, sprite_sheet
from orbitcad.scene import (
    Mesh, SceneModel, SceneNode, compute_world_bounds, total_triangles,
    world_transforms,
)
from orbitcad.sessionlog import (
    SessionOp, canonical_bytes, decode_op, encode_op, fold_ops, squash,
    squash_bound, state_hash,
)
from orbitcad.simulate import simulate
from orbitcad.transforms import Pose, Transform, quat_angle_between, quat_from_axis_angle, quat_rotate

GATE_SEED = 20260822


# ------------------------------------------------------- 1. squash battery


_CYCLE_LEN = 131072


def _op_cycle(rng):
    """A doubled random (kind, body) sequence; each trial slices it at a
    random offset so 1000 logs stay cheap to produce.  Bodies are shared
    between ops on purpose: applying them must never mutate them."""
    nodes = [f"n{i:02d}" for i in range(20)]
    transforms = [{"t": [rng.uniform(-5, 5) for _ in range(3)],
                   "q": [1.0, 0.0, 0.0, 0.0], "s": [1.0, 1.0, 1.0]}
                  for _ in range(64)]
    pools = {
        "transform_node": [{"node_id": n, "transform": t}
                           for n in nodes for t in transforms[:8]],
        "set_node_visibility": [{"node_id": n, "visible": v}
                                for n in nodes for v in (True, False)],
        "nudge_transform": [{"target": t, "axis": a, "delta": 0.25}
                            for t in ["", *nodes] for a in ("X", "Y", "Z")]
                           + [{"target": t, "axis": "free", "delta": [0.1, -0.2, 0.3]}
                              for t in ["", *nodes]],
        "transform_whole": [{"transform": t} for t in transforms[:16]],
        "set_cut_plane": [{"axis": a, "offset": o, "enabled": e}
                          for a in "XYZ" for o in (-1.0, 0.5) for e in (True, False)],
        "place_poi": [{"position": [rng.uniform(-3, 3) for _ in range(3)], "anchor": anc}
                      for anc in [None, *nodes[:7]] for _ in range(2)],
        "set_scale": [{"factor": f} for f in (0.25, 0.5, 1.5, 2.0, 3.0)],
    }
    population = list(pools)
    weights = [0.42, 0.22, 0.12, 0.08, 0.06, 0.05, 0.05]
    pairs = [(k, pools[k][rng.randrange(len(pools[k]))])
             for k in rng.choices(population, weights, k=_CYCLE_LEN)]
    return pairs + pairs


def _splice_slides(rng, ops, cids):
    """Overwrite a few positions with presentation ops.  References mostly
    target slides created earlier in the same log; a few deliberately miss."""
    n = len(ops)
    created = []
    for j in sorted(rng.sample(range(n), rng.randrange(1, 7))):
        roll = rng.random()
        if not created or roll < 0.45:
            kind, body = "create_slide", {"name": f"slide {j}"}
            created.append(f"s{j + 1}")
        elif roll < 0.70:
            kind, body = "load_slide", {"slide_id": rng.choice(created)}
        elif roll < 0.80:
            kind, body = "load_slide", {"slide_id": f"s{n + 100 + j}"}
        elif roll < 0.95:
            kind, body = "delete_slide", {"slide_id": rng.choice(created)}
        else:
            kind, body = "delete_slide", {"slide_id": f"s{n + 200 + j}"}
        ops[j] = SessionOp(j + 1, cids[j % 7], j + 1, kind, body)


def test_squash_thousand_random_logs_under_a_minute():
    rng = random.Random(GATE_SEED)
    pairs = _op_cycle(rng)
    cids = [f"c{i}" for i in range(7)]
    lengths = [max(10, round(10 * 10000 ** (i / 999))) for i in range(1000)]
    assert lengths[0] == 10 and lengths[-1] == 100_000

    started = time.perf_counter()
    for trial, n in enumerate(lengths):
        off = rng.randrange(_CYCLE_LEN)
        ops = [SessionOp(i, cids[i % 7], i, k, b)
               for i, (k, b) in enumerate(pairs[off:off + n], 1)]
        if trial % 5 == 0:
            _splice_slides(rng, ops, cids)
        folded = fold_ops(ops)
        sq = squash(ops)
        # squashing must not change the canonical state, bit for bit
        assert canonical_bytes(fold_ops(sq)) == canonical_bytes(folded)
        touched = len(set(folded.node_transforms) | set(folded.node_visibility))
        assert len(sq) <= 3 + 2 * touched + len(folded.slides) + 1
        assert len(sq) <= squash_bound(folded)
        again = squash(sq)
        assert [encode_op(o) for o in again] == [encode_op(o) for o in sq]
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"battery took {elapsed:.1f}s"


# --------------------------------------------------- 2. client convergence


def test_twenty_clients_converge_under_thirty_seconds(tmp_path):
    report = simulate(tmp_path, clients=20, ops_per_client=100, seed=GATE_SEED)
    assert report["converged"] is True
    assert len(report["hashes"]) == 20
    assert set(report["hashes"].values()) == {report["server_hash"]}
    assert report["recovered_hash"] == report["server_hash"]
    assert report["elapsed_secs"] < 30.0, report["elapsed_secs"]


# ------------------------------------------------------- 3. crash recovery

_SERVER_SCRIPT = """\
import socket, sys
from pathlib import Path
import uvicorn
from orbitcad.broker.app import create_app

sock = socket.socket()
sock.bind(("127.0.0.1", 0))
sock.listen(128)
print(sock.getsockname()[1], flush=True)
app = create_app(Path(sys.argv[1]), flush_secs=3600.0)
server = uvicorn.Server(uvicorn.Config(app, log_level="critical", lifespan="on"))
server.run(sockets=[sock])
"""

_CRASH_TOKEN = "gate-admin-token"


def _crash_bodies(rng):
    r = rng.random()
    if r < 0.5:
        return "transform_node", {"node_id": f"n{rng.randrange(20):02d}", "transform": {
            "t": [rng.uniform(-5, 5) for _ in range(3)],
            "q": [1.0, 0.0, 0.0, 0.0], "s": [1.0, 1.0, 1.0]}}
    if r < 0.75:
        return "set_node_visibility", {"node_id": f"n{rng.randrange(20):02d}",
                                       "visible": r < 0.6}
    if r < 0.85:
        return "set_cut_plane", {"axis": "Y", "offset": rng.uniform(-2, 2), "enabled": True}
    if r < 0.95:
        return "place_poi", {"position": [rng.uniform(-3, 3) for _ in range(3)], "anchor": None}
    return "set_scale", {"factor": rng.uniform(0.5, 2.0)}


async def _stream_until_thousand_acks(port, seed, kill):
    """Pipeline 1100 ops, then hard-kill the server while the socket is
    still open.  Returns the raw echo frames for the acknowledged ops."""
    rng = random.Random(seed)
    uri = f"ws://127.0.0.1:{port}/ws/sessions/crash?token={_CRASH_TOKEN}&cid=writer"
    ws = await websockets.connect(uri, max_size=2**24)
    echoed = []
    try:
        json.loads(await asyncio.wait_for(ws.recv(), 30.0))  # hello

        async def send_all():
            for _ in range(1100):
                kind, body = _crash_bodies(rng)
                await ws.send(json.dumps(
                    {"v": 1, "op": 0, "cid": "writer", "t": 0, "type": kind, "body": body},
                    separators=(",", ":")))

        async def recv_acks():
            while len(echoed) < 1000:
                raw = await asyncio.wait_for(ws.recv(), 30.0)
                if json.loads(raw).get("op", 0) > 0:
                    echoed.append(raw)

        await asyncio.gather(send_all(), recv_acks())
        kill()
    finally:
        with contextlib.suppress(Exception):
            await asyncio.wait_for(ws.close(), 5.0)
    return echoed


def _crash_trial(base, seed):
    data = base / f"trial{seed}"
    data.mkdir()
    (data / "users.json").write_text(json.dumps(
        {"users": [{"name": "admin", "role": "admin", "token": _CRASH_TOKEN}]}))
    proc = subprocess.Popen([sys.executable, "-c", _SERVER_SCRIPT, str(data)],
                            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    try:
        port = int(proc.stdout.readline())
        req = urllib.request.Request(
            f"http://127.0.0.1:{port}/api/sessions",
            data=json.dumps({"session_id": "crash"}).encode(),
            headers={"Authorization": f"Bearer {_CRASH_TOKEN}",
                     "Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=30) as resp:
            assert resp.status == 201
        echoed = asyncio.run(_stream_until_thousand_acks(
            port, seed, lambda: os.kill(proc.pid, signal.SIGKILL)))
    finally:
        with contextlib.suppress(ProcessLookupError):
            os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
        proc.stdout.close()

    assert len(echoed) >= 1000
    store = SegmentedLog(data / "sessions", "crash")
    disk = store.recover()
    store.close()
    by_id = {op.op_id: op for op in disk}
    # every acknowledged op survived the kill, byte for byte
    for raw in echoed:
        op = decode_op(raw)
        assert encode_op(by_id[op.op_id]) == encode_op(op)
    assert [o.op_id for o in disk] == list(range(1, len(disk) + 1))

    # a restarted service reconstructs exactly the folded log
    expected = canonical_bytes(fold_ops(disk))
    app = create_app(data, flush_secs=3600.0)
    with TestClient(app) as client:
        resp = client.get("/api/sessions/crash/state",
                          headers={"Authorization": f"Bearer {_CRASH_TOKEN}"})
        assert resp.content == expected
        assert resp.headers["x-state-hash"] == state_hash(fold_ops(disk))


def test_crash_recovery_twenty_seeded_kills(tmp_path):
    # trials are independent; overlap them so the per-append fsync waits
    # of four servers interleave
    with ThreadPoolExecutor(max_workers=4) as pool:
        for result in pool.map(lambda s: _crash_trial(tmp_path, s), range(20)):
            assert result is None


# ------------------------------------------- 4. reduction budget workflow


def _grid_arrays(half, n):
    xs = np.linspace(-half, half, n + 1)
    pos = np.array([[x, y, 0.0] for y in xs for x in xs])
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b, c = a + 1, a + n + 1
            faces.append([a, b, c])
            faces.append([b, c + 1, c])
    return pos, np.array(faces, dtype=np.uint32)


def _instanced(nodes, meshes, prefix, ntype, mesh_id, count, spacing):
    side = math.ceil(math.sqrt(count))
    for k in range(count):
        nid = f"{prefix}{k:04d}"
        off = np.array([(k % side) * spacing, (k // side) * spacing, 0.0])
        nodes[nid] = SceneNode(id=nid, name=nid.upper(), node_type=ntype,
                               parent="root", mesh=mesh_id,
                               local_transform=Transform.from_translation(off))
        nodes["root"].children.append(nid)


def test_reduction_plan_hits_budget_with_exact_accounting():
    panel_pos, panel_faces = _grid_arrays(1.0, 32)       # 2048 triangles
    brkt_pos, brkt_faces = _grid_arrays(0.25, 16)        # 512 triangles
    fast_pos, fast_faces = sphere_arrays(16, 20, 0.02)   # tiny fastener
    t_panel, t_brkt, t_fast = len(panel_faces), len(brkt_faces), len(fast_faces)

    n_panel = n_brkt = 800
    n_fast = math.ceil((3_500_000 - n_panel * t_panel - n_brkt * t_brkt) / t_fast)
    nodes = {"root": SceneNode(id="root", name="ROOT", node_type="assembly", children=[])}
    meshes = {
        "m-panel": Mesh(mesh_id="m-panel", positions=panel_pos, lods=[panel_faces]),
        "m-brkt": Mesh(mesh_id="m-brkt", positions=brkt_pos, lods=[brkt_faces]),
        "m-fast": Mesh(mesh_id="m-fast", positions=fast_pos, lods=[fast_faces]),
    }
    _instanced(nodes, meshes, "panel", "part", "m-panel", n_panel, 2.5)
    _instanced(nodes, meshes, "brkt", "part", "m-brkt", n_brkt, 0.8)
    _instanced(nodes, meshes, "fast", "fastener", "m-fast", n_fast, 0.1)
    model = SceneModel(model_id="asm", root="root", nodes=nodes, meshes=meshes)

    initial = n_panel * t_panel + n_brkt * t_brkt + n_fast * t_fast
    assert initial >= 3_500_000
    assert total_triangles(model) == initial

    plan = parse_plan({
        "model_id": "asm",
        "ideal_budget": 2_000_000,
        "hard_budget": 2_500_000,
        "steps": [
            {"kind": "remove_by_size", "threshold": 0.1},
            {"kind": "remove_by_name", "pattern": "BRKT"},
        ],
    })
    reduced, report = apply_plan(model, plan)

    assert len(report.steps[0].removed) == n_fast
    assert report.steps[0].triangle_delta == n_fast * t_fast
    assert len(report.steps[1].removed) == n_brkt
    assert report.steps[1].triangle_delta == n_brkt * t_brkt
    assert report.initial_triangles == initial
    assert report.final_triangles == initial - sum(s.triangle_delta for s in report.steps)
    assert report.final_triangles == n_panel * t_panel
    assert report.final_triangles < 2_000_000
    assert report.verdict == "under_ideal"
    assert total_triangles(reduced) == report.final_triangles

    # detail levels on the survivors: counts must follow the shared mesh exactly
    reduced.meshes = {mid: generate_lods(mesh, [0.5, 0.2])
                      for mid, mesh in reduced.meshes.items()
                      if any(nd.mesh == mid for nd in reduced.nodes.values())}
    panel_lods = reduced.meshes["m-panel"].lods
    assert len(panel_lods) == 3
    for level in range(3):
        per_node = {nid: level for nid, nd in reduced.nodes.items() if nd.mesh is not None}
        assert total_triangles(reduced, lod_levels=per_node) == n_panel * len(panel_lods[level])
    assert len(panel_lods[0]) > len(panel_lods[1]) > len(panel_lods[2])
    assert n_panel * len(panel_lods[1]) <= 2_000_000


# ------------------------------------------- 5. visibility-cull soundness


def _nested_scene(rng):
    """Room with enclosed boxes inside, clutter outside, one straddler."""
    specs = []
    h_room = rng.uniform(2.0, 3.0)
    specs.append(("room", (0.0, 0.0, 0.0), h_room))
    h_in = rng.uniform(0.2, 0.45) * h_room
    lim = h_room - h_in - 0.15
    specs.append(("inner", tuple(rng.uniform(-lim, lim) for _ in range(3)), h_in))
    h_in2 = rng.uniform(0.1, 0.25) * h_room
    lim2 = h_room - h_in2 - 0.15
    specs.append(("inner2", tuple(rng.uniform(-lim2, lim2) for _ in range(3)), h_in2))
    for k in range(3):
        ang = 2 * math.pi * (k + rng.uniform(0.2, 0.8)) / 3
        dist = h_room + rng.uniform(1.2, 2.5)
        specs.append((f"out{k}", (dist * math.cos(ang), dist * math.sin(ang),
                                  rng.uniform(-0.5, 0.5)), rng.uniform(0.35, 0.8)))
    specs.append(("strad", (h_room, rng.uniform(-0.3, 0.3) * h_room, 0.0), 0.45))

    nodes = {"root": SceneNode(id="root", name="ROOT", node_type="assembly", children=[])}
    meshes = {}
    for nid, center, half in specs:
        pos, faces = cube_arrays(half)
        meshes[nid] = Mesh(mesh_id=nid, positions=pos + np.asarray(center), lods=[faces])
        nodes[nid] = SceneNode(id=nid, name=nid.upper(), node_type="part",
                               parent="root", mesh=nid)
        nodes["root"].children.append(nid)
    return SceneModel(model_id="nest", root="root", nodes=nodes, meshes=meshes)


def _ray_cast_visible(model, center, radius, camera_count, res=40):
    """Brute-force reference: exact nearest-hit rays through pixel centers
    of the same cameras the cull samples."""
    tris = []
    owner = []
    for i, (nid, node) in enumerate(sorted(model.nodes.items())):
        if node.mesh is None:
            continue
        mesh = model.meshes[node.mesh]
        tris.append(mesh.positions[mesh.lods[0]])
        owner.extend([nid] * len(mesh.lods[0]))
    tris = np.concatenate(tris)
    owner = np.array(owner)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0

    corners = compute_world_bounds(model, model.root).corners()
    center = np.asarray(center, dtype=np.float64)

    grid = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    px, py = np.meshgrid(grid, -grid)
    visible = set()
    for d in fibonacci_directions(camera_count):
        eye = center + radius * d
        to_corner = corners - eye
        dist = np.linalg.norm(to_corner, axis=1)
        fwd = center - eye
        fwd = fwd / np.linalg.norm(fwd)
        cosang = np.clip((to_corner @ fwd) / np.maximum(dist, 1e-12), -1.0, 1.0)
        vfov = min(math.pi * 0.9, max(1e-3, 2.0 * float(np.max(np.arccos(cosang))) * 1.1))
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        th = math.tan(vfov / 2.0)
        dirs = (px.reshape(-1, 1) * th * right + py.reshape(-1, 1) * th * up + fwd)

        p = np.cross(dirs[:, None, :], e2[None, :, :])
        det = np.einsum("rmk,mk->rm", p, e1)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = eye - v0
        u = np.einsum("rmk,mk->rm", p, s) * inv
        q = np.cross(s, e1)
        v = (dirs @ q.T) * inv
        t = (e2 * q).sum(axis=1)[None, :] * inv
        hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > 1e-9)
        t = np.where(hit, t, np.inf)
        nearest = np.argmin(t, axis=1)
        rows = np.isfinite(t[np.arange(t.shape[0]), nearest])
        visible.update(owner[nearest[rows]])
    return visible


def test_visibility_cull_never_removes_ray_visible_nodes():
    rng = random.Random(GATE_SEED)
    enclosed_removed = 0
    for scene_idx in range(50):
        model = _nested_scene(rng)
        bounds = compute_world_bounds(model, "root")
        reach = float(np.max(np.linalg.norm(bounds.corners(), axis=1)))
        radius = reach * 1.35
        kept = visibility_cull(model, (0.0, 0.0, 0.0), radius, camera_count=64)
        mesh_nodes = {nid for nid, nd in model.nodes.items() if nd.mesh is not None}
        removed = mesh_nodes - kept

        oracle = _ray_cast_visible(model, (0.0, 0.0, 0.0), radius, 64)
        stray = removed & oracle
        assert not stray, f"scene {scene_idx}: removed ray-visible nodes {sorted(stray)}"
        if "inner" in removed:
            enclosed_removed += 1
    assert enclosed_removed >= 48, f"enclosed box culled in only {enclosed_removed}/50 scenes"


# ----------------------------------------------------------- 6. pnp gates

_GATE_INTR = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=640.0, cy=480.0)
_GATE_LAYOUT = build_tag_layout(tag_size=0.07, spacing=0.02)  # 0.16 m outer span


def _layout_correspondences(pose, noise=0.0, rng=None):
    items = sorted(_GATE_LAYOUT.points.items())
    pts3 = np.array([p for _, p in items], dtype=np.float64)
    uvs = _GATE_INTR.project(quat_rotate(pose.rotation, pts3) + pose.translation)
    if noise:
        uvs = uvs + rng.normal(0.0, noise, uvs.shape)
    return [Correspondence(tag=tag, role=role, point3d=p3, point2d=tuple(uv))
            for ((tag, role), _), p3, uv in zip(items, pts3, uvs)]


def _random_pose(rng, distance):
    axis = np.array([rng.gauss(0, 1) for _ in range(3)])
    axis = axis / np.linalg.norm(axis)
    q = quat_from_axis_angle(axis, rng.uniform(-0.55, 0.55))
    t = np.array([rng.uniform(-0.2, 0.2) * distance,
                  rng.uniform(-0.2, 0.2) * distance, distance])
    return Pose(rotation=q, translation=t)


def test_pose_solver_noiseless_and_noisy_bounds():
    rng = random.Random(GATE_SEED)
    npr = np.random.default_rng(GATE_SEED)
    for _ in range(200):
        truth = _random_pose(rng, rng.uniform(0.4, 2.0))
        est, rms = solve_pnp(_layout_correspondences(truth), _GATE_INTR)
        assert quat_angle_between(est.rotation, truth.rotation) < 1e-6
        assert np.linalg.norm(est.translation - truth.translation) < 1e-9
        assert rms < 1e-6

    hits = 0
    for _ in range(1000):
        truth = _random_pose(rng, 1.0)
        corr = _layout_correspondences(truth, noise=0.5, rng=npr)
        est, _ = solve_pnp(corr, _GATE_INTR)
        if np.linalg.norm(est.translation - truth.translation) < 0.005:
            hits += 1
    assert hits >= 950, f"translation within 5 mm in only {hits}/1000 trials"


# ------------------------------------------------- 7. draw-plan batteries


def test_draw_plans_partition_ten_thousand_sets():
    rng = random.Random(GATE_SEED)
    for _ in range(10_000):
        m = rng.randrange(1, 41)
        nodes = [(f"n{i:03d}", rng.randrange(1, 30_001)) for i in range(m)]
        budget = rng.randrange(2_000, 60_001)
        plan = plan_iterative_draw(nodes, budget)

        flat = [nid for frame in plan.frames for nid in frame]
        assert sorted(flat) == sorted(nid for nid, _ in nodes)
        sizes = dict(nodes)
        for frame in plan.frames:
            total = sum(sizes[nid] for nid in frame)
            assert total <= budget or len(frame) == 1
        for nid, tris in nodes:
            if tris > budget:
                holder = next(f for f in plan.frames if nid in f)
                assert holder == [nid]

        assert plan_iterative_draw(nodes, budget).frames == plan.frames
        assert plan_iterative_draw(list(reversed(nodes)), budget).frames == plan.frames


# ------------------------------------- 8. deterministic raster + sheets

_RENDER_SCRIPT = """\
import sys
import numpy as np
from orbitcad.png import encode_png
from orbitcad.renderer import sprite_sheet
from orbitcad.scene import Mesh, SceneModel, SceneNode
from orbitcad.transforms import Transform

def cube(half):
    pos = [[x, y, z] for z in (-half, half) for y in (-half, half) for x in (-half, half)]
    faces = [[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
             [1, 3, 5], [3, 7, 5], [3, 2, 7], [2, 6, 7], [2, 0, 6], [0, 4, 6]]
    return np.array(pos, dtype=np.float64), np.array(faces, dtype=np.uint32)

p1, f1 = cube(1.0)
p2, f2 = cube(0.35)
model = SceneModel(model_id="det", root="r", nodes={
    "r": SceneNode(id="r", name="ROOT", node_type="assembly", children=["a", "b"]),
    "a": SceneNode(id="a", name="BODY", node_type="part", parent="r", mesh="m1"),
    "b": SceneNode(id="b", name="FIN", node_type="part", parent="r", mesh="m2",
                   local_transform=Transform.from_translation(np.array([1.2, 0.7, 0.4]))),
}, meshes={"m1": Mesh(mesh_id="m1", positions=p1, lods=[f1]),
           "m2": Mesh(mesh_id="m2", positions=p2, lods=[f2])})
sheet = sprite_sheet(model, viewpoint_count=24, tile=64)
with open(sys.argv[1], "wb") as fh:
    fh.write(encode_png(sheet))
"""


def test_sprite_sheets_byte_identical_across_processes(tmp_path):
    outputs = []
    for run in range(2):
        out = tmp_path / f"run{run}.png"
        subprocess.run([sys.executable, "-c", _RENDER_SCRIPT, str(out)],
                       check=True, cwd=tmp_path)
        outputs.append(out.read_bytes())
    assert outputs[0][:8] == b"\x89PNG\r\n\x1a\n"
    assert outputs[0] == outputs[1]


def _centered_cube_model():
    pos, faces = cube_arrays(1.0)
    return SceneModel(model_id="cube", root="r", nodes={
        "r": SceneNode(id="r", name="ROOT", node_type="assembly", children=["c"]),
        "c": SceneNode(id="c", name="CUBE", node_type="part", parent="r", mesh="m"),
    }, meshes={"m": Mesh(mesh_id="m", positions=pos, lods=[faces])})


def test_sheet_grid_geometry_and_opposed_silhouettes():
    cols, rows = sheet_grid(24)
    assert (cols, rows) == (5, 5)
    tile = 128
    sheet = sprite_sheet(_centered_cube_model(), viewpoint_count=24, tile=tile)
    assert sheet.shape == (rows * tile, cols * tile, 4)
    # the 25th cell holds no viewpoint
    assert not sheet[4 * tile:, 4 * tile:, 3].any()

    def mask(k):
        r, c = divmod(k, cols)
        return sheet[r * tile:(r + 1) * tile, c * tile:(c + 1) * tile, 3] > 0

    # viewpoints k and k+12 sit 180 degrees apart on the orbit
    for k in (0, 6):
        a, b = mask(k), mask(k + 12)
        assert a.any() and b.any()
        assert np.array_equal(a, np.fliplr(b)), f"tiles {k}/{k + 12} disagree"


# --------------------------------------------------- 9. mesh round trips


def _world_soup(model):
    mats = world_transforms(model)
    rows = []
    for nid in sorted(model.nodes):
        node = model.nodes[nid]
        if node.mesh is None:
            continue
        mesh = model.meshes[node.mesh]
        m = mats[nid]
        pts = mesh.positions @ m[:3, :3].T + m[:3, 3]
        tris = pts[mesh.lods[0]]
        flat = tris.reshape(-1, 9)
        # rotate each triangle so its lexicographically smallest vertex leads;
        # winding survives, index origin does not matter
        verts = flat.reshape(-1, 3, 3)
        order = np.lexsort((verts[:, :, 2], verts[:, :, 1], verts[:, :, 0]), axis=1)
        first = order[:, 0]
        idx = (np.arange(3)[None, :] + first[:, None]) % 3
        rows.append(np.take_along_axis(verts, idx[:, :, None], axis=1).reshape(-1, 9))
    soup = np.vstack(rows)
    return soup[np.lexsort(soup.T[::-1])]


def test_round_trips_conserve_triangles_and_positions():
    pos_c, f_c = cube_arrays(0.8)
    pos_s, f_s = sphere_arrays(12, 16, 0.5)
    model = SceneModel(model_id="rt", root="root", nodes={
        "root": SceneNode(id="root", name="ROOT", node_type="assembly",
                          children=["body", "dome", "dome2"]),
        "body": SceneNode(id="body", name="BODY", node_type="part", parent="root", mesh="mc"),
        "dome": SceneNode(id="dome", name="DOME_A", node_type="part", parent="root",
                          mesh="ms", local_transform=Transform.from_translation(
                              np.array([1.5, 0.2, -0.3]))),
        "dome2": SceneNode(id="dome2", name="DOME_B", node_type="part", parent="root",
                           mesh="ms", local_transform=Transform.from_translation(
                               np.array([-1.5, 0.4, 0.9]))),
    }, meshes={"mc": Mesh(mesh_id="mc", positions=pos_c, lods=[f_c]),
               "ms": Mesh(mesh_id="ms", positions=pos_s, lods=[f_s])})

    expected = 12 + 2 * len(f_s)
    assert total_triangles(model) == expected
    base = _world_soup(model)
    for fmt in ("obj", "ply", "gltf"):
        data = meshio.export_model(model, fmt)
        back, report = meshio.import_model(data, fmt)
        assert total_triangles(back) == expected, fmt
        assert report.triangle_count == expected
        soup = _world_soup(back)
        assert soup.shape == base.shape, fmt
        assert float(np.max(np.abs(soup - base))) < 1e-6, fmt
