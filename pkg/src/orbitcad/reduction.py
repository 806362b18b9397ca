"""Ordered reduction plans: node removal by selector, visibility culling
from an enclosing camera sphere, oriented box cuts, and style edits.

A plan is authored against a specific model, executed server-side step by
step, and reported against the triangle budgets (2M ideal / 3M hard by
default). Plans never auto-reduce: the verdict is advisory and the steps
run exactly as written.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .renderer import orbit_camera  # noqa: F401  (re-export convenience)
from .renderer import Camera, look_at, render_visible_ids
from .scene import (
    Mesh,
    SceneError,
    SceneModel,
    compute_world_bounds,
    iter_subtree,
    remove_nodes,
    total_triangles,
    with_styles,
    world_transforms,
)
from .transforms import Aabb, quat_conjugate, quat_rotate

IDEAL_BUDGET = 2_000_000
HARD_BUDGET = 3_000_000

STEP_KINDS = (
    "remove_nodes", "remove_by_size", "remove_by_name", "remove_by_type",
    "visibility_cull", "box_cut", "set_color", "set_opacity", "set_occlusion_only",
)


class PlanError(Exception):
    """Invalid plan document or a step that cannot apply; carries the step
    index when raised during execution."""


@dataclass(frozen=True)
class ReductionStep:
    kind: str
    params: dict


@dataclass
class ReductionPlan:
    model_id: str
    steps: list
    ideal_budget: int = IDEAL_BUDGET
    hard_budget: int = HARD_BUDGET


@dataclass
class StepReport:
    index: int
    kind: str
    removed: list
    triangle_delta: int


@dataclass
class ReductionReport:
    initial_triangles: int
    final_triangles: int
    verdict: str
    steps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "initial_triangles": self.initial_triangles,
            "final_triangles": self.final_triangles,
            "verdict": self.verdict,
            "steps": [
                {"index": s.index, "kind": s.kind, "removed": s.removed,
                 "triangle_delta": s.triangle_delta}
                for s in self.steps
            ],
        }


# ------------------------------------------------------------ plan parsing


def _require(cond: bool, msg: str):
    if not cond:
        raise PlanError(msg)


def parse_plan(doc: dict) -> ReductionPlan:
    """Validate a plan JSON document. Parameter errors are rejected here,
    at build time, not during execution."""
    _require(isinstance(doc, dict), "plan must be a JSON object")
    model_id = doc.get("model_id", "")
    ideal = doc.get("ideal_budget", IDEAL_BUDGET)
    hard = doc.get("hard_budget", HARD_BUDGET)
    _require(isinstance(ideal, int) and ideal > 0, "ideal_budget must be a positive integer")
    _require(isinstance(hard, int) and hard > 0, "hard_budget must be a positive integer")
    _require(ideal <= hard, f"ideal_budget {ideal} exceeds hard_budget {hard}")
    raw_steps = doc.get("steps", [])
    _require(isinstance(raw_steps, list), "steps must be a list")
    steps = []
    for i, raw in enumerate(raw_steps):
        try:
            steps.append(_parse_step(raw))
        except PlanError as e:
            raise PlanError(f"step {i}: {e}") from None
    return ReductionPlan(model_id=model_id, steps=steps, ideal_budget=ideal, hard_budget=hard)


def _parse_step(raw: dict) -> ReductionStep:
    _require(isinstance(raw, dict), "step must be an object")
    kind = raw.get("kind")
    _require(kind in STEP_KINDS, f"unknown step kind {kind!r}")
    p = {}
    if kind == "remove_nodes":
        ids = raw.get("ids")
        _require(isinstance(ids, list) and all(isinstance(x, str) for x in ids),
                 "ids must be a list of node ids")
        p["ids"] = list(ids)
    elif kind == "remove_by_size":
        t = raw.get("threshold")
        _require(isinstance(t, (int, float)) and t >= 0, "threshold must be a non-negative number")
        p["threshold"] = float(t)
    elif kind == "remove_by_name":
        _require(isinstance(raw.get("pattern"), str), "pattern must be a string")
        p["pattern"] = raw["pattern"]
        p["is_regex"] = bool(raw.get("is_regex", False))
        if p["is_regex"]:
            try:
                re.compile(p["pattern"])
            except re.error as e:
                raise PlanError(f"invalid regex {p['pattern']!r}: {e}") from None
    elif kind == "remove_by_type":
        _require(isinstance(raw.get("node_type"), str), "node_type must be a string")
        p["node_type"] = raw["node_type"]
    elif kind == "visibility_cull":
        center = raw.get("center")
        _require(isinstance(center, list) and len(center) == 3, "center must be a 3-vector")
        p["center"] = [float(x) for x in center]
        r = raw.get("radius")
        _require(isinstance(r, (int, float)) and r > 0, "radius must be positive")
        p["radius"] = float(r)
        c = raw.get("camera_count", 64)
        _require(isinstance(c, int) and c >= 4, "camera_count must be an integer >= 4")
        p["camera_count"] = c
    elif kind == "box_cut":
        box = raw.get("box")
        _require(isinstance(box, dict), "box must be an object with min/max")
        lo, hi = box.get("min"), box.get("max")
        _require(isinstance(lo, list) and len(lo) == 3 and isinstance(hi, list) and len(hi) == 3,
                 "box min/max must be 3-vectors")
        lo = [float(x) for x in lo]
        hi = [float(x) for x in hi]
        _require(all(a < b for a, b in zip(lo, hi)), "box must have positive volume")
        p["box_min"], p["box_max"] = lo, hi
        rot = box.get("rotation", [1.0, 0.0, 0.0, 0.0])
        _require(isinstance(rot, list) and len(rot) == 4, "box rotation must be a quaternion [w,x,y,z]")
        p["rotation"] = [float(x) for x in rot]
        mode = raw.get("mode")
        _require(mode in ("keep", "cut"), "mode must be keep or cut")
        p["mode"] = mode
    elif kind in ("set_color", "set_opacity", "set_occlusion_only"):
        ids = raw.get("ids")
        _require(isinstance(ids, list) and all(isinstance(x, str) for x in ids),
                 "ids must be a list of node ids")
        p["ids"] = list(ids)
        if kind == "set_color":
            rgb = raw.get("rgb")
            _require(isinstance(rgb, list) and len(rgb) == 3
                     and all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in rgb),
                     "rgb must be three numbers in [0,1]")
            p["rgb"] = [float(x) for x in rgb]
        elif kind == "set_opacity":
            v = raw.get("value")
            _require(isinstance(v, (int, float)) and 0 <= v <= 1, "opacity must be in [0,1]")
            p["value"] = float(v)
        else:
            _require(isinstance(raw.get("flag"), bool), "flag must be a boolean")
            p["flag"] = raw["flag"]
    return ReductionStep(kind=kind, params=p)


def plan_to_dict(plan: ReductionPlan) -> dict:
    steps = []
    for s in plan.steps:
        d = {"kind": s.kind}
        if s.kind == "box_cut":
            d["box"] = {"min": s.params["box_min"], "max": s.params["box_max"],
                        "rotation": s.params["rotation"]}
            d["mode"] = s.params["mode"]
        else:
            d.update(s.params)
        steps.append(d)
    return {"model_id": plan.model_id, "ideal_budget": plan.ideal_budget,
            "hard_budget": plan.hard_budget, "steps": steps}


# -------------------------------------------------------------- selectors


def subtree_bounds(model: SceneModel) -> dict:
    """World-space bounds of every node's subtree in one vertex sweep."""
    worlds = world_transforms(model)
    own: dict[str, Aabb] = {}
    for nid in model.nodes:
        node = model.nodes[nid]
        if node.mesh is None:
            own[nid] = Aabb.empty()
            continue
        mesh = model.meshes[node.mesh]
        if mesh.positions.shape[0] == 0:
            own[nid] = Aabb.empty()
            continue
        w = worlds[nid]
        own[nid] = Aabb.from_points(mesh.positions @ w[:3, :3].T + w[:3, 3])
    agg: dict[str, Aabb] = {}
    for nid in reversed(list(iter_subtree(model, model.root))):
        b = own[nid]
        for child in model.nodes[nid].children:
            b = b.union(agg[child])
        agg[nid] = b
    return agg


def select_by_size(model: SceneModel, threshold: float) -> set:
    """Mesh-bearing nodes whose world subtree bounds diagonal is strictly
    below the threshold (meters). The root never matches."""
    bounds = subtree_bounds(model)
    out = set()
    for nid, node in model.nodes.items():
        if nid == model.root or node.mesh is None:
            continue
        b = bounds[nid]
        if b.is_empty:
            continue
        if b.diagonal < threshold:
            out.add(nid)
    return out


def select_by_name(model: SceneModel, pattern: str, is_regex: bool = False) -> set:
    if is_regex:
        try:
            rx = re.compile(pattern)
        except re.error as e:
            raise PlanError(f"invalid regex {pattern!r}: {e}") from None
        match = lambda name: rx.search(name) is not None
    else:
        match = lambda name: pattern in name
    return {nid for nid, node in model.nodes.items()
            if nid != model.root and match(node.name)}


def select_by_type(model: SceneModel, node_type: str) -> set:
    return {nid for nid, node in model.nodes.items()
            if nid != model.root and node.node_type == node_type}


def select_nodes(model: SceneModel, selector: dict) -> set:
    kind = selector.get("kind")
    if kind == "by_size":
        return select_by_size(model, float(selector["threshold"]))
    if kind == "by_name":
        return select_by_name(model, selector["pattern"], bool(selector.get("is_regex", False)))
    if kind == "by_type":
        return select_by_type(model, selector["node_type"])
    raise PlanError(f"unknown selector kind {kind!r}")


# -------------------------------------------------------- visibility cull


def fibonacci_directions(count: int) -> np.ndarray:
    """Deterministic unit directions, near-uniform over the sphere."""
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def visibility_cull(model: SceneModel, center, radius: float, camera_count: int = 64,
                    directions: np.ndarray | None = None, resolution: int = 256) -> set:
    """Node ids visible from cameras on the sphere, all looking at its
    center. A node is kept iff one of its fragments wins or ties the depth
    test in at least one camera; nodes with opacity < 1 never occlude."""
    if camera_count < 4:
        raise SceneError(f"camera_count must be >= 4, got {camera_count}")
    center = np.asarray(center, dtype=np.float64)
    bounds = compute_world_bounds(model, model.root)
    if bounds.is_empty:
        return set()
    corners = bounds.corners()
    reach = float(np.max(np.linalg.norm(corners - center, axis=1)))
    if reach > radius:
        raise SceneError(
            f"camera sphere radius {radius} does not enclose model (needs >= {reach:.6g})")

    if directions is None:
        directions = fibonacci_directions(camera_count)
    else:
        directions = np.asarray(directions, dtype=np.float64)
        if directions.shape[0] != camera_count:
            raise SceneError("directions length must equal camera_count")

    kept: set = set()
    for d in directions:
        eye = center + radius * d
        to_corner = corners - eye
        dist = np.linalg.norm(to_corner, axis=1)
        fwd = center - eye
        fwd_n = fwd / np.linalg.norm(fwd)
        cosang = np.clip((to_corner @ fwd_n) / np.maximum(dist, 1e-12), -1.0, 1.0)
        half_angle = float(np.max(np.arccos(cosang)))
        vfov = min(math.pi * 0.9, max(1e-3, 2.0 * half_angle * 1.1))
        near = max(1e-6, (radius - reach) * 0.5, radius * 1e-5)
        cam = Camera(pose=look_at(eye, center), vfov=vfov, aspect=1.0,
                     near=near, far=radius + reach)
        _ids, visible = render_visible_ids(model, cam, resolution, resolution)
        kept |= visible
    return kept


# ----------------------------------------------------------------- box cut


def _tri_box_overlap(tri: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis triangle vs origin-centered axis-aligned box test,
    vectorized over (m, 3, 3) triangles. Touching counts as overlap."""
    m = tri.shape[0]
    sep = np.zeros(m, dtype=bool)
    # box face axes
    for a in range(3):
        lo = tri[:, :, a].min(axis=1)
        hi = tri[:, :, a].max(axis=1)
        sep |= (lo > half[a]) | (hi < -half[a])
    # triangle plane
    e0 = tri[:, 1] - tri[:, 0]
    e1 = tri[:, 2] - tri[:, 1]
    e2 = tri[:, 0] - tri[:, 2]
    n = np.cross(e0, e1)
    d = np.sum(n * tri[:, 0], axis=1)
    r = np.abs(n) @ half
    sep |= np.abs(d) > r
    # nine edge cross axes: cross(unit_j, edge)
    for edge in (e0, e1, e2):
        for j in range(3):
            axis = np.zeros_like(edge)
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            axis[:, j1] = -edge[:, j2]
            axis[:, j2] = edge[:, j1]
            proj = np.einsum("mvc,mc->mv", tri, axis)
            r = np.abs(axis) @ half
            sep |= (proj.min(axis=1) > r) | (proj.max(axis=1) < -r)
    return ~sep


def box_cut(model: SceneModel, box_min, box_max, rotation=(1.0, 0.0, 0.0, 0.0),
            mode: str = "keep") -> SceneModel:
    """Retain (keep) or remove (cut) triangles intersecting the oriented
    box, whole triangles only. Leaf nodes emptied of triangles are removed;
    interior nodes just lose their mesh. Meshes that change get fresh ids
    with a single-level LOD chain."""
    if mode not in ("keep", "cut"):
        raise PlanError(f"mode must be keep or cut, got {mode!r}")
    lo = np.asarray(box_min, dtype=np.float64)
    hi = np.asarray(box_max, dtype=np.float64)
    if not np.all(lo < hi):
        raise PlanError("box must have positive volume")
    q = np.asarray(rotation, dtype=np.float64)
    q = q / np.linalg.norm(q)
    box_center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    q_inv = quat_conjugate(q)

    worlds = world_transforms(model)
    nodes = dict(model.nodes)
    meshes = dict(model.meshes)
    emptied_leaves = []
    serial = 0
    for nid in iter_subtree(model, model.root):
        node = nodes[nid]
        if node.mesh is None:
            continue
        mesh = meshes[node.mesh]
        faces = mesh.lods[0]
        if faces.shape[0] == 0:
            continue
        w = worlds[nid]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        tri = pts[faces.reshape(-1)].reshape(-1, 3, 3)
        local = quat_rotate(q_inv, (tri - box_center).reshape(-1, 3)).reshape(-1, 3, 3)
        overlap = _tri_box_overlap(local, half)
        wanted = overlap if mode == "keep" else ~overlap
        if wanted.all():
            continue
        if not wanted.any():
            nodes[nid] = _without_mesh(node)
            if not node.children:
                emptied_leaves.append(nid)
            continue
        serial += 1
        new_id = f"{node.mesh}.cut{serial}"
        meshes[new_id] = Mesh(mesh_id=new_id, positions=mesh.positions,
                              lods=[faces[wanted]])
        nodes[nid] = _with_mesh(node, new_id)

    out = SceneModel(model_id=model.model_id, root=model.root, nodes=nodes,
                     meshes=meshes, unit_scale=model.unit_scale)
    out = _drop_unused_meshes(out)
    if emptied_leaves:
        out = remove_nodes(out, set(emptied_leaves))
    return out


def _without_mesh(node):
    from dataclasses import replace

    return replace(node, mesh=None)


def _with_mesh(node, mesh_id: str):
    from dataclasses import replace

    return replace(node, mesh=mesh_id)


def _drop_unused_meshes(model: SceneModel) -> SceneModel:
    used = {n.mesh for n in model.nodes.values() if n.mesh is not None}
    meshes = {mid: m for mid, m in model.meshes.items() if mid in used}
    return SceneModel(model_id=model.model_id, root=model.root, nodes=model.nodes,
                      meshes=meshes, unit_scale=model.unit_scale)


# -------------------------------------------------------------- execution


def apply_plan(model: SceneModel, plan: ReductionPlan) -> tuple[SceneModel, ReductionReport]:
    initial = total_triangles(model)
    report = ReductionReport(initial_triangles=initial, final_triangles=initial, verdict="over")
    current = model
    before = initial
    for i, step in enumerate(plan.steps):
        try:
            current, removed = _apply_step(current, step)
        except (PlanError, SceneError) as e:
            raise PlanError(f"step {i} ({step.kind}): {e}") from None
        after = total_triangles(current)
        report.steps.append(StepReport(index=i, kind=step.kind,
                                       removed=sorted(removed),
                                       triangle_delta=before - after))
        before = after
    report.final_triangles = before
    if before <= plan.ideal_budget:
        report.verdict = "under_ideal"
    elif before <= plan.hard_budget:
        report.verdict = "under_hard"
    else:
        report.verdict = "over"
    return current, report


def _apply_step(model: SceneModel, step: ReductionStep) -> tuple[SceneModel, set]:
    p = step.params
    if step.kind == "remove_nodes":
        ids = set(p["ids"])
        unknown = ids - set(model.nodes)
        if unknown:
            raise PlanError(f"unknown nodes {sorted(unknown)}")
        return remove_nodes(model, ids), ids
    if step.kind == "remove_by_size":
        ids = select_by_size(model, p["threshold"])
        return (remove_nodes(model, ids) if ids else model), ids
    if step.kind == "remove_by_name":
        ids = select_by_name(model, p["pattern"], p["is_regex"])
        return (remove_nodes(model, ids) if ids else model), ids
    if step.kind == "remove_by_type":
        ids = select_by_type(model, p["node_type"])
        return (remove_nodes(model, ids) if ids else model), ids
    if step.kind == "visibility_cull":
        kept = visibility_cull(model, p["center"], p["radius"], p["camera_count"])
        doomed = set()
        # remove mesh nodes no camera saw, unless a descendant survived
        for nid, node in model.nodes.items():
            if nid == model.root or node.mesh is None or nid in kept:
                continue
            if any(d in kept for d in iter_subtree(model, nid)):
                continue
            doomed.add(nid)
        doomed = _roots_only(model, doomed)
        return (remove_nodes(model, doomed) if doomed else model), doomed
    if step.kind == "box_cut":
        out = box_cut(model, p["box_min"], p["box_max"], p["rotation"], p["mode"])
        removed = set(model.nodes) - set(out.nodes)
        return out, removed
    # style steps
    ids = set(p["ids"])
    unknown = ids - set(model.nodes)
    if unknown:
        raise PlanError(f"unknown nodes {sorted(unknown)}")
    if step.kind == "set_color":
        return with_styles(model, ids, color=tuple(p["rgb"])), set()
    if step.kind == "set_opacity":
        return with_styles(model, ids, opacity=p["value"]), set()
    return with_styles(model, ids, occlusion_only=p["flag"]), set()


def _roots_only(model: SceneModel, ids: set) -> set:
    """Drop ids whose ancestor is also selected; remove_nodes takes
    subtrees, so only subtree roots are needed."""
    out = set()
    for nid in ids:
        cursor = model.nodes[nid].parent
        covered = False
        while cursor is not None:
            if cursor in ids:
                covered = True
                break
            cursor = model.nodes[cursor].parent
        if not covered:
            out.add(nid)
    return out
