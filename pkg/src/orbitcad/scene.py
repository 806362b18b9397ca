"""In-memory scene graph: the node tree, meshes with LOD chains, and the
triangle/bounds accounting every other subsystem leans on.

A ``SceneModel`` is treated as immutable after construction; "mutation"
(reduction steps, style edits) builds a new model sharing mesh arrays where
possible, so models are safe to hand to concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .transforms import Aabb, Transform


class SceneError(Exception):
    pass


@dataclass
class RenderStyle:
    color: tuple[float, float, float] | None = None
    opacity: float = 1.0
    occlusion_only: bool = False

    def __post_init__(self):
        if not (0.0 <= self.opacity <= 1.0):
            raise SceneError(f"opacity {self.opacity} outside [0,1]")
        if self.color is not None:
            self.color = tuple(float(c) for c in self.color)
            if len(self.color) != 3 or any(not (0.0 <= c <= 1.0) for c in self.color):
                raise SceneError(f"color {self.color} outside [0,1]^3")


@dataclass
class Mesh:
    """Triangle mesh. ``lods[0]`` is the full-fidelity index buffer; later
    levels index the same vertex array with fewer triangles (decimation never
    introduces vertices)."""

    mesh_id: str
    positions: np.ndarray  # (n, 3) float64, model units
    lods: list[np.ndarray]  # each (m, 3) uint32

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.lods = [np.ascontiguousarray(l, dtype=np.uint32).reshape(-1, 3) for l in self.lods]
        if not self.lods:
            raise SceneError(f"mesh {self.mesh_id}: needs at least LOD level 0")
        n = self.positions.shape[0]
        for i, lod in enumerate(self.lods):
            if lod.size and int(lod.max()) >= n:
                raise SceneError(f"mesh {self.mesh_id}: lod {i} index {int(lod.max())} >= {n} vertices")
        counts = [l.shape[0] for l in self.lods]
        if any(counts[i] < counts[i + 1] for i in range(len(counts) - 1)):
            raise SceneError(f"mesh {self.mesh_id}: lod triangle counts must be non-increasing: {counts}")

    @property
    def indices(self) -> np.ndarray:
        return self.lods[0]

    def triangle_count(self, level: int = 0) -> int:
        return int(self.lods[level].shape[0])

    @property
    def lod_count(self) -> int:
        return len(self.lods)


@dataclass
class SceneNode:
    id: str
    name: str = ""
    node_type: str = ""
    parent: str | None = None
    children: list[str] = field(default_factory=list)
    local_transform: Transform = field(default_factory=Transform.identity)
    mesh: str | None = None
    style: RenderStyle = field(default_factory=RenderStyle)


@dataclass
class SceneModel:
    model_id: str
    root: str
    nodes: dict[str, SceneNode]
    meshes: dict[str, Mesh]
    unit_scale: float = 1.0  # meters per model unit

    def __post_init__(self):
        if self.unit_scale <= 0:
            raise SceneError(f"unit_scale must be positive, got {self.unit_scale}")

    def node(self, node_id: str) -> SceneNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise SceneError(f"unknown node id {node_id!r}") from None


def validate(model: SceneModel) -> None:
    """Check the structural invariants: rooted tree, consistent parent/child
    links, live mesh references. Raises SceneError on the first violation."""
    if model.root not in model.nodes:
        raise SceneError(f"root {model.root!r} not in nodes")
    if model.nodes[model.root].parent is not None:
        raise SceneError("root node has a parent")
    seen: set[str] = set()
    stack = [model.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise SceneError(f"node {nid!r} reachable twice (cycle or shared child)")
        seen.add(nid)
        node = model.node(nid)
        for cid in node.children:
            child = model.node(cid)
            if child.parent != nid:
                raise SceneError(f"node {cid!r} parent link {child.parent!r} != {nid!r}")
            stack.append(cid)
        if node.mesh is not None and node.mesh not in model.meshes:
            raise SceneError(f"node {nid!r} references missing mesh {node.mesh!r}")
    if seen != set(model.nodes):
        orphans = set(model.nodes) - seen
        raise SceneError(f"nodes unreachable from root: {sorted(orphans)}")


def _unit_scale_matrix(unit_scale: float) -> np.ndarray:
    m = np.eye(4)
    m[0, 0] = m[1, 1] = m[2, 2] = unit_scale
    return m


def world_transforms(model: SceneModel) -> dict[str, np.ndarray]:
    """World (meters) 4x4 matrix per node: unit scale at the top, then
    parent-before-child composition of local transforms."""
    out: dict[str, np.ndarray] = {}
    root_world = _unit_scale_matrix(model.unit_scale) @ model.node(model.root).local_transform.matrix()
    stack = [(model.root, root_world)]
    while stack:
        nid, world = stack.pop()
        out[nid] = world
        for cid in reversed(model.node(nid).children):
            stack.append((cid, world @ model.node(cid).local_transform.matrix()))
    return out


def iter_subtree(model: SceneModel, node_id: str):
    """Depth-first, parent-before-child, children in stored order."""
    model.node(node_id)
    stack = [node_id]
    while stack:
        nid = stack.pop()
        yield nid
        for cid in reversed(model.node(nid).children):
            stack.append(cid)


def compute_world_bounds(model: SceneModel, node_id: str) -> Aabb:
    """Exact world-space bounds of the node's mesh and all descendant meshes,
    computed by transforming every vertex (matches the brute-force oracle by
    construction). Subtrees with no meshes return the empty sentinel."""
    worlds = world_transforms(model)
    box = Aabb.empty()
    for nid in iter_subtree(model, node_id):
        node = model.nodes[nid]
        if node.mesh is None:
            continue
        mesh = model.meshes[node.mesh]
        if mesh.positions.shape[0] == 0:
            continue
        w = worlds[nid]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        box = box.union(Aabb.from_points(pts))
    return box


def total_triangles(model: SceneModel, lod_levels: dict[str, int] | None = None) -> int:
    """Sum of triangle counts over node-mesh instances. ``lod_levels`` maps
    node id -> selected LOD index; absent nodes count at level 0."""
    total = 0
    for nid, node in model.nodes.items():
        if node.mesh is None:
            continue
        level = 0 if lod_levels is None else lod_levels.get(nid, 0)
        total += model.meshes[node.mesh].triangle_count(level)
    return total


def flatten(model: SceneModel) -> list[tuple[str, np.ndarray, str]]:
    """(node_id, world 4x4, mesh_id) for every node carrying a mesh, in
    depth-first parent-before-child order. Deterministic given equal models."""
    worlds = world_transforms(model)
    out = []
    for nid in iter_subtree(model, model.root):
        node = model.nodes[nid]
        if node.mesh is not None:
            out.append((nid, worlds[nid], node.mesh))
    return out


def subtree_ids(model: SceneModel, node_id: str) -> set[str]:
    return set(iter_subtree(model, node_id))


def remove_nodes(model: SceneModel, ids: set[str]) -> SceneModel:
    """New model without the given nodes and their subtrees. Meshes no longer
    referenced are dropped. Removing the root raises (models keep a root)."""
    doomed: set[str] = set()
    for nid in ids:
        if nid not in model.nodes:
            raise SceneError(f"unknown node id {nid!r}")
        doomed |= subtree_ids(model, nid)
    if model.root in doomed:
        raise SceneError("cannot remove the root node")
    nodes: dict[str, SceneNode] = {}
    for nid, node in model.nodes.items():
        if nid in doomed:
            continue
        kept_children = [c for c in node.children if c not in doomed]
        nodes[nid] = replace(node, children=kept_children)
    used = {n.mesh for n in nodes.values() if n.mesh is not None}
    meshes = {mid: m for mid, m in model.meshes.items() if mid in used}
    return replace(model, nodes=nodes, meshes=meshes)


def with_styles(model: SceneModel, ids: set[str], **style_updates) -> SceneModel:
    """New model with the given nodes' styles updated (color/opacity/
    occlusion_only). Unknown ids raise."""
    nodes = dict(model.nodes)
    for nid in ids:
        node = model.node(nid)
        nodes[nid] = replace(node, style=replace(node.style, **style_updates))
    return replace(model, nodes=nodes)
