"""Level-of-detail chain generation by quadric-error edge collapse.

The decimator collapses edges into existing endpoint vertices (subset
placement), so no level ever introduces vertex positions that were not in
the full-fidelity mesh, and every LOD level indexes the shared level-0
vertex buffer. Collapses are applied in batches: each pass computes fresh
per-vertex quadrics, picks a cost-sorted independent edge matching, and
rewrites the index buffer in one vectorized step.
"""

from __future__ import annotations

import math

import numpy as np

from .scene import Mesh, SceneError


def generate_lods(mesh: Mesh, targets: list[float]) -> Mesh:
    """Return a copy of ``mesh`` with LOD levels for each target ratio.

    ``targets`` must be strictly decreasing ratios in (0, 1]. A leading 1.0
    names the full-fidelity level and adds nothing; every ratio r < 1 appends
    a level with at most ceil(r * level0_count) triangles (the target is
    floored at one triangle, but a mesh whose faces all degenerate during
    collapse can reach an empty level). Levels are decimated sequentially so
    counts never increase.
    """
    prev = None
    for r in targets:
        if not (0.0 < r <= 1.0):
            raise SceneError(f"LOD ratio {r} outside (0, 1]")
        if prev is not None and r >= prev:
            raise SceneError(f"LOD ratios must strictly decrease, got {prev} then {r}")
        prev = r

    level0 = mesh.lods[0]
    n0 = level0.shape[0]
    lods = [level0]
    current = level0
    for r in targets:
        if r == 1.0:
            continue
        target = max(1, math.ceil(r * n0))
        current = _decimate(mesh.positions, current, target)
        lods.append(current)
    return Mesh(mesh_id=mesh.mesh_id, positions=mesh.positions, lods=lods)


def _decimate(positions: np.ndarray, faces: np.ndarray, target: int) -> np.ndarray:
    faces = faces.astype(np.int64)
    guard = 0
    while faces.shape[0] > target:
        guard += 1
        if guard > 10000:
            raise RuntimeError("decimation failed to converge")
        faces = _collapse_pass(positions, faces, target)
    return faces.astype(np.uint32)


def _collapse_pass(positions: np.ndarray, faces: np.ndarray, target: int) -> np.ndarray:
    nv = positions.shape[0]
    quadrics = _vertex_quadrics(positions, faces, nv)

    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges.sort(axis=1)
    edges = np.unique(edges, axis=0)

    q_edge = (quadrics[edges[:, 0]] + quadrics[edges[:, 1]]).reshape(-1, 4, 4)
    homo = np.ones((edges.shape[0], 4))
    homo[:, :3] = positions[edges[:, 0]]
    cost_a = np.einsum("mi,mij,mj->m", homo, q_edge, homo)
    homo[:, :3] = positions[edges[:, 1]]
    cost_b = np.einsum("mi,mij,mj->m", homo, q_edge, homo)
    into_b = cost_b <= cost_a
    cost = np.where(into_b, cost_b, cost_a)

    order = np.argsort(cost, kind="stable")
    edges = edges[order]
    into_b = into_b[order]

    # independent matching: an edge is chosen iff it is the cheapest edge
    # at both of its endpoints
    m = edges.shape[0]
    first_touch = np.full(nv, m, dtype=np.int64)
    rank = np.repeat(np.arange(m), 2)
    np.minimum.at(first_touch, edges.reshape(-1), rank)
    sel = (first_touch[edges[:, 0]] == np.arange(m)) & (first_touch[edges[:, 1]] == np.arange(m))
    chosen = np.nonzero(sel)[0]

    # most collapses remove two triangles; do not overshoot the target by much
    need = (faces.shape[0] - target + 1) // 2
    chosen = chosen[: max(1, need)]

    remap = np.arange(nv, dtype=np.int64)
    src = np.where(into_b[chosen], edges[chosen, 0], edges[chosen, 1])
    dst = np.where(into_b[chosen], edges[chosen, 1], edges[chosen, 0])
    remap[src] = dst

    faces = remap[faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return faces[ok]


def _vertex_quadrics(positions: np.ndarray, faces: np.ndarray, nv: int) -> np.ndarray:
    """Area-weighted plane quadrics summed per vertex, flattened to (nv, 16)."""
    p0 = positions[faces[:, 0]]
    p1 = positions[faces[:, 1]]
    p2 = positions[faces[:, 2]]
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    area = norm[:, 0] * 0.5
    unit = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    plane = np.concatenate([unit, -np.sum(unit * p0, axis=1, keepdims=True)], axis=1)
    k = (plane[:, :, None] * plane[:, None, :]) * area[:, None, None]
    k_flat = k.reshape(-1, 16)

    flat_idx = faces.reshape(-1)
    weights = np.repeat(k_flat, 3, axis=0)
    quadrics = np.empty((nv, 16))
    for c in range(16):
        quadrics[:, c] = np.bincount(flat_idx, weights=weights[:, c], minlength=nv)
    return quadrics
