"""Headless rendering: draw planning under a triangle budget, frustum and
occlusion culling, LOD selection, and a deterministic software rasterizer.

Determinism contract: all rasterization runs in float64 with pixel centers
at (j + 0.5, i + 0.5), triangles processed in flattened scene order, strict
less-than depth testing, and no threading. Identical inputs therefore give
byte-identical images on any IEEE-754 platform.

Camera convention: right-handed camera space looking down -Z, +Y up. The
Camera pose is camera-to-world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import SceneError, SceneModel, compute_world_bounds, flatten
from .transforms import Aabb, Pose, quat_from_matrix

DEFAULT_COLOR = (0.78, 0.78, 0.80)

# LOD switch thresholds in projected pixels
LOD_NEAR_PX = 200.0
LOD_FAR_PX = 20.0


@dataclass(frozen=True)
class Camera:
    pose: Pose
    vfov: float  # vertical field of view, radians
    aspect: float = 1.0
    near: float = 0.01
    far: float = 1000.0

    def __post_init__(self):
        if not (0.0 < self.vfov < math.pi):
            raise SceneError(f"vfov {self.vfov} outside (0, pi)")
        if not (0.0 < self.near < self.far):
            raise SceneError(f"need 0 < near < far, got {self.near}, {self.far}")

    def view_matrix(self) -> np.ndarray:
        return self.pose.inverse().matrix()

    def projection_matrix(self) -> np.ndarray:
        f = 1.0 / math.tan(self.vfov / 2.0)
        n, fr = self.near, self.far
        m = np.zeros((4, 4))
        m[0, 0] = f / self.aspect
        m[1, 1] = f
        m[2, 2] = (fr + n) / (n - fr)
        m[2, 3] = 2.0 * fr * n / (n - fr)
        m[3, 2] = -1.0
        return m


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - eye
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise SceneError("look_at eye and target coincide")
    fwd = fwd / norm
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:  # forward parallel to up, pick another up
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        rn = np.linalg.norm(right)
    right = right / rn
    true_up = np.cross(right, fwd)
    rot = np.stack([right, true_up, -fwd], axis=1)  # camera-to-world columns
    return Pose(rotation=quat_from_matrix(rot), translation=eye)


def _cosd(deg: float) -> float:
    deg = deg % 360.0
    if deg == 0.0:
        return 1.0
    if deg == 90.0 or deg == 270.0:
        return 0.0
    if deg == 180.0:
        return -1.0
    return math.cos(math.radians(deg))


def _sind(deg: float) -> float:
    return _cosd(deg - 90.0)


def orbit_camera(center, distance: float, azimuth_deg: float, elevation_deg: float,
                 vfov: float, near: float, far: float) -> Camera:
    ce = _cosd(elevation_deg)
    eye = np.asarray(center, dtype=np.float64) + distance * np.array([
        ce * _cosd(azimuth_deg), ce * _sind(azimuth_deg), _sind(elevation_deg)])
    return Camera(pose=look_at(eye, center), vfov=vfov, aspect=1.0, near=near, far=far)


# ------------------------------------------------------------ scene gather


@dataclass
class DrawNode:
    node_id: str
    world: np.ndarray
    mesh_id: str
    triangles: int
    bounds: Aabb
    color: tuple
    opacity: float
    occlusion_only: bool
    lod_count: int = 1


def build_draw_nodes(model: SceneModel, lod_levels: dict | None = None) -> list[DrawNode]:
    """Flatten to renderable entries with world bounds and triangle counts
    at the selected LOD level (default 0)."""
    out = []
    for nid, world, mid in flatten(model):
        mesh = model.meshes[mid]
        level = min((lod_levels or {}).get(nid, 0), len(mesh.lods) - 1)
        node = model.nodes[nid]
        pts = mesh.positions @ world[:3, :3].T + world[:3, 3]
        out.append(DrawNode(
            node_id=nid, world=world, mesh_id=mid,
            triangles=mesh.lods[level].shape[0],
            bounds=Aabb.from_points(pts) if pts.shape[0] else Aabb.empty(),
            color=node.style.color or DEFAULT_COLOR,
            opacity=node.style.opacity,
            occlusion_only=node.style.occlusion_only,
            lod_count=len(mesh.lods),
        ))
    return out


# ------------------------------------------------------------ draw planning


@dataclass
class DrawPlan:
    budget: int
    frames: list = field(default_factory=list)  # list of node-id lists


def plan_iterative_draw(nodes: list[tuple[str, int]], budget: int) -> DrawPlan:
    """Pack (node_id, triangle_count) pairs into successive frames.

    Nodes sort by triangle count descending (heavy geometry lands in early
    frames), ties broken by node id, then first-fit into the earliest frame
    with budget headroom. A single node above budget gets a frame to itself.
    """
    if budget < 1:
        raise SceneError(f"budget must be >= 1, got {budget}")
    plan = DrawPlan(budget=budget)
    sums: list[int] = []
    for nid, tris in sorted(nodes, key=lambda e: (-e[1], e[0])):
        for i, total in enumerate(sums):
            if total + tris <= budget:
                plan.frames[i].append(nid)
                sums[i] = total + tris
                break
        else:
            plan.frames.append([nid])
            sums.append(tris)
    return plan


# ----------------------------------------------------------------- culling


def _frustum_planes(camera: Camera) -> np.ndarray:
    m = camera.projection_matrix() @ camera.view_matrix()
    rows = [m[3] + m[0], m[3] - m[0], m[3] + m[1], m[3] - m[1], m[3] + m[2], m[3] - m[2]]
    return np.stack(rows)


def frustum_cull(nodes: list[DrawNode], camera: Camera) -> set:
    """Node ids whose world bounds intersect the view frustum (conservative:
    plane test against the box's positive vertex)."""
    planes = _frustum_planes(camera)
    keep = set()
    for node in nodes:
        b = node.bounds
        if b.is_empty:
            continue
        inside = True
        for p in planes:
            pv = np.where(p[:3] >= 0.0, b.max, b.min)
            if p[:3] @ pv + p[3] < 0.0:
                inside = False
                break
        if inside:
            keep.add(node.node_id)
    return keep


def _box_depth_range(bounds: Aabb, view: np.ndarray) -> tuple[float, float]:
    """Exact min/max camera-space distance (-z) over an axis-aligned box."""
    row = -view[2]  # -z_cam = row . (p, 1)
    lo = hi = row[3]
    for a in range(3):
        c = row[a]
        lo += c * (bounds.min[a] if c >= 0 else bounds.max[a])
        hi += c * (bounds.max[a] if c >= 0 else bounds.min[a])
    return lo, hi


def _screen_rect(bounds: Aabb, camera: Camera, width: int, height: int):
    """Conservative pixel rect covering the projected box, or None when the
    box is entirely behind the near plane. A box straddling the near plane
    covers the full viewport."""
    view = camera.view_matrix()
    proj = camera.projection_matrix()
    corners = np.hstack([bounds.corners(), np.ones((8, 1))])
    cam = corners @ view.T
    depth = -cam[:, 2]
    if np.all(depth < camera.near):
        return None
    if np.any(depth < camera.near):
        return (0, 0, width - 1, height - 1)
    clip = cam @ proj.T
    ndc = clip[:, :3] / clip[:, 3:4]
    xs = (ndc[:, 0] * 0.5 + 0.5) * width
    ys = (0.5 - ndc[:, 1] * 0.5) * height
    x0 = max(0, int(math.floor(xs.min())))
    x1 = min(width - 1, int(math.ceil(xs.max())))
    y0 = max(0, int(math.floor(ys.min())))
    y1 = min(height - 1, int(math.ceil(ys.max())))
    if x1 < x0 or y1 < y0:
        return None
    return (x0, y0, x1, y1)


def occlusion_cull(model: SceneModel, camera: Camera, width: int = 256, height: int = 256,
                   max_occluders: int = 16) -> set:
    """Two-pass occlusion query: the largest screen-area occluders render to
    a depth buffer, every other node keeps iff its box could be in front of
    that buffer somewhere inside its screen rect. Conservative at the given
    resolution."""
    if width < 16 or height < 16:
        raise SceneError("occlusion culling needs at least 16x16 resolution")
    nodes = build_draw_nodes(model)
    occluding = [n for n in nodes if not n.bounds.is_empty
                 and (n.opacity >= 1.0 or n.occlusion_only)]
    scored = []
    for n in occluding:
        rect = _screen_rect(n.bounds, camera, width, height)
        if rect is None:
            continue
        area = (rect[2] - rect[0] + 1) * (rect[3] - rect[1] + 1)
        scored.append((-area, n.node_id, n))
    scored.sort(key=lambda e: (e[0], e[1]))
    occluders = [e[2] for e in scored[:max_occluders]]
    occluder_ids = {n.node_id for n in occluders}

    depth = np.full((height, width), np.inf, dtype=np.float64)
    view = camera.view_matrix()
    for n in occluders:
        tri_xy, tri_z, keep = _project_triangles(model, n, camera, view, width, height)
        _raster_depth(tri_xy, tri_z, depth)

    keep_ids = set(occluder_ids)
    for n in nodes:
        if n.node_id in keep_ids or n.bounds.is_empty:
            continue
        rect = _screen_rect(n.bounds, camera, width, height)
        if rect is None:
            continue
        near_depth, _ = _box_depth_range(n.bounds, view)
        near_depth = max(near_depth, camera.near)
        x0, y0, x1, y1 = rect
        if np.any(depth[y0 : y1 + 1, x0 : x1 + 1] >= near_depth):
            keep_ids.add(n.node_id)
    return keep_ids


def select_lod(bounds: Aabb, lod_count: int, camera: Camera, height_px: int) -> int:
    """LOD index from projected bounds diameter: level 0 above 200 px, the
    last level below 20 px, geometric interpolation between. Monotone in
    camera distance."""
    if lod_count < 1:
        raise SceneError("node has no LOD levels")
    if lod_count == 1 or bounds.is_empty:
        return 0
    diameter = bounds.diagonal
    dist = max(camera.near, float(np.linalg.norm(bounds.center - camera.pose.translation)))
    focal = (height_px / 2.0) / math.tan(camera.vfov / 2.0)
    px = diameter / dist * focal
    if px >= LOD_NEAR_PX:
        return 0
    if px <= LOD_FAR_PX:
        return lod_count - 1
    t = math.log(LOD_NEAR_PX / px) / math.log(LOD_NEAR_PX / LOD_FAR_PX)
    return min(lod_count - 1, int((lod_count - 1) * t))


# -------------------------------------------------------------- rasterizer


@dataclass
class RenderResult:
    color: np.ndarray  # (h, w, 4) uint8
    depth: np.ndarray  # (h, w) float32, +inf where empty


def _project_triangles(model, node: DrawNode, camera: Camera, view: np.ndarray,
                       width: int, height: int, lod: int = 0,
                       cut_plane: dict | None = None):
    """World-transform, cut, near/far discard, and project one node's mesh.
    Returns pixel-space xy (m, 3, 2), camera depth (m, 3), and the world
    triangle vertices (m, 3, 3) of kept triangles."""
    mesh = model.meshes[node.mesh_id]
    faces = mesh.lods[min(lod, len(mesh.lods) - 1)]
    if faces.shape[0] == 0:
        return (np.zeros((0, 3, 2)), np.zeros((0, 3)), np.zeros((0, 3, 3)))
    pts = mesh.positions @ node.world[:3, :3].T + node.world[:3, 3]
    tri = pts[faces.reshape(-1)].reshape(-1, 3, 3)

    if cut_plane is not None:
        axis = {"X": 0, "Y": 1, "Z": 2}[cut_plane["axis"]]
        offset = cut_plane["offset"]
        cam_side = 1.0 if camera.pose.translation[axis] >= offset else -1.0
        centroid = tri.mean(axis=1)
        tri = tri[(centroid[:, axis] - offset) * cam_side <= 0.0]
        if tri.shape[0] == 0:
            return (np.zeros((0, 3, 2)), np.zeros((0, 3)), np.zeros((0, 3, 3)))

    cam = tri @ view[:3, :3].T + view[:3, 3]
    z = -cam[:, :, 2]
    keep = np.all(z >= camera.near, axis=1) & np.any(z <= camera.far, axis=1)
    tri, cam, z = tri[keep], cam[keep], z[keep]
    if tri.shape[0] == 0:
        return (np.zeros((0, 3, 2)), np.zeros((0, 3)), np.zeros((0, 3, 3)))

    f = 1.0 / math.tan(camera.vfov / 2.0)
    ndc_x = (cam[:, :, 0] * (f / camera.aspect)) / z
    ndc_y = (cam[:, :, 1] * f) / z
    xy = np.stack([(ndc_x * 0.5 + 0.5) * width, (0.5 - ndc_y * 0.5) * height], axis=2)
    return xy, z, tri


def _tri_pixels(xy: np.ndarray, width: int, height: int):
    """Pixel-center sample grid for one triangle's bounding box, or None."""
    min_x, min_y = xy[:, 0].min(), xy[:, 1].min()
    max_x, max_y = xy[:, 0].max(), xy[:, 1].max()
    j0 = max(0, int(math.ceil(min_x - 0.5)))
    j1 = min(width - 1, int(math.floor(max_x - 0.5)))
    i0 = max(0, int(math.ceil(min_y - 0.5)))
    i1 = min(height - 1, int(math.floor(max_y - 0.5)))
    if j1 < j0 or i1 < i0:
        return None
    return j0, j1, i0, i1


def _tri_coverage(xy: np.ndarray, z: np.ndarray, width: int, height: int):
    """Yield (i0, i1, j0, j1, inside mask, interpolated depth) for one
    projected triangle, inclusive of boundary samples."""
    span = _tri_pixels(xy, width, height)
    if span is None:
        return None
    j0, j1, i0, i1 = span
    area2 = (xy[1, 0] - xy[0, 0]) * (xy[2, 1] - xy[0, 1]) - (xy[1, 1] - xy[0, 1]) * (xy[2, 0] - xy[0, 0])
    if area2 == 0.0:
        return None
    px = np.arange(j0, j1 + 1, dtype=np.float64) + 0.5
    py = (np.arange(i0, i1 + 1, dtype=np.float64) + 0.5)[:, None]
    w0 = ((xy[2, 0] - xy[1, 0]) * (py - xy[1, 1]) - (xy[2, 1] - xy[1, 1]) * (px - xy[1, 0])) / area2
    w1 = ((xy[0, 0] - xy[2, 0]) * (py - xy[2, 1]) - (xy[0, 1] - xy[2, 1]) * (px - xy[2, 0])) / area2
    w2 = 1.0 - w0 - w1
    inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    if not inside.any():
        return None
    inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2]  # 1/z is affine in screen space
    with np.errstate(divide="ignore"):
        depth = np.where(inv_z > 0.0, 1.0 / inv_z, np.inf)
    return i0, i1, j0, j1, inside, depth


def _raster_depth(tri_xy, tri_z, depth_buf) -> None:
    h, w = depth_buf.shape
    for t in range(tri_xy.shape[0]):
        cov = _tri_coverage(tri_xy[t], tri_z[t], w, h)
        if cov is None:
            continue
        i0, i1, j0, j1, inside, depth = cov
        window = depth_buf[i0 : i1 + 1, j0 : j1 + 1]
        mask = inside & (depth < window)
        window[mask] = depth[mask]


def _shade(tri_world: np.ndarray, cam_pos: np.ndarray, base: tuple) -> np.ndarray:
    """Flat headlight shading per triangle: (m, 3) float colors."""
    e1 = tri_world[:, 1] - tri_world[:, 0]
    e2 = tri_world[:, 2] - tri_world[:, 0]
    n = np.cross(e1, e2)
    nl = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, nl, out=np.zeros_like(n), where=nl > 0)
    to_cam = cam_pos - tri_world.mean(axis=1)
    tl = np.linalg.norm(to_cam, axis=1, keepdims=True)
    to_cam = np.divide(to_cam, tl, out=np.zeros_like(to_cam), where=tl > 0)
    intensity = np.abs(np.sum(n * to_cam, axis=1))
    shade = 0.25 + 0.75 * intensity
    return shade[:, None] * np.asarray(base)[None, :]


def rasterize(model: SceneModel, camera: Camera, width: int, height: int,
              cut_plane: dict | None = None, lod_levels: dict | None = None) -> RenderResult:
    """Deterministic z-buffered render. Occlusion-only nodes write depth but
    not color; opacity < 1 nodes composite far-to-near after the opaque pass;
    background is transparent black, so alpha > 0 is the coverage mask."""
    nodes = build_draw_nodes(model, lod_levels)
    view = camera.view_matrix()
    cam_pos = camera.pose.translation
    depth_buf = np.full((height, width), np.inf, dtype=np.float64)
    rgb = np.zeros((height, width, 3), dtype=np.float64)
    alpha = np.zeros((height, width), dtype=np.float64)

    def lod_of(n):
        return (lod_levels or {}).get(n.node_id, 0)

    # occlusion-only geometry seeds the depth buffer first so anything behind
    # it resolves to background
    for n in nodes:
        if not n.occlusion_only:
            continue
        xy, z, _tri = _project_triangles(model, n, camera, view, width, height, lod_of(n), cut_plane)
        _raster_depth(xy, z, depth_buf)

    transparent = []
    for n in nodes:
        if n.occlusion_only:
            continue
        xy, z, tri = _project_triangles(model, n, camera, view, width, height, lod_of(n), cut_plane)
        if xy.shape[0] == 0:
            continue
        colors = _shade(tri, cam_pos, n.color)
        if n.opacity >= 1.0:
            for t in range(xy.shape[0]):
                cov = _tri_coverage(xy[t], z[t], width, height)
                if cov is None:
                    continue
                i0, i1, j0, j1, inside, d = cov
                window = depth_buf[i0 : i1 + 1, j0 : j1 + 1]
                mask = inside & (d < window)
                if not mask.any():
                    continue
                window[mask] = d[mask]
                rgb[i0 : i1 + 1, j0 : j1 + 1][mask] = colors[t]
                alpha[i0 : i1 + 1, j0 : j1 + 1][mask] = 1.0
        else:
            transparent.append((n, xy, z, colors))

    # transparent pass: far to near, depth-tested but not depth-written
    batched = []
    for order, (n, xy, z, colors) in enumerate(transparent):
        zc = z.mean(axis=1)
        for t in range(xy.shape[0]):
            batched.append((-zc[t], order, t, n, xy[t], z[t], colors[t]))
    batched.sort(key=lambda e: (e[0], e[1], e[2]))
    for _, _, _, n, xy, z, color in batched:
        cov = _tri_coverage(xy, z, width, height)
        if cov is None:
            continue
        i0, i1, j0, j1, inside, d = cov
        window = depth_buf[i0 : i1 + 1, j0 : j1 + 1]
        mask = inside & (d < window)
        if not mask.any():
            continue
        a = n.opacity
        sub = rgb[i0 : i1 + 1, j0 : j1 + 1]
        sub[mask] = color * a + sub[mask] * (1.0 - a)
        asub = alpha[i0 : i1 + 1, j0 : j1 + 1]
        asub[mask] = a + asub[mask] * (1.0 - a)

    out = np.zeros((height, width, 4), dtype=np.uint8)
    out[:, :, :3] = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    out[:, :, 3] = np.rint(np.clip(alpha, 0.0, 1.0) * 255.0).astype(np.uint8)
    return RenderResult(color=out, depth=depth_buf.astype(np.float32))


def render_visible_ids(model: SceneModel, camera: Camera, width: int, height: int) -> tuple:
    """Id-buffer render for visibility queries.

    Opaque and occlusion-only nodes rasterize with depth writes; nodes with
    opacity < 1 do not occlude but count as visible where their fragments
    pass the opaque depth test. Returns (id buffer int32 with -1 background,
    set of visible node ids)."""
    nodes = build_draw_nodes(model)
    view = camera.view_matrix()
    depth_buf = np.full((height, width), np.inf, dtype=np.float64)
    ids = np.full((height, width), -1, dtype=np.int32)
    visible = set()

    occluding = [(k, n) for k, n in enumerate(nodes) if n.opacity >= 1.0 or n.occlusion_only]
    translucent = [(k, n) for k, n in enumerate(nodes) if not (n.opacity >= 1.0 or n.occlusion_only)]

    for k, n in occluding:
        xy, z, _tri = _project_triangles(model, n, camera, view, width, height)
        for t in range(xy.shape[0]):
            cov = _tri_coverage(xy[t], z[t], width, height)
            if cov is None:
                continue
            i0, i1, j0, j1, inside, d = cov
            window = depth_buf[i0 : i1 + 1, j0 : j1 + 1]
            mask = inside & (d < window)
            if not mask.any():
                continue
            window[mask] = d[mask]
            ids[i0 : i1 + 1, j0 : j1 + 1][mask] = k
    for k in np.unique(ids):
        if k >= 0:
            visible.add(nodes[k].node_id)

    for k, n in translucent:
        if n.node_id in visible:
            continue
        xy, z, _tri = _project_triangles(model, n, camera, view, width, height)
        found = False
        for t in range(xy.shape[0]):
            cov = _tri_coverage(xy[t], z[t], width, height)
            if cov is None:
                continue
            i0, i1, j0, j1, inside, d = cov
            window = depth_buf[i0 : i1 + 1, j0 : j1 + 1]
            if (inside & (d <= window)).any():
                found = True
                break
        if found:
            visible.add(n.node_id)
    return ids, visible


def depth_to_bytes(depth: np.ndarray) -> bytes:
    """Raw 32-bit little-endian float dump, row-major."""
    return np.ascontiguousarray(depth, dtype="<f4").tobytes()


# ------------------------------------------------------------ sprite sheets


def sheet_grid(viewpoint_count: int) -> tuple[int, int]:
    cols = math.ceil(math.sqrt(viewpoint_count))
    rows = math.ceil(viewpoint_count / cols)
    return cols, rows


def sprite_sheet(model: SceneModel, viewpoint_count: int = 24, tile: int = 256,
                 elevation_deg: float = 20.0, margin: float = 1.1,
                 vfov: float = math.radians(40.0)) -> np.ndarray:
    """Orbit the camera around the model in equal azimuth steps at fixed
    elevation and stitch the renders row-major into a near-square grid.
    Returns (rows*tile, cols*tile, 4) uint8; unused tiles stay transparent."""
    if viewpoint_count < 1:
        raise SceneError("viewpoint_count must be >= 1")
    bounds = compute_world_bounds(model, model.root)
    if bounds.is_empty:
        raise SceneError(f"model {model.model_id} has no renderable geometry")
    radius = bounds.diagonal / 2.0
    if radius == 0.0:
        raise SceneError(f"model {model.model_id} has degenerate bounds")
    center = bounds.center
    distance = margin * radius / math.sin(vfov / 2.0)
    near = max(1e-6, (distance - radius) * 0.5)
    far = distance + 4.0 * radius

    cols, rows = sheet_grid(viewpoint_count)
    sheet = np.zeros((rows * tile, cols * tile, 4), dtype=np.uint8)
    for k in range(viewpoint_count):
        azimuth = (360.0 * k) / viewpoint_count
        cam = orbit_camera(center, distance, azimuth, elevation_deg, vfov, near, far)
        image = rasterize(model, cam, tile, tile).color
        r, c = divmod(k, cols)
        sheet[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = image
    return sheet
