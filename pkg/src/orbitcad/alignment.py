"""Fiducial-marker pose estimation.

A printed 2x2 grid of square tags provides up to 20 reference points (four
corners plus the center of each tag, all coplanar). Given pixel detections
of any subset, the solver recovers the marker-to-camera pose: a planar
homography (normalized DLT) seeds the estimate, damped least squares
refines it. Camera convention here is the usual computer-vision one:
+Z forward, points in front of the camera have positive z.

Tag detection itself (image to corner pixels) is out of scope; callers
supply correspondences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .transforms import Pose, quat_from_matrix, quat_to_matrix

PAGE_WIDTH = 0.2159  # meters, letter paper
PAGE_HEIGHT = 0.2794

ROLES = ("corner0", "corner1", "corner2", "corner3", "center")

LOW_CONFIDENCE_POINTS = 8  # fewer correspondences than this flags the solve


class AlignmentError(Exception):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Pinhole projection of (n, 3) camera-frame points to pixels."""
        z = points_cam[:, 2]
        return np.stack([self.fx * points_cam[:, 0] / z + self.cx,
                         self.fy * points_cam[:, 1] / z + self.cy], axis=1)


@dataclass(frozen=True)
class Correspondence:
    tag: int
    role: str
    point3d: tuple  # marker-local meters, z = 0
    point2d: tuple  # pixels


@dataclass(frozen=True)
class TagLayout:
    tag_size: float
    spacing: float
    points: dict  # (tag, role) -> (x, y, 0.0)

    def point(self, tag: int, role: str) -> tuple:
        key = (tag, role)
        if key not in self.points:
            raise AlignmentError(f"no layout point for tag {tag} role {role!r}")
        return self.points[key]

    def all_points(self) -> list:
        return [(t, r, self.points[(t, r)]) for t in range(4) for r in ROLES]


def build_tag_layout(tag_size: float, spacing: float) -> TagLayout:
    """2x2 tag grid centered on the origin, x right, y up, z out of the
    page. Tags number row-major from the top-left; corners wind
    counter-clockwise starting at each tag's top-left; centers come last.
    The grid must fit the printable page."""
    if tag_size <= 0 or spacing < 0:
        raise AlignmentError("tag_size must be positive and spacing non-negative")
    span = 2 * tag_size + spacing
    if span > PAGE_WIDTH or span > PAGE_HEIGHT:
        raise AlignmentError(
            f"grid span {span:.4f} m does not fit the {PAGE_WIDTH} x {PAGE_HEIGHT} m page")
    pitch = (tag_size + spacing) / 2.0
    half = tag_size / 2.0
    # counter-clockwise from top-left in a y-up frame
    corner_offsets = [(-half, half), (-half, -half), (half, -half), (half, half)]
    points = {}
    for tag in range(4):
        row, col = divmod(tag, 2)
        cx = -pitch if col == 0 else pitch
        cy = pitch if row == 0 else -pitch
        for k, (dx, dy) in enumerate(corner_offsets):
            points[(tag, f"corner{k}")] = (cx + dx, cy + dy, 0.0)
        points[(tag, "center")] = (cx, cy, 0.0)
    return TagLayout(tag_size=tag_size, spacing=spacing, points=points)


def correspondences_from_json(doc: list, layout: TagLayout) -> list:
    """Fixture format: [{"tag": int, "role": str, "u": px, "v": px}, ...]."""
    out = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise AlignmentError(f"entry {i} must be an object")
        tag = entry.get("tag")
        role = entry.get("role")
        if not isinstance(tag, int) or role not in ROLES:
            raise AlignmentError(f"entry {i}: need integer tag and role in {ROLES}")
        u, v = entry.get("u"), entry.get("v")
        if not isinstance(u, (int, float)) or not isinstance(v, (int, float)):
            raise AlignmentError(f"entry {i}: u/v must be numbers")
        out.append(Correspondence(tag=tag, role=role, point3d=layout.point(tag, role),
                                  point2d=(float(u), float(v))))
    return out


# ---------------------------------------------------------------- solver


def _normalize_2d(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    ones = np.ones((pts.shape[0], 1))
    return (np.hstack([pts, ones]) @ t.T)[:, :2], t


def _homography(plane_xy: np.ndarray, image_xy: np.ndarray) -> np.ndarray:
    src, t_src = _normalize_2d(plane_xy)
    dst, t_dst = _normalize_2d(image_xy)
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = -src[:, 0]
    a[0::2, 1] = -src[:, 1]
    a[0::2, 2] = -1.0
    a[0::2, 6] = dst[:, 0] * src[:, 0]
    a[0::2, 7] = dst[:, 0] * src[:, 1]
    a[0::2, 8] = dst[:, 0]
    a[1::2, 3] = -src[:, 0]
    a[1::2, 4] = -src[:, 1]
    a[1::2, 5] = -1.0
    a[1::2, 6] = dst[:, 1] * src[:, 0]
    a[1::2, 7] = dst[:, 1] * src[:, 1]
    a[1::2, 8] = dst[:, 1]
    _u, _s, vt = np.linalg.svd(a)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h @ t_src
    return h / h[2, 2]


def _pose_from_homography(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose a metric homography (intrinsics already removed) into R, t
    for the z=0 plane."""
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1 = lam * h1
    r2 = lam * h2
    t = lam * h3
    if t[2] < 0:  # plane must sit in front of the camera
        r1, r2, t = -r1, -r2, -t
    r3 = np.cross(r1, r2)
    approx = np.stack([r1, r2, r3], axis=1)
    u, _s, vt = np.linalg.svd(approx)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r, t


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _exp_so3(w: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        return np.eye(3) + _skew(w)
    axis = w / angle
    k = _skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _residuals(r: np.ndarray, t: np.ndarray, pts3: np.ndarray, obs: np.ndarray,
               intr: CameraIntrinsics) -> np.ndarray:
    cam = pts3 @ r.T + t
    return (intr.project(cam) - obs).reshape(-1)


def solve_pnp(correspondences: list, intrinsics: CameraIntrinsics,
              max_iterations: int = 100) -> tuple[Pose, float]:
    """Marker-to-camera pose from 2D-3D correspondences on the tag plane.

    Homography decomposition seeds a damped least-squares refinement
    (initial lambda 1e-3, x0.3 on success, x10 on failure, stop when the
    cost decrease falls below 1e-12). Returns the pose and the rms
    reprojection error in pixels. Deterministic for fixed inputs."""
    if len(correspondences) < 4:
        raise AlignmentError(f"need at least 4 correspondences, got {len(correspondences)}")
    pts3 = np.array([c.point3d for c in correspondences], dtype=np.float64)
    obs = np.array([c.point2d for c in correspondences], dtype=np.float64)
    if not (np.all(np.isfinite(pts3)) and np.all(np.isfinite(obs))):
        raise AlignmentError("correspondences contain non-finite values")

    centered = pts3 - pts3.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise AlignmentError("degenerate configuration: layout points are collinear")
    if np.any(np.abs(pts3[:, 2]) > 1e-12):
        raise AlignmentError("layout points must lie on the z=0 plane")

    norm_xy = np.stack([(obs[:, 0] - intrinsics.cx) / intrinsics.fx,
                        (obs[:, 1] - intrinsics.cy) / intrinsics.fy], axis=1)
    h = _homography(pts3[:, :2], norm_xy)
    r, t = _pose_from_homography(h)

    lam = 1e-3
    res = _residuals(r, t, pts3, obs, intrinsics)
    cost = float(res @ res)
    n = pts3.shape[0]
    for _ in range(max_iterations):
        cam = pts3 @ r.T + t
        z = cam[:, 2]
        if np.any(z <= 0):
            raise AlignmentError(
                f"solver diverged: points behind camera, rms {math.sqrt(cost / n):.3g} px")
        jac = np.zeros((2 * n, 6))
        du = np.stack([intrinsics.fx / z, np.zeros_like(z),
                       -intrinsics.fx * cam[:, 0] / z**2], axis=1)
        dv = np.stack([np.zeros_like(z), intrinsics.fy / z,
                       -intrinsics.fy * cam[:, 1] / z**2], axis=1)
        for i in range(n):
            dcam_dw = -_skew(cam[i] - t)  # perturbing rotation moves R p
            jac[2 * i, :3] = du[i] @ dcam_dw
            jac[2 * i, 3:] = du[i]
            jac[2 * i + 1, :3] = dv[i] @ dcam_dw
            jac[2 * i + 1, 3:] = dv[i]
        jtj = jac.T @ jac
        jtr = jac.T @ res
        improved = False
        while lam < 1e12:
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = _exp_so3(delta[:3]) @ r
            t_new = t + delta[3:]
            res_new = _residuals(r_new, t_new, pts3, obs, intrinsics)
            cost_new = float(res_new @ res_new)
            if cost_new < cost:
                improvement = cost - cost_new
                r, t, res, cost = r_new, t_new, res_new, cost_new
                lam *= 0.3
                improved = improvement >= 1e-12
                break
            lam *= 10.0
        if not improved:
            break

    if not math.isfinite(cost):
        raise AlignmentError("solver diverged: non-finite cost")
    rms = math.sqrt(cost / n)
    return Pose(rotation=quat_from_matrix(r), translation=t), rms


def occlusion_robust_solve(correspondences: list, intrinsics: CameraIntrinsics
                           ) -> tuple[Pose, float, bool]:
    """Solve on whatever subset of layout points survived occlusion.
    Returns (pose, rms px, low_confidence); low confidence means fewer
    than 8 points backed the solve."""
    pose, rms = solve_pnp(correspondences, intrinsics)
    return pose, rms, len(correspondences) < LOW_CONFIDENCE_POINTS


def reprojection_rms(pose: Pose, correspondences: list, intrinsics: CameraIntrinsics) -> float:
    pts3 = np.array([c.point3d for c in correspondences], dtype=np.float64)
    obs = np.array([c.point2d for c in correspondences], dtype=np.float64)
    r = quat_to_matrix(pose.rotation)
    res = _residuals(r, pose.translation, pts3, obs, intrinsics)
    return math.sqrt(float(res @ res) / pts3.shape[0])


def marker_to_session_transform(physical: Pose, virtual_placement: Pose) -> Pose:
    """Whole-model transform T aligning the session's virtual marker with
    the physically tracked one: T composed with the virtual placement equals
    the physical pose, so T = physical o virtual^-1."""
    return physical.compose(virtual_placement.inverse())


# ------------------------------------------------------------------- SVG


def layout_svg(layout: TagLayout) -> str:
    """Printable page with the four tag outlines and their reference
    points; millimeter units, y flipped to screen-down."""
    w_mm = PAGE_WIDTH * 1000.0
    h_mm = PAGE_HEIGHT * 1000.0

    def sx(x: float) -> float:
        return w_mm / 2.0 + x * 1000.0

    def sy(y: float) -> float:
        return h_mm / 2.0 - y * 1000.0

    half = layout.tag_size / 2.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_mm:.3f}mm" height="{h_mm:.3f}mm" '
        f'viewBox="0 0 {w_mm:.3f} {h_mm:.3f}">',
        f'<rect x="0" y="0" width="{w_mm:.3f}" height="{h_mm:.3f}" fill="white" stroke="black" stroke-width="0.35"/>',
    ]
    for tag in range(4):
        cx, cy, _ = layout.point(tag, "center")
        parts.append(
            f'<rect x="{sx(cx - half):.3f}" y="{sy(cy + half):.3f}" '
            f'width="{layout.tag_size * 1000.0:.3f}" height="{layout.tag_size * 1000.0:.3f}" '
            f'fill="none" stroke="black" stroke-width="0.7"/>')
        parts.append(
            f'<text x="{sx(cx):.3f}" y="{sy(cy) - 2.0:.3f}" font-size="6" '
            f'text-anchor="middle" font-family="monospace">{tag}</text>')
        for role in ROLES:
            px, py, _ = layout.point(tag, role)
            parts.append(f'<circle cx="{sx(px):.3f}" cy="{sy(py):.3f}" r="0.9" fill="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
