"""Software rasterizer, background compositing and 2D annotations.

Rasterization is vectorized over all (triangle, pixel) candidates of a frame
and resolved with a single sort, so the result does not depend on triangle
submission order: each pixel shows the fragment with the smallest view depth,
ties going to the lowest triangle index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import EmptyTexture
from .model import FaceMesh, MorphableModel
from .scene import Camera, Illumination, Pose, project_points, rotation_matrix, shade

# Bounds the (triangle, pixel) candidate arrays held at once.
_CHUNK_FRAGMENTS = 1 << 21
VISIBILITY_TOL = 1e-3


@dataclass(eq=False)
class Framebuffer:
    width: int
    height: int
    color: np.ndarray  # (H, W, 3) float64, shaded
    albedo: np.ndarray  # (H, W, 3) float64, interpolated vertex color
    depth: np.ndarray  # (H, W), +inf where uncovered
    coverage: np.ndarray  # (H, W) bool
    triangle_id: np.ndarray  # (H, W) int64, -1 where uncovered

    @classmethod
    def empty(cls, width: int, height: int) -> "Framebuffer":
        return cls(
            width,
            height,
            np.zeros((height, width, 3)),
            np.zeros((height, width, 3)),
            np.full((height, width), np.inf),
            np.zeros((height, width), dtype=bool),
            np.full((height, width), -1, dtype=np.int64),
        )

    def to_uint8(self) -> np.ndarray:
        return to_uint8(self.color)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by):
    # for positively wound triangles in y-down pixel space
    dy = by - ay
    dx = bx - ax
    return (dy < 0) | ((dy == 0) & (dx > 0))


def screen_triangles(uv: np.ndarray, triangles: np.ndarray):
    """Front-facing triangles re-ordered to positive signed area.

    Returns (kept triangle indices, (T', 3) vertex indices, areas). A triangle
    is front-facing when it appears counter-clockwise to the viewer, which is
    a negative signed area in y-down pixel coordinates.
    """
    a, b, c = uv[triangles[:, 0]], uv[triangles[:, 1]], uv[triangles[:, 2]]
    area = _edge(a[:, 0], a[:, 1], b[:, 0], b[:, 1], c[:, 0], c[:, 1])
    front = np.flatnonzero(area < 0)
    verts = triangles[front][:, [0, 2, 1]]
    return front, verts, -area[front]


def _fragments(uv, verts, areas, width, height):
    """Yield (local triangle index, px, py, barycentrics) for covered pixel centers."""
    pa, pb, pc = uv[verts[:, 0]], uv[verts[:, 1]], uv[verts[:, 2]]
    lo = np.minimum(np.minimum(pa, pb), pc)
    hi = np.maximum(np.maximum(pa, pb), pc)
    x0 = np.maximum(np.ceil(lo[:, 0]), 0).astype(np.int64)
    y0 = np.maximum(np.ceil(lo[:, 1]), 0).astype(np.int64)
    x1 = np.minimum(np.floor(hi[:, 0]), width - 1).astype(np.int64)
    y1 = np.minimum(np.floor(hi[:, 1]), height - 1).astype(np.int64)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    counts = nx * ny

    tl0 = _top_left(pb[:, 0], pb[:, 1], pc[:, 0], pc[:, 1])
    tl1 = _top_left(pc[:, 0], pc[:, 1], pa[:, 0], pa[:, 1])
    tl2 = _top_left(pa[:, 0], pa[:, 1], pb[:, 0], pb[:, 1])

    start = 0
    n = len(counts)
    while start < n:
        cum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(cum, _CHUNK_FRAGMENTS, side="right")))
        sel = np.arange(start, stop)
        cnt = counts[sel]
        total = int(cnt.sum())
        start = stop
        if total == 0:
            continue
        tid = np.repeat(sel, cnt)
        offsets = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        px = x0[tid] + offsets % nx[tid]
        py = y0[tid] + offsets // nx[tid]
        fx = px.astype(np.float64)
        fy = py.astype(np.float64)
        ax, ay = pa[tid, 0], pa[tid, 1]
        bx, by = pb[tid, 0], pb[tid, 1]
        cx, cy = pc[tid, 0], pc[tid, 1]
        w0 = _edge(bx, by, cx, cy, fx, fy)
        w1 = _edge(cx, cy, ax, ay, fx, fy)
        w2 = _edge(ax, ay, bx, by, fx, fy)
        inside = (
            ((w0 > 0) | ((w0 == 0) & tl0[tid]))
            & ((w1 > 0) | ((w1 == 0) & tl1[tid]))
            & ((w2 > 0) | ((w2 == 0) & tl2[tid]))
        )
        tid = tid[inside]
        bary = np.stack([w0[inside], w1[inside], w2[inside]], axis=1) / areas[tid, None]
        yield tid, px[inside], py[inside], bary


def rasterize(mesh: FaceMesh, pose: Pose, camera: Camera, illum: Illumination) -> Framebuffer:
    width, height = camera.image_width, camera.image_height
    fb = Framebuffer.empty(width, height)

    rot = rotation_matrix(pose)
    cam = mesh.positions @ rot.T + np.asarray(pose.translation, dtype=np.float64)
    normals = mesh.normals @ rot.T
    depth = -cam[:, 2]
    tris = np.asarray(mesh.triangles, dtype=np.int64)
    in_front = np.flatnonzero((depth[tris] > camera.near_plane).all(axis=1))
    if in_front.size == 0:
        return fb
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = project_points(camera, cam)
    front, verts, areas = screen_triangles(uv, tris[in_front])
    tri_index = in_front[front]

    parts = []
    for tid, px, py, bary in _fragments(uv, verts, areas, width, height):
        inv_depth = (bary / depth[verts[tid]]).sum(axis=1)
        parts.append((tid, py * width + px, 1.0 / inv_depth, bary))
    if not parts:
        return fb
    tid, pix, frag_depth, bary = (np.concatenate(p) for p in zip(*parts))

    order = np.lexsort((tri_index[tid], frag_depth, pix))
    pix_sorted = pix[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    tid, pix, zbuf, bary = tid[win], pix[win], frag_depth[win], bary[win]
    v = verts[tid]
    persp = bary / depth[v]
    persp /= persp.sum(axis=1, keepdims=True)
    albedo = np.einsum("fk,fkc->fc", persp, mesh.colors[v])
    nrm = np.einsum("fk,fkc->fc", persp, normals[v])
    length = np.linalg.norm(nrm, axis=1)
    nrm = np.where(length[:, None] > 0, nrm / np.where(length > 0, length, 1.0)[:, None], [0.0, 0.0, 1.0])

    ys, xs = np.divmod(pix, width)
    fb.albedo[ys, xs] = albedo
    fb.color[ys, xs] = shade(albedo, illum, nrm)
    fb.depth[ys, xs] = zbuf
    fb.coverage[ys, xs] = True
    fb.triangle_id[ys, xs] = tri_index[tid]
    return fb


# -- background --------------------------------------------------------------

def _as_rgb_array(texture) -> np.ndarray:
    if isinstance(texture, Image.Image):
        texture = np.asarray(texture.convert("RGB"))
    arr = np.asarray(texture)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.size == 0 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyTexture("background texture is empty")
    return arr.astype(np.uint8)


def cover_resize(texture, width: int, height: int) -> np.ndarray:
    """Scale ``texture`` so it covers a ``width`` x ``height`` frame."""
    arr = _as_rgb_array(texture)
    th, tw = arr.shape[:2]
    scale = max(width / tw, height / th)
    nw = max(width, int(math.ceil(tw * scale - 1e-9)))
    nh = max(height, int(math.ceil(th * scale - 1e-9)))
    if (nw, nh) == (tw, th):
        return arr
    return np.asarray(Image.fromarray(arr).resize((nw, nh), Image.BILINEAR))


def crop(resized: np.ndarray, width: int, height: int, offset=(0.5, 0.5)) -> np.ndarray:
    """Crop a frame out of a covering texture; ``offset`` in [0, 1]^2 spans the slack."""
    h, w = resized.shape[:2]
    ox = int(round(min(max(offset[0], 0.0), 1.0) * (w - width)))
    oy = int(round(min(max(offset[1], 0.0), 1.0) * (h - height)))
    return resized[oy : oy + height, ox : ox + width]


def fit_texture(texture, width: int, height: int, offset=(0.5, 0.5)) -> np.ndarray:
    return crop(cover_resize(texture, width, height), width, height, offset)


def composite_background(fb: Framebuffer, texture, offset=(0.5, 0.5)) -> np.ndarray:
    """Hard-mask composite of the face render over a scaled, cropped texture."""
    bg = fit_texture(texture, fb.width, fb.height, offset)
    out = bg.copy()
    out[fb.coverage] = fb.to_uint8()[fb.coverage]
    return out


# -- annotations -------------------------------------------------------------

def project_landmarks(
    model: MorphableModel,
    mesh: FaceMesh,
    pose: Pose,
    camera: Camera,
    framebuffer: Framebuffer | None = None,
):
    """Project every landmark and flag whether the rendered image shows it.

    A landmark is visible when it lies inside the frame beyond the near plane
    and the triangle the z-buffer kept at its pixel passes within
    ``VISIBILITY_TOL`` model units of it along the ray through its exact
    projection. Evaluating that triangle's plane at the subpixel position
    keeps sloped surfaces from failing the test between pixel centers.
    ``framebuffer`` must be the render of the same mesh, pose and camera; it
    is rasterized here when omitted.

    Returns ``(points (L, 2), visible (L,) bool)``.
    """
    rot = rotation_matrix(pose)
    cam = mesh.positions @ rot.T + np.asarray(pose.translation, dtype=np.float64)
    depth = -cam[:, 2]
    idx = np.asarray(model.landmark_indices, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = project_points(camera, cam)
    points = uv[idx]
    lm_depth = depth[idx]

    px = np.floor(points + 0.5)
    visible = (
        (lm_depth > camera.near_plane)
        & np.all(np.isfinite(points), axis=1)
        & (px[:, 0] >= 0)
        & (px[:, 0] < camera.image_width)
        & (px[:, 1] >= 0)
        & (px[:, 1] < camera.image_height)
    )
    if not visible.any():
        return points, visible
    if framebuffer is None:
        framebuffer = rasterize(mesh, pose, camera, Illumination.ambient())

    tris = np.asarray(mesh.triangles, dtype=np.int64)
    for i in np.flatnonzero(visible):
        tid = framebuffer.triangle_id[int(px[i, 1]), int(px[i, 0])]
        if tid < 0:
            visible[i] = False
            continue
        a, b, c = tris[tid]
        x, y = points[i]
        area = _edge(uv[a, 0], uv[a, 1], uv[b, 0], uv[b, 1], uv[c, 0], uv[c, 1])
        l0 = _edge(uv[b, 0], uv[b, 1], uv[c, 0], uv[c, 1], x, y) / area
        l1 = _edge(uv[c, 0], uv[c, 1], uv[a, 0], uv[a, 1], x, y) / area
        l2 = _edge(uv[a, 0], uv[a, 1], uv[b, 0], uv[b, 1], x, y) / area
        inv = l0 / depth[a] + l1 / depth[b] + l2 / depth[c]
        visible[i] = inv > 0 and abs(lm_depth[i] - 1.0 / inv) <= VISIBILITY_TOL
    return points, visible


def face_box(landmarks) -> tuple[float, float, float, float]:
    """Landmark bounding box grown by 5% of its diagonal on every side.

    A zero-diagonal box (single or coincident landmarks) is grown by half a
    pixel instead.
    """
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    diag = math.hypot(x1 - x0, y1 - y0)
    pad = 0.05 * diag if diag > 0 else 0.5
    return (float(x0 - pad), float(y0 - pad), float(x1 + pad), float(y1 + pad))


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
