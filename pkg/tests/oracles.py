"""Independent reference computations used to check the fast paths."""

import numpy as np


def raycast_triangle_ids(tris_cam, camera):
    """Nearest front-facing triangle per pixel by 3D ray/triangle intersection.

    ``tris_cam`` is a list of (3, 3) vertex arrays in camera space. Returns an
    (H, W) int array of triangle indices, -1 where no triangle is hit; equal
    depths resolve to the lower index.
    """
    W, H = camera.image_width, camera.image_height
    f = camera.focal_length
    cx, cy = camera.principal_point
    jj, ii = np.mgrid[0:H, 0:W]
    d = np.stack([(ii - cx) / f, -(jj - cy) / f, -np.ones_like(ii, dtype=float)], axis=-1)
    best = np.full((H, W), np.inf)
    ids = np.full((H, W), -1)
    for k, tri in enumerate(tris_cam):
        v0, v1, v2 = (np.asarray(v, float) for v in tri)
        if np.any(-np.array([v0[2], v1[2], v2[2]]) <= camera.near_plane):
            continue
        n = np.cross(v1 - v0, v2 - v0)
        if not n @ (-v0) > 0:  # back-facing or edge-on
            continue
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (v0 @ n) / denom
        p = d * t[..., None]
        # inside test by sub-triangle orientation against the face normal
        inside = np.ones((H, W), bool)
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            inside &= (np.cross(b - a, p - a) @ n) >= 0
        depth = -p[..., 2]
        hit = inside & (t > 0) & (depth < best)
        best[hit] = depth[hit]
        ids[hit] = k
    return ids


def brute_force_roc(scores, same):
    """All (FAR, TAR) points over every distinct threshold, accept >= threshold."""
    scores = [float(s) for s in scores]
    same = [bool(x) for x in same]
    n_pos = sum(same)
    n_neg = len(same) - n_pos
    points = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, same) if y and s >= t)
        fp = sum(1 for s, y in zip(scores, same) if not y and s >= t)
        points.append((t, fp / n_neg, tp / n_pos))
    return points
