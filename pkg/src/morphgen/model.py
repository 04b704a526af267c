"""Statistical 3D morphable face model: storage, sampling and mesh synthesis.

A model holds three linear PCA blocks over ``V`` vertices:

    positions = mean_shape + shape_basis @ (shape * shape_sigma)
                           + expr_basis  @ (expr  * expr_sigma)
    colors    = clamp01(mean_color + color_basis @ (color * color_sigma))

Coefficients are kept in standard-deviation units, so sampling a face is a
draw from a standard normal. Vectors of length ``3V`` are laid out vertex-major
(x0, y0, z0, x1, ...).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadParameter,
    DimensionMismatch,
    InvariantViolation,
    IoFailure,
    MissingFile,
)

MAGIC = b"MFM1"
NORM_TOL = 1e-4
TOY_LANDMARKS = 21
TOY_SMOOTHING = 0.4


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean_shape: np.ndarray  # (3V,) float32
    shape_basis: np.ndarray  # (3V, Ks) float32
    shape_sigma: np.ndarray  # (Ks,) float32
    mean_color: np.ndarray  # (3V,) float32
    color_basis: np.ndarray  # (3V, Kc) float32
    color_sigma: np.ndarray  # (Kc,) float32
    expr_basis: np.ndarray  # (3V, Ke) float32
    expr_sigma: np.ndarray  # (Ke,) float32
    triangles: np.ndarray  # (T, 3) uint32
    landmark_indices: np.ndarray  # (L,) uint32

    @property
    def vertex_count(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[1]

    @property
    def n_color(self) -> int:
        return self.color_basis.shape[1]

    @property
    def n_expr(self) -> int:
        return self.expr_basis.shape[1]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_indices.shape[0]

    def header(self) -> dict:
        return {
            "V": self.vertex_count,
            "T": self.triangle_count,
            "Ks": self.n_shape,
            "Kc": self.n_color,
            "Ke": self.n_expr,
            "L": self.n_landmarks,
        }

    def validate(self) -> None:
        """Raise if any structural or statistical invariant is broken."""
        V3 = self.mean_shape.shape[0]
        if V3 % 3 or V3 == 0:
            raise DimensionMismatch(f"mean_shape length {V3} is not a positive multiple of 3")
        for name, basis, sigma in (
            ("shape", self.shape_basis, self.shape_sigma),
            ("color", self.color_basis, self.color_sigma),
            ("expr", self.expr_basis, self.expr_sigma),
        ):
            if basis.ndim != 2 or basis.shape[0] != V3:
                raise DimensionMismatch(f"{name}_basis has shape {basis.shape}, expected ({V3}, K)")
            if sigma.shape != (basis.shape[1],):
                raise DimensionMismatch(f"{name}_sigma has shape {sigma.shape}")
            norms = np.linalg.norm(basis.astype(np.float64), axis=0)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise InvariantViolation(
                    f"{name}_basis column {bad[0]} has norm {norms[bad[0]]:.6g}"
                )
            if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
                raise InvariantViolation(f"{name}_sigma must be positive")
        if self.mean_color.shape != (V3,):
            raise DimensionMismatch("mean_color length differs from mean_shape")
        if np.any(self.mean_color < 0) or np.any(self.mean_color > 1):
            raise InvariantViolation("mean_color outside [0, 1]")
        V = V3 // 3
        tri = self.triangles
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise DimensionMismatch(f"triangles has shape {tri.shape}")
        if tri.size and tri.max() >= V:
            raise InvariantViolation("triangle index out of range")
        if np.any((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])):
            raise InvariantViolation("degenerate triangle with repeated vertex index")
        lm = self.landmark_indices
        if lm.ndim != 1 or lm.size < 1:
            raise InvariantViolation("at least one landmark is required")
        if lm.max() >= V:
            raise InvariantViolation("landmark index out of range")


@dataclass(frozen=True)
class IdentityCoefficients:
    shape: np.ndarray
    color: np.ndarray


@dataclass(frozen=True)
class ExpressionCoefficients:
    expr: np.ndarray


@dataclass(frozen=True, eq=False)
class FaceMesh:
    positions: np.ndarray  # (V, 3) float64
    colors: np.ndarray  # (V, 3) float64 in [0, 1]
    normals: np.ndarray  # (V, 3) float64, unit length
    triangles: np.ndarray  # (T, 3)


# -- file format -------------------------------------------------------------

_FLOAT_FIELDS = (
    "mean_shape",
    "shape_basis",
    "shape_sigma",
    "mean_color",
    "color_basis",
    "color_sigma",
    "expr_basis",
    "expr_sigma",
)


def save_model(model: MorphableModel, path) -> None:
    """Write ``model`` in the MFM1 binary format.

    Bases are stored column-major, i.e. each principal component is one
    contiguous run of ``3V`` floats.
    """
    header = json.dumps(model.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(header)), header]
    for name in _FLOAT_FIELDS:
        arr = np.asarray(getattr(model, name), dtype="<f4")
        if arr.ndim == 2:
            arr = arr.T  # column-major
        chunks.append(np.ascontiguousarray(arr).tobytes())
    chunks.append(np.ascontiguousarray(model.triangles, dtype="<u4").tobytes())
    chunks.append(np.ascontiguousarray(model.landmark_indices, dtype="<u4").tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoFailure(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> MorphableModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"model file not found: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < 8:
        raise DimensionMismatch(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        V, T, Ks, Kc, Ke, L = (int(header[k]) for k in ("V", "T", "Ks", "Kc", "Ke", "L"))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise DimensionMismatch(f"{path}: unreadable header: {exc}") from exc
    if min(V, T, Ks, Kc, Ke, L) < 0:
        raise DimensionMismatch(f"{path}: negative count in header")

    shapes = {
        "mean_shape": (3 * V,),
        "shape_basis": (Ks, 3 * V),
        "shape_sigma": (Ks,),
        "mean_color": (3 * V,),
        "color_basis": (Kc, 3 * V),
        "color_sigma": (Kc,),
        "expr_basis": (Ke, 3 * V),
        "expr_sigma": (Ke,),
    }
    n_float = sum(int(np.prod(s)) for s in shapes.values())
    expected = 4 * n_float + 4 * (3 * T + L)
    payload = memoryview(data)[8 + hlen :]
    if len(payload) != expected:
        raise DimensionMismatch(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )

    arrays = {}
    offset = 0
    for name in _FLOAT_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        if arr.ndim == 2:
            arr = arr.T
        arrays[name] = np.ascontiguousarray(arr, dtype=np.float32)
    tri = np.frombuffer(payload, dtype="<u4", count=3 * T, offset=offset).reshape(T, 3)
    offset += 12 * T
    lm = np.frombuffer(payload, dtype="<u4", count=L, offset=offset)
    model = MorphableModel(
        triangles=tri.astype(np.uint32),
        landmark_indices=lm.astype(np.uint32),
        **arrays,
    )
    model.validate()
    return model


# -- toy model ---------------------------------------------------------------

def uv_sphere(rings: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit UV sphere with poles on the z axis, outward CCW winding.

    Vertex 0 is the +z pole, the last vertex the -z pole; ``rings - 1``
    latitude rings of ``rings`` vertices lie between them, giving
    ``2 * rings * (rings - 1)`` triangles.
    """
    n = rings
    theta = np.pi * np.arange(1, n) / n
    phi = 2 * np.pi * np.arange(n) / n
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    ring_pts = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(ct, (n - 1, n))],
        axis=-1,
    ).reshape(-1, 3)
    positions = np.vstack([[0.0, 0.0, 1.0], ring_pts, [0.0, 0.0, -1.0]])
    south = positions.shape[0] - 1

    def ring(i, j):
        return 1 + i * n + (j % n)

    tris = []
    for j in range(n):
        tris.append((0, ring(0, j), ring(0, j + 1)))
    for i in range(n - 2):
        for j in range(n):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    for j in range(n):
        tris.append((south, ring(n - 2, j + 1), ring(n - 2, j)))
    return positions, np.asarray(tris, dtype=np.uint32)


def farthest_point_indices(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point selection; ties go to the lowest index."""
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.asarray(chosen, dtype=np.uint32)


def _orthonormal_columns(
    rng: np.random.Generator, smoother: np.ndarray, cols: int
) -> np.ndarray:
    V = smoother.shape[0]
    noise = rng.standard_normal((V, 3 * cols))
    fields = (smoother @ noise).reshape(V, 3, cols).reshape(3 * V, cols)
    q, r = np.linalg.qr(fields)
    q = q * np.sign(np.diag(r))[None, :]
    q32 = q.astype(np.float32)
    return (q32 / np.linalg.norm(q32.astype(np.float64), axis=0)).astype(np.float32)


def make_toy_model(v_rings: int, Ks: int, Kc: int, Ke: int, seed: int = 0) -> MorphableModel:
    """Fabricate a small, deterministic, face-shaped model for testing.

    The mean shape is a flattened ellipsoid (radii 1.0, 1.3, 0.8) with a nose
    bump on the +z pole; bases are spatially smoothed random fields with
    orthonormal columns and sigmas are log-uniform in [0.5, 5].
    """
    if v_rings < 4:
        raise BadParameter(f"v_rings (--rings) must be >= 4, got {v_rings}")
    for name, k in (("Ks", Ks), ("Kc", Kc), ("Ke", Ke)):
        if k < 1:
            raise BadParameter(f"{name} must be >= 1, got {k}")
    sphere, triangles = uv_sphere(v_rings)
    V = sphere.shape[0]
    if max(Ks, Kc, Ke) > 3 * V:
        raise BadParameter(f"at most {3 * V} components fit a {V}-vertex mesh")

    shape = sphere * np.array([1.0, 1.3, 0.8])
    shape[0, 2] += 0.3
    shape[1 : 1 + v_rings, 2] += 0.1

    # low-pass the random fields over the surface so samples deform smoothly
    d2 = ((sphere[:, None, :] - sphere[None, :, :]) ** 2).sum(-1)
    smoother = np.exp(-d2 / (2 * TOY_SMOOTHING**2))

    rng = np.random.default_rng(seed)
    shape_basis = _orthonormal_columns(rng, smoother, Ks)
    color_basis = _orthonormal_columns(rng, smoother, Kc)
    expr_basis = _orthonormal_columns(rng, smoother, Ke)
    lo, hi = np.log(0.5), np.log(5.0)
    shape_sigma = np.exp(rng.uniform(lo, hi, Ks))
    color_sigma = np.exp(rng.uniform(lo, hi, Kc))
    expr_sigma = np.exp(rng.uniform(lo, hi, Ke))
    skin = np.array([0.78, 0.57, 0.47])
    mean_color = np.clip(skin[None, :] + rng.uniform(-0.05, 0.05, (V, 3)), 0.0, 1.0)

    mean_shape = shape.astype(np.float32)
    landmarks = farthest_point_indices(
        mean_shape.astype(np.float64), min(TOY_LANDMARKS, V), start=0
    )
    model = MorphableModel(
        mean_shape=mean_shape.reshape(-1),
        shape_basis=shape_basis,
        shape_sigma=shape_sigma.astype(np.float32),
        mean_color=mean_color.astype(np.float32).reshape(-1),
        color_basis=color_basis,
        color_sigma=color_sigma.astype(np.float32),
        expr_basis=expr_basis,
        expr_sigma=expr_sigma.astype(np.float32),
        triangles=triangles,
        landmark_indices=landmarks,
    )
    model.validate()
    return model


# -- sampling and synthesis --------------------------------------------------

def sample_identity(model: MorphableModel, rng: np.random.Generator) -> IdentityCoefficients:
    shape = rng.standard_normal(model.n_shape)
    color = rng.standard_normal(model.n_color)
    return IdentityCoefficients(shape=shape, color=color)


def sample_expression(model: MorphableModel, rng: np.random.Generator) -> ExpressionCoefficients:
    return ExpressionCoefficients(expr=rng.standard_normal(model.n_expr))


def zero_identity(model: MorphableModel) -> IdentityCoefficients:
    return IdentityCoefficients(np.zeros(model.n_shape), np.zeros(model.n_color))


def zero_expression(model: MorphableModel) -> ExpressionCoefficients:
    return ExpressionCoefficients(np.zeros(model.n_expr))


def _check_len(name, vec, n):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (n,):
        raise DimensionMismatch(f"{name} coefficients have shape {vec.shape}, model expects ({n},)")
    return vec


def synthesize_instance(
    model: MorphableModel, ident: IdentityCoefficients, expr: ExpressionCoefficients
) -> FaceMesh:
    shape = _check_len("shape", ident.shape, model.n_shape)
    color = _check_len("color", ident.color, model.n_color)
    ex = _check_len("expression", expr.expr, model.n_expr)

    pos = model.mean_shape.astype(np.float64)
    pos = pos + model.shape_basis.astype(np.float64) @ (shape * model.shape_sigma)
    pos = pos + model.expr_basis.astype(np.float64) @ (ex * model.expr_sigma)
    col = model.mean_color.astype(np.float64) + model.color_basis.astype(np.float64) @ (
        color * model.color_sigma
    )
    positions = pos.reshape(-1, 3)
    triangles = model.triangles
    return FaceMesh(
        positions=positions,
        colors=np.clip(col, 0.0, 1.0).reshape(-1, 3),
        normals=compute_vertex_normals(positions, triangles),
        triangles=triangles,
    )


def compute_vertex_normals(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; unreferenced or cancelling vertices get +z."""
    positions = np.asarray(positions, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    V = positions.shape[0]
    acc = np.zeros((V, 3))
    if tri.size:
        p0, p1, p2 = positions[tri[:, 0]], positions[tri[:, 1]], positions[tri[:, 2]]
        face = np.cross(p1 - p0, p2 - p0)  # length = 2 * area
        idx = tri.reshape(-1)
        rep = np.repeat(face, 3, axis=0)
        for k in range(3):
            acc[:, k] = np.bincount(idx, weights=rep[:, k], minlength=V)
    norm = np.linalg.norm(acc, axis=1)
    out = np.tile([0.0, 0.0, 1.0], (V, 1))
    ok = norm > 0
    out[ok] = acc[ok] / norm[ok, None]
    return out
