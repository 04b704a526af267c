"""Pose, pinhole camera, spherical-harmonics shading and the illumination prior.

Conventions: right-handed camera frame with +x to the viewer's right, +y up
and +z towards the camera, so visible points have negative z. Pixel ``(i, j)``
has its center at integer coordinates ``(i, j)``; image rows grow downwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadParameter,
    BadRecord,
    BehindCamera,
    DegenerateMesh,
    EmptyPrior,
    MissingFile,
    NotUnit,
)

# Real SH constants for bands 0-2.
SH_C0 = 0.282095
SH_C1 = 0.488603
SH_C2 = 1.092548
SH_C3 = 0.315392
SH_C4 = 0.546274
# Clamped-cosine convolution factors per band.
BAND_FACTORS = np.array([math.pi] + [2 * math.pi / 3] * 3 + [math.pi / 4] * 5)


@dataclass(frozen=True)
class Pose:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def from_degrees(cls, yaw=0.0, pitch=0.0, roll=0.0, translation=(0.0, 0.0, 0.0)):
        return cls(math.radians(yaw), math.radians(pitch), math.radians(roll), tuple(translation))

    def degrees(self) -> tuple[float, float, float]:
        return math.degrees(self.yaw), math.degrees(self.pitch), math.degrees(self.roll)

    def with_translation(self, t) -> "Pose":
        return Pose(self.yaw, self.pitch, self.roll, tuple(float(x) for x in t))


@dataclass(frozen=True)
class PoseRanges:
    """Closed sampling intervals in degrees."""

    yaw: tuple[float, float] = (-90.0, 90.0)
    pitch: tuple[float, float] = (-30.0, 30.0)
    roll: tuple[float, float] = (-15.0, 15.0)

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            lo, hi = (float(x) for x in getattr(self, name))
            object.__setattr__(self, name, (lo, hi))
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise BadParameter(f"{name} range [{lo}, {hi}] is invalid")

    def to_dict(self) -> dict:
        return {"yaw": list(self.yaw), "pitch": list(self.pitch), "roll": list(self.roll)}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseRanges":
        return cls(**{k: tuple(float(x) for x in v) for k, v in d.items()})


@dataclass(frozen=True)
class Camera:
    focal_length: float
    principal_point: tuple[float, float]
    image_width: int
    image_height: int
    near_plane: float = 0.1

    def __post_init__(self):
        if not self.focal_length > 0:
            raise BadParameter("focal_length must be positive")
        if not self.near_plane > 0:
            raise BadParameter("near_plane must be positive")
        if self.image_width < 1 or self.image_height < 1:
            raise BadParameter("image size must be positive")

    @classmethod
    def default(cls, width: int = 128, height: int = 128, fov_deg: float = 30.0) -> "Camera":
        """Camera with the given horizontal field of view, centered principal point."""
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(f, ((width - 1) / 2, (height - 1) / 2), width, height)


@dataclass(frozen=True, eq=False)
class Illumination:
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((3, 9)))

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.size != 27 or not np.all(np.isfinite(c)):
            raise BadParameter("illumination needs exactly 27 finite coefficients")
        object.__setattr__(self, "coeffs", c.reshape(3, 9))

    @classmethod
    def ambient(cls, level=1.0) -> "Illumination":
        """DC-only light that reproduces ``level`` times the albedo for any normal."""
        c = np.zeros((3, 9))
        c[:, 0] = level / SH_C0
        return cls(c)

    def to_list(self) -> list[float]:
        return [float(x) for x in self.coeffs.reshape(-1)]


@dataclass(frozen=True)
class IlluminationPrior:
    samples: tuple

    def __post_init__(self):
        if len(self.samples) == 0:
            raise EmptyPrior("illumination prior has no samples")


# -- geometry ----------------------------------------------------------------

def rotation_matrix(pose: Pose) -> np.ndarray:
    """R = Rz(roll) @ Rx(pitch) @ Ry(yaw)."""
    cy, sy = math.cos(pose.yaw), math.sin(pose.yaw)
    cp, sp = math.cos(pose.pitch), math.sin(pose.pitch)
    cr, sr = math.cos(pose.roll), math.sin(pose.roll)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def project_points(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Vectorized projection without the near-plane check."""
    p = np.asarray(points, dtype=np.float64)
    depth = -p[..., 2]
    u = camera.focal_length * (p[..., 0] / depth) + camera.principal_point[0]
    v = camera.principal_point[1] - camera.focal_length * (p[..., 1] / depth)
    return np.stack([u, v], axis=-1)


def project_point(camera: Camera, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not p[2] < -camera.near_plane:
        raise BehindCamera(f"point at z={p[2]} is not beyond the near plane")
    return project_points(camera, p)


def sample_pose(ranges: PoseRanges, rng: np.random.Generator) -> Pose:
    # rng.uniform is half-open; a closed interval differs only on a null set
    yaw = rng.uniform(*ranges.yaw)
    pitch = rng.uniform(*ranges.pitch)
    roll = rng.uniform(*ranges.roll)
    return Pose.from_degrees(yaw, pitch, roll)


def bounding_sphere(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Center of the axis-aligned box and the max distance to it."""
    center = 0.5 * (points.min(axis=0) + points.max(axis=0))
    radius = float(np.linalg.norm(points - center, axis=1).max())
    return center, radius


def auto_frame(positions: np.ndarray, rotation: np.ndarray, camera: Camera, fill: float = 0.7):
    """Translation that centers the rotated mesh and sizes its bounding sphere.

    The exact silhouette of a sphere of radius r at distance D has pixel
    radius ``f * r / sqrt(D^2 - r^2)``; D is solved so that its diameter is
    ``fill * min(width, height)``.
    """
    if not 0 < fill <= 1:
        raise BadParameter(f"fill must lie in (0, 1], got {fill}")
    positions = getattr(positions, "positions", positions)
    rotated = np.asarray(positions, dtype=np.float64) @ rotation.T
    center, radius = bounding_sphere(rotated)
    if not radius > 0:
        raise DegenerateMesh("mesh has a zero-radius bounding sphere")
    rho = 0.5 * fill * min(camera.image_width, camera.image_height)
    dist = radius * math.sqrt(1.0 + (camera.focal_length / rho) ** 2)
    dist = max(dist, radius + 2 * camera.near_plane)
    # (0, 0, -dist) projects exactly onto the principal point
    return np.array([0.0, 0.0, -dist]) - center


# -- shading -----------------------------------------------------------------

def _sh_basis(n: np.ndarray) -> np.ndarray:
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack(
        [
            np.full_like(x, SH_C0),
            SH_C1 * y,
            SH_C1 * z,
            SH_C1 * x,
            SH_C2 * x * y,
            SH_C2 * y * z,
            SH_C3 * (3 * z * z - 1),
            SH_C2 * x * z,
            SH_C4 * (x * x - y * y),
        ],
        axis=-1,
    )


def sh_basis(n) -> np.ndarray:
    """Nine real SH basis values at unit direction(s) ``n``."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > 1e-6):
        raise NotUnit("sh_basis requires unit-length directions")
    return _sh_basis(n)


def irradiance(illum: Illumination, normals: np.ndarray) -> np.ndarray:
    """Per-channel irradiance E_c(n), shape (..., 3)."""
    weighted = illum.coeffs * BAND_FACTORS[None, :]
    return _sh_basis(np.asarray(normals, dtype=np.float64)) @ weighted.T


def shade(albedo, illum: Illumination, normals) -> np.ndarray:
    """Lambertian shading: clamp01(albedo * E(n) / pi). Broadcasts over leading axes."""
    e = irradiance(illum, normals)
    return np.clip(np.asarray(albedo, dtype=np.float64) * e / math.pi, 0.0, 1.0)


# -- illumination prior ------------------------------------------------------

def load_illumination_prior(path) -> IlluminationPrior:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"illumination prior not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRecord(f"{path}: not valid JSON: {exc}") from exc
    rows = doc.get("samples") if isinstance(doc, dict) else None
    if rows is None:
        raise BadRecord(f"{path}: missing 'samples' list")
    if not rows:
        raise EmptyPrior(f"{path}: no samples")
    samples = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 27:
            n = len(row) if isinstance(row, list) else "non-list"
            raise BadRecord(f"sample {i} has {n} numbers, expected 27")
        try:
            samples.append(Illumination(np.asarray(row, dtype=np.float64)))
        except (TypeError, ValueError) as exc:
            raise BadRecord(f"sample {i}: {exc}") from exc
    return IlluminationPrior(tuple(samples))


def save_illumination_prior(prior: IlluminationPrior, path) -> None:
    doc = {"samples": [s.to_list() for s in prior.samples]}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def sample_illumination(prior: IlluminationPrior, rng: np.random.Generator) -> Illumination:
    return prior.samples[int(rng.integers(len(prior.samples)))]


def directional_light(direction, ambient: float, strength: float, tint=(1.0, 1.0, 1.0)):
    """SH coefficients of an ambient term plus one distant light.

    Projecting a delta light onto the basis gives coefficients ``Y_k(d)``; the
    resulting shading is approximately ``ambient + strength * max(0, n.d)``.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    base = _sh_basis(d) * (strength * math.pi)
    coeffs = np.outer(np.asarray(tint, dtype=np.float64), base)
    coeffs[:, 0] += ambient / SH_C0
    return Illumination(coeffs)


def make_toy_prior(n: int = 32, seed: int = 0) -> IlluminationPrior:
    """Fabricated prior of ambient + frontal-hemisphere directional lights."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        d = rng.normal(size=3)
        d[2] = abs(d[2]) + 0.5
        ambient = rng.uniform(0.3, 0.7)
        strength = rng.uniform(0.2, 0.6)
        tint = rng.uniform(0.85, 1.0, 3)
        samples.append(directional_light(d, ambient, strength, tint))
    return IlluminationPrior(tuple(samples))
