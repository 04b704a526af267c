"""Dataset specifications, bulk generation, manifests and 2D augmentation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadPairing, BadParameter, BadRecord, IoFailure, MissingFile
from .model import (
    MorphableModel,
    sample_expression,
    sample_identity,
    synthesize_instance,
    zero_expression,
)
from .render import (
    composite_background,
    cover_resize,
    crop,
    face_box,
    load_png,
    project_landmarks,
    rasterize,
    save_png,
)
from .scene import (
    Camera,
    IlluminationPrior,
    PoseRanges,
    auto_frame,
    load_illumination_prior,
    make_toy_prior,
    rotation_matrix,
    sample_illumination,
    sample_pose,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
FRONTAL_YAW = (-35.0, 35.0)
ROTATION_RANGE = (-30.0, 30.0)


@dataclass(frozen=True)
class DatasetSpec:
    num_identities: int
    samples_per_identity: int
    pose_ranges: PoseRanges = field(default_factory=PoseRanges)
    expression_enabled: bool = True
    illumination_prior_path: str | None = None
    background_dir: str | None = None
    seed: int = 0
    width: int = 128
    height: int = 128
    fill: float = 0.7

    def __post_init__(self):
        if self.num_identities < 1 or self.samples_per_identity < 1:
            raise BadParameter("num_identities and samples_per_identity must be >= 1")
        if self.seed < 0:
            raise BadParameter("seed must be non-negative")
        if not 0 < self.fill <= 1:
            raise BadParameter(f"fill must lie in (0, 1], got {self.fill}")
        if self.width < 1 or self.height < 1:
            raise BadParameter("frame size must be positive")

    @property
    def total(self) -> int:
        return self.num_identities * self.samples_per_identity

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pose_ranges"] = self.pose_ranges.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        if "pose_ranges" in d:
            d["pose_ranges"] = PoseRanges.from_dict(d["pose_ranges"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadParameter(f"unknown dataset spec keys: {sorted(unknown)}")
        return cls(**d)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


PRESETS = {
    "recognition-paper": dict(num_identities=20_000, samples_per_identity=100),
    "landmarks-paper": dict(num_identities=20_000, samples_per_identity=5),
    "recognition-desk": dict(num_identities=200, samples_per_identity=10),
    "landmarks-desk": dict(num_identities=400, samples_per_identity=5),
}


def preset_spec(name: str, **overrides) -> DatasetSpec:
    try:
        base = PRESETS[name]
    except KeyError:
        raise BadParameter(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return DatasetSpec(**{**base, **overrides})


def frontal_bias_spec(spec: DatasetSpec) -> DatasetSpec:
    """Same amount of data, yaw restricted to [-35, 35] degrees."""
    ranges = dataclasses.replace(spec.pose_ranges, yaw=FRONTAL_YAW)
    return dataclasses.replace(spec, pose_ranges=ranges)


def half_identity_spec(spec: DatasetSpec) -> DatasetSpec:
    """Half the identities, twice the samples each."""
    if spec.num_identities < 2:
        raise BadParameter("cannot halve fewer than 2 identities")
    if spec.num_identities % 2:
        log.warning(
            "odd identity count %d: halving changes the total image count", spec.num_identities
        )
    return dataclasses.replace(
        spec,
        num_identities=spec.num_identities // 2,
        samples_per_identity=spec.samples_per_identity * 2,
    )


# -- manifest ----------------------------------------------------------------

_REQUIRED = (
    "image_path",
    "identity_id",
    "sample_idx",
    "pose",
    "illumination",
    "landmarks",
    "visibility",
    "face_box",
    "background_id",
    "spec_hash",
)


@dataclass
class ManifestRecord:
    image_path: str
    identity_id: int
    sample_idx: int
    pose: dict  # yaw/pitch/roll in degrees, translation in model units
    illumination: list
    landmarks: list
    visibility: list
    face_box: list
    background_id: str
    spec_hash: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in _REQUIRED}
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        missing = [k for k in _REQUIRED if k not in d]
        if missing:
            raise KeyError(f"missing keys {missing}")
        extra = {k: v for k, v in d.items() if k not in _REQUIRED}
        return cls(**{k: d[k] for k in _REQUIRED}, extra=extra)


def write_manifest(records, path) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in records]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BadRecord(str(exc), line=lineno) from exc
    return records


# -- generation --------------------------------------------------------------

def derive_seed(*parts: int) -> int:
    """64-bit seed hashed from integer parts, independent of call order."""
    state = np.random.SeedSequence(list(parts)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def identity_seed(seed: int, identity_id: int) -> int:
    return derive_seed(seed, 0, identity_id)


def image_seed(seed: int, identity_id: int, sample_idx: int) -> int:
    return derive_seed(seed, 1, identity_id, sample_idx)


def list_backgrounds(background_dir) -> list[Path]:
    if background_dir is None:
        return []
    d = Path(background_dir)
    if not d.is_dir():
        raise MissingFile(f"background directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise BadParameter(f"no PNG backgrounds in {d}")
    return files


class _Worker:
    """Renders all samples of one identity; picklable for process pools."""

    def __init__(self, spec, model, prior, backgrounds, out_dir):
        self.spec = spec
        self.model = model
        self.prior = prior
        self.backgrounds = backgrounds
        self.out_dir = Path(out_dir)
        self.camera = Camera.default(spec.width, spec.height)
        self.spec_hash = spec.spec_hash()
        self._bg_cache = {}

    def _background(self, idx):
        if idx not in self._bg_cache:
            tex = load_png(self.backgrounds[idx])
            self._bg_cache[idx] = cover_resize(tex, self.spec.width, self.spec.height)
        return self._bg_cache[idx]

    def __call__(self, identity_id: int) -> list[ManifestRecord]:
        spec, model = self.spec, self.model
        id_seed = identity_seed(spec.seed, identity_id)
        ident = sample_identity(model, np.random.default_rng(id_seed))
        out = []
        for sample_idx in range(spec.samples_per_identity):
            img_seed = image_seed(spec.seed, identity_id, sample_idx)
            rng = np.random.default_rng(img_seed)
            expr = sample_expression(model, rng) if spec.expression_enabled else zero_expression(model)
            pose = sample_pose(spec.pose_ranges, rng)
            illum = sample_illumination(self.prior, rng)
            mesh = synthesize_instance(model, ident, expr)
            pose = pose.with_translation(
                auto_frame(mesh, rotation_matrix(pose), self.camera, spec.fill)
            )
            fb = rasterize(mesh, pose, self.camera, illum)
            if self.backgrounds:
                bg_idx = int(rng.integers(len(self.backgrounds)))
                offset = rng.random(2)
                texture = crop(self._background(bg_idx), spec.width, spec.height, offset)
                image = composite_background(fb, texture)
                background_id = self.backgrounds[bg_idx].name
            else:
                image = fb.to_uint8()
                background_id = ""
            points, visible = project_landmarks(model, mesh, pose, self.camera, fb)

            rel = f"images/{identity_id:06d}_{sample_idx:04d}.png"
            save_png(image, self.out_dir / rel)
            yaw, pitch, roll = pose.degrees()
            out.append(
                ManifestRecord(
                    image_path=rel,
                    identity_id=identity_id,
                    sample_idx=sample_idx,
                    pose={
                        "yaw": yaw,
                        "pitch": pitch,
                        "roll": roll,
                        "translation": list(pose.translation),
                    },
                    illumination=illum.to_list(),
                    landmarks=points.tolist(),
                    visibility=[bool(v) for v in visible],
                    face_box=list(face_box(points)),
                    background_id=background_id,
                    spec_hash=self.spec_hash,
                    extra={
                        "seed": spec.seed,
                        "identity_seed": id_seed,
                        "image_seed": img_seed,
                        "expression": expr.expr.tolist(),
                    },
                )
            )
        return out


def load_prior(spec: DatasetSpec) -> IlluminationPrior:
    if spec.illumination_prior_path is None:
        return make_toy_prior()
    return load_illumination_prior(spec.illumination_prior_path)


def generate_dataset(
    spec: DatasetSpec, model: MorphableModel, out_dir, jobs: int = 1
) -> list[ManifestRecord]:
    """Render ``N x M`` annotated images into ``out_dir`` and write the manifest.

    Every image draws from its own generator seeded by (seed, identity,
    sample), so ``jobs`` never changes any output byte.
    """
    prior = load_prior(spec)
    backgrounds = list_backgrounds(spec.background_dir)
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc

    worker = _Worker(spec, model, prior, backgrounds, out_dir)
    ids = range(spec.num_identities)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(worker, ids, chunksize=max(1, len(ids) // (4 * jobs))))
    else:
        chunks = [worker(i) for i in ids]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.identity_id, r.sample_idx))

    write_manifest(records, out_dir / MANIFEST_NAME)
    (out_dir / "spec.json").write_text(
        json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return records


# -- augmentation ------------------------------------------------------------

def _pair_permutation(flip_pairs, n: int) -> np.ndarray:
    pairs = np.asarray(flip_pairs, dtype=np.int64)
    if pairs.size == 0:
        return np.arange(n)
    if pairs.ndim == 1:
        perm = pairs
        if perm.shape != (n,) or np.any(perm < 0) or np.any(perm >= n):
            raise BadPairing("flip permutation must map each landmark index into range")
        if np.any(perm[perm] != np.arange(n)):
            raise BadPairing("flip permutation is not an involution")
        return perm
    perm = np.arange(n)
    seen = set()
    for i, j in pairs.reshape(-1, 2):
        if not (0 <= i < n and 0 <= j < n):
            raise BadPairing(f"pair ({i}, {j}) out of range for {n} landmarks")
        if i in seen or j in seen:
            raise BadPairing(f"landmark in pair ({i}, {j}) appears in more than one pair")
        seen.update((i, j))
        perm[i], perm[j] = j, i
    return perm


def augment_mirror(image, landmarks, flip_pairs):
    """Mirror across the vertical axis and swap left/right landmark labels."""
    image = np.asarray(image)
    pts = np.asarray(landmarks, dtype=np.float64)
    perm = _pair_permutation(flip_pairs, len(pts))
    width = image.shape[1]
    flipped = pts.copy()
    flipped[:, 0] = (width - 1) - pts[:, 0]
    return image[:, ::-1].copy(), flipped[perm]


def sample_rotation_angle(rng: np.random.Generator) -> float:
    return float(rng.uniform(*ROTATION_RANGE))


def _rotation_2d(angle_deg: float) -> np.ndarray:
    # counter-clockwise on screen, i.e. in y-down pixel coordinates
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s], [-s, c]])


def rotate_points(points, center, angle_deg: float) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    ctr = np.asarray(center, dtype=np.float64)
    return (pts - ctr) @ _rotation_2d(angle_deg).T + ctr


def rotate_image(image, center, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about ``center``; samples outside the frame are black."""
    img = np.asarray(image)
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    h, w = src.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    # inverse map: output pixel -> source location
    ctr = np.asarray(center, dtype=np.float64)
    srcpos = (grid - ctr) @ _rotation_2d(-angle_deg).T + ctr
    sx, sy = srcpos[:, 0], srcpos[:, 1]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    data = src.astype(np.float64)

    def tap(x, y):
        ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        out = np.zeros((x.size, src.shape[2]))
        out[ok] = data[y[ok], x[ok]]
        return out

    val = (
        tap(x0, y0) * (1 - fx) * (1 - fy)
        + tap(x0 + 1, y0) * fx * (1 - fy)
        + tap(x0, y0 + 1) * (1 - fx) * fy
        + tap(x0 + 1, y0 + 1) * fx * fy
    )
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        val = np.clip(np.floor(val + 0.5), info.min, info.max)
    out = val.astype(img.dtype).reshape(h, w, src.shape[2])
    return out[:, :, 0] if squeeze else out


def augment_rotate(image, landmarks, box, rng=None, angle=None):
    """Rotate image and landmarks about the face-box center.

    The angle is drawn uniformly from [-30, 30] degrees unless given.
    """
    if angle is None:
        if rng is None:
            raise BadParameter("augment_rotate needs an rng or an explicit angle")
        angle = sample_rotation_angle(rng)
    x0, y0, x1, y1 = box
    if x1 < x0 or y1 < y0:
        raise BadParameter(f"invalid face box {box}")
    center = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    return rotate_image(image, center, angle), rotate_points(landmarks, center, angle)


def rotation_copies(image, landmarks, box, rng, copies: int = 2):
    """Independent randomly rotated copies of one source image."""
    return [augment_rotate(image, landmarks, box, rng) for _ in range(copies)]
