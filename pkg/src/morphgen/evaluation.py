"""Face verification and landmark metrics, and dataset bias reports."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadFoldShape,
    BadParameter,
    EmptyInput,
    EmptyManifest,
    OneClassOnly,
    ZeroDiagonal,
    ZeroVector,
)

ANGLE_BIN_EDGES = np.arange(-180, 181, 15)


# -- similarity --------------------------------------------------------------

def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _cosine_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroVector("template contains a zero vector")
    return np.clip((A / na[:, None]) @ (B / nb[:, None]).T, -1.0, 1.0)


def template_similarity(A, B, beta: float = 1.0) -> float:
    """Softmax-weighted mean of all pairwise cosine similarities between two sets."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptyInput("templates must contain at least one embedding")
    if beta < 0:
        raise BadParameter("beta must be non-negative")
    if A.shape[0] == 1 and B.shape[0] == 1:
        return cosine_similarity(A[0], B[0])
    s = _cosine_matrix(A, B).ravel()
    logits = beta * s
    w = np.exp(logits - logits.max())
    return float((w * s).sum() / w.sum())


# -- ROC ---------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by decreasing threshold (accept score >= threshold)."""

    thresholds: np.ndarray
    far: np.ndarray
    tar: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return [(float(f), float(t)) for f, t in zip(self.far, self.tar)]


def _as_pairs(scores, same):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    same = np.asarray(same, dtype=bool).ravel()
    if scores.shape != same.shape:
        raise BadParameter("scores and labels differ in length")
    if scores.size == 0:
        raise EmptyInput("no scored pairs")
    if not np.all(np.isfinite(scores)):
        raise BadParameter("scores must be finite")
    return scores, same


def roc(scores, same) -> RocCurve:
    scores, same = _as_pairs(scores, same)
    n_pos = int(same.sum())
    n_neg = same.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs at least one positive and one negative pair")
    order = np.argsort(-scores, kind="stable")
    desc = scores[order]
    tp = np.cumsum(same[order])
    fp = np.cumsum(~same[order])
    thresholds = np.unique(scores)[::-1]
    last = np.searchsorted(-desc, -thresholds, side="right") - 1
    return RocCurve(thresholds, fp[last] / n_neg, tp[last] / n_pos)


def tar_at_far(curve: RocCurve, far: float) -> float:
    """TAR at ``far``, linear between the achievable FAR points bracketing it.

    At a FAR reached by several thresholds the best TAR counts on the lower
    side and the worst on the upper side, so the result is monotone in ``far``.
    """
    if not 0 < far < 1:
        raise BadParameter(f"far must lie in (0, 1), got {far}")
    F = np.concatenate([[0.0], curve.far])
    T = np.concatenate([[0.0], curve.tar])
    exact = F == far
    if exact.any():
        return float(T[exact].max())
    below = F < far
    above = F > far
    f_lo = F[below].max()
    t_lo = T[F == f_lo].max()
    f_hi = F[above].min()
    t_hi = T[F == f_hi].min()
    return float(t_lo + (t_hi - t_lo) * (far - f_lo) / (f_hi - f_lo))


# -- k-fold verification accuracy --------------------------------------------

def best_threshold(scores, same) -> float:
    """Threshold maximizing accuracy on the given pairs.

    Candidates are -inf, every midpoint between adjacent distinct scores, and
    +inf; ties go to the lowest candidate.
    """
    scores, same = _as_pairs(scores, same)
    uniq, inv = np.unique(scores, return_inverse=True)
    pos = np.bincount(inv, weights=same, minlength=uniq.size)
    neg = np.bincount(inv, weights=~same, minlength=uniq.size)
    pos_below = np.concatenate([[0.0], np.cumsum(pos)])
    neg_below = np.concatenate([[0.0], np.cumsum(neg)])
    # candidate k accepts scores >= uniq[k]; k == len(uniq) accepts nothing
    correct = neg_below + (pos.sum() - pos_below)
    k = int(np.argmax(correct))
    if k == 0:
        return -math.inf
    if k == uniq.size:
        return math.inf
    return float(0.5 * (uniq[k - 1] + uniq[k]))


def ten_fold_accuracies(scores, same, folds, n_folds: int = 10, pairs_per_fold: int | None = None):
    """Per-fold test accuracies with thresholds chosen on the remaining folds.

    ``pairs_per_fold`` is the number of positive (= negative) pairs each fold
    must hold; ``None`` only requires equal, balanced folds.
    """
    scores, same = _as_pairs(scores, same)
    folds = np.asarray(folds).ravel()
    if folds.shape != scores.shape:
        raise BadFoldShape("fold labels differ in length from scores")
    fold_ids = np.unique(folds)
    if fold_ids.size != n_folds:
        raise BadFoldShape(f"expected {n_folds} folds, found {fold_ids.size}")
    sizes = set()
    for f in fold_ids:
        m = folds == f
        n_pos = int(same[m].sum())
        n_neg = int(m.sum()) - n_pos
        if n_pos != n_neg:
            raise BadFoldShape(f"fold {f} holds {n_pos} positive and {n_neg} negative pairs")
        if pairs_per_fold is not None and n_pos != pairs_per_fold:
            raise BadFoldShape(f"fold {f} holds {n_pos} positive pairs, expected {pairs_per_fold}")
        sizes.add(n_pos)
    if len(sizes) != 1:
        raise BadFoldShape(f"folds differ in size: {sorted(sizes)}")

    accs = np.empty(n_folds)
    thresholds = np.empty(n_folds)
    for i, f in enumerate(fold_ids):
        test = folds == f
        thr = best_threshold(scores[~test], same[~test])
        thresholds[i] = thr
        accs[i] = np.mean((scores[test] >= thr) == same[test])
    return accs, thresholds


def verification_accuracy_10fold(scores, same, folds, n_folds: int = 10, pairs_per_fold=None) -> float:
    accs, _ = ten_fold_accuracies(scores, same, folds, n_folds, pairs_per_fold)
    return float(accs.mean())


def make_verification_pairs(identity_ids, rng, n_folds: int = 10, pairs_per_fold: int = 300):
    """Build balanced verification folds over identity-disjoint groups.

    ``identity_ids[i]`` is the identity of item ``i``. Returns arrays
    ``(a, b, same, fold)`` of item indices, labels and fold numbers.
    """
    ids = np.asarray(identity_ids)
    uniq = rng.permutation(np.unique(ids))
    if uniq.size < 2 * n_folds:
        raise BadParameter(f"need at least {2 * n_folds} identities for {n_folds} folds")
    groups = np.array_split(uniq, n_folds)
    members = {int(k): np.flatnonzero(ids == k) for k in uniq}
    a, b, same, fold = [], [], [], []
    for f, group in enumerate(groups):
        capacity = sum(len(members[int(k)]) * (len(members[int(k)]) - 1) // 2 for k in group)
        if capacity < pairs_per_fold:
            raise BadParameter(f"fold {f} can form only {capacity} positive pairs")
        multi = [int(k) for k in group if len(members[int(k)]) >= 2]
        seen = set()
        while len(seen) < pairs_per_fold:
            items = members[multi[rng.integers(len(multi))]]
            i, j = sorted(rng.choice(items, 2, replace=False).tolist())
            if (i, j) not in seen:
                seen.add((i, j))
                a.append(i), b.append(j), same.append(True), fold.append(f)
        seen = set()
        while len(seen) < pairs_per_fold:
            k1, k2 = rng.choice(group, 2, replace=False)
            i = int(rng.choice(members[int(k1)]))
            j = int(rng.choice(members[int(k2)]))
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                a.append(key[0]), b.append(key[1]), same.append(False), fold.append(f)
    return np.array(a), np.array(b), np.array(same), np.array(fold)


# -- landmarks ---------------------------------------------------------------

def box_diagonal(box) -> float:
    x0, y0, x1, y1 = (float(v) for v in box)
    return math.hypot(x1 - x0, y1 - y0)


def landmark_error(predicted, ground_truth, box) -> float:
    """Mean point-to-point distance divided by the face-box diagonal."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    if p.shape != g.shape or p.shape[0] == 0:
        raise BadParameter(f"prediction has {p.shape[0]} points, ground truth {g.shape[0]}")
    diag = box_diagonal(box)
    if diag == 0:
        raise ZeroDiagonal("face box has zero diagonal")
    return float(np.linalg.norm(p - g, axis=1).mean() / diag)


def detection_accuracy(errors, threshold: float) -> float:
    """Fraction of images whose normalized error is <= ``threshold``."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise EmptyInput("no landmark errors")
    if not threshold > 0:
        raise BadParameter("threshold must be positive")
    return float(np.mean(errors <= threshold))


# -- bias report -------------------------------------------------------------

def _histogram(values: np.ndarray) -> dict:
    counts, _ = np.histogram(values, bins=ANGLE_BIN_EDGES)
    return {
        "edges": ANGLE_BIN_EDGES.tolist(),
        "counts": counts.tolist(),
        "freq": (counts / max(values.size, 1)).tolist(),
        "min": float(values.min()),
        "max": float(values.max()),
        "max_abs": float(np.abs(values).max()),
    }


def bias_report(records) -> dict:
    """Distribution summary of a generated dataset's manifest records."""
    records = list(records)
    if not records:
        raise EmptyManifest("manifest has no records")
    report = {"records": len(records)}
    for angle in ("yaw", "pitch", "roll"):
        values = np.array([r.pose[angle] for r in records], dtype=np.float64)
        report[angle] = _histogram(values)
    per_id = Counter(r.identity_id for r in records)
    report["identity_count"] = len(per_id)
    spread = Counter(per_id.values())
    report["samples_per_identity"] = {str(k): spread[k] for k in sorted(spread)}
    illum = np.array([r.illumination for r in records], dtype=np.float64)
    report["illumination"] = {
        "mean": illum.mean(axis=0).tolist(),
        "sd": illum.std(axis=0).tolist(),
    }
    bg = Counter(r.background_id for r in records)
    report["backgrounds"] = {k: bg[k] for k in sorted(bg)}
    return report


def compare_reports(a: dict, b: dict) -> dict:
    """Per-bin absolute frequency differences between two bias reports."""
    out = {}
    for angle in ("yaw", "pitch", "roll"):
        diff = np.abs(np.array(a[angle]["freq"]) - np.array(b[angle]["freq"]))
        out[angle] = {
            "edges": a[angle]["edges"],
            "abs_diff": diff.tolist(),
            "total_variation": float(0.5 * diff.sum()),
        }
    out["identity_count"] = {
        "a": a["identity_count"],
        "b": b["identity_count"],
        "abs_diff": abs(a["identity_count"] - b["identity_count"]),
    }
    return out
