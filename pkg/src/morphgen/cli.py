"""Command-line entry point: ``morphgen <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datagen, evaluation
from .errors import BadRecord, MorphgenError
from .model import load_model, make_toy_model, save_model

log = logging.getLogger("morphgen")

SEED_ENV = "MORPHGEN_SEED"


def _seed(args, fallback: int = 0) -> int:
    """MORPHGEN_SEED wins over --seed, which wins over ``fallback``."""
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise MorphgenError(f"{SEED_ENV}={env!r} is not an integer") from None
    return fallback if args.seed is None else args.seed


def _emit(report: dict, args, human_lines=None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2)
    if getattr(args, "out", None):
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if getattr(args, "human", False) and human_lines is not None:
        print("\n".join(human_lines))
    else:
        print(text)


def _read_jsonl(path):
    path = Path(path)
    if not path.is_file():
        raise MorphgenError(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadRecord(f"{path.name}: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise BadRecord(f"{path.name}: expected a JSON object", line=lineno)
            yield lineno, obj


# -- subcommands -------------------------------------------------------------

def cmd_make_toy_model(args) -> int:
    model = make_toy_model(args.rings, args.ks, args.kc, args.ke, _seed(args))
    save_model(model, args.output)
    print(json.dumps({"path": str(args.output), **model.header()}, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    if args.spec:
        try:
            spec = datagen.DatasetSpec.from_dict(json.loads(Path(args.spec).read_text("utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise MorphgenError(f"cannot read spec {args.spec}: {exc}") from exc
    else:
        spec = datagen.preset_spec(args.preset)
    overrides = {"seed": _seed(args, spec.seed)}
    if args.prior:
        overrides["illumination_prior_path"] = str(args.prior)
    if args.backgrounds:
        overrides["background_dir"] = str(args.backgrounds)
    if args.identities:
        overrides["num_identities"] = args.identities
    if args.samples:
        overrides["samples_per_identity"] = args.samples
    spec = datagen.DatasetSpec.from_dict({**spec.to_dict(), **overrides})
    if args.frontal_bias:
        spec = datagen.frontal_bias_spec(spec)
    if args.half_identities:
        spec = datagen.half_identity_spec(spec)

    model = load_model(args.model)
    records = datagen.generate_dataset(spec, model, args.output, jobs=args.jobs)
    print(
        json.dumps(
            {
                "records": len(records),
                "identities": spec.num_identities,
                "samples_per_identity": spec.samples_per_identity,
                "manifest": str(Path(args.output) / datagen.MANIFEST_NAME),
                "spec_hash": spec.spec_hash(),
            },
            sort_keys=True,
        )
    )
    return 0


def load_embeddings(path):
    """Map id -> vector and template_id -> stacked vectors."""
    vectors, templates = {}, {}
    for lineno, obj in _read_jsonl(path):
        try:
            key = str(obj["id"])
            vec = np.asarray(obj["vector"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRecord(f"embedding record: {exc}", line=lineno) from exc
        if vec.ndim != 1 or vec.size == 0:
            raise BadRecord("embedding vector must be a non-empty list", line=lineno)
        vectors[key] = vec
        if obj.get("template_id") is not None:
            templates.setdefault(str(obj["template_id"]), []).append(vec)
    return vectors, {k: np.stack(v) for k, v in templates.items()}


def score_pairs(pairs_path, vectors, templates, beta):
    scores, same, folds = [], [], []
    for lineno, obj in _read_jsonl(pairs_path):
        try:
            a, b = str(obj["a"]), str(obj["b"])
            label = obj["same"]
        except KeyError as exc:
            raise BadRecord(f"pair record missing {exc}", line=lineno) from exc
        if not isinstance(label, bool):
            raise BadRecord("'same' must be a boolean", line=lineno)
        sets = []
        for key in (a, b):
            if key in vectors:
                sets.append(vectors[key][None, :])
            elif key in templates:
                sets.append(templates[key])
            else:
                raise BadRecord(f"unknown embedding or template {key!r}", line=lineno)
        scores.append(evaluation.template_similarity(sets[0], sets[1], beta))
        same.append(label)
        folds.append(obj.get("fold"))
    return np.array(scores), np.array(same, dtype=bool), folds


def cmd_eval_verification(args) -> int:
    vectors, templates = load_embeddings(args.embeddings)
    scores, same, folds = score_pairs(args.pairs, vectors, templates, args.beta)
    curve = evaluation.roc(scores, same)
    report = {
        "pairs": int(scores.size),
        "tar_at_far": {repr(f): evaluation.tar_at_far(curve, f) for f in args.far},
    }
    lines = [f"pairs           {scores.size}"]
    if all(f is not None for f in folds):
        accs, _ = evaluation.ten_fold_accuracies(
            scores, same, np.array(folds), args.folds, args.pairs_per_fold
        )
        report["accuracy"] = {
            "mean": float(accs.mean()),
            "sd": float(accs.std()),
            "folds": accs.tolist(),
        }
        lines.append(f"accuracy        {accs.mean():.4f} +- {accs.std():.4f}")
    for f, v in report["tar_at_far"].items():
        lines.append(f"TAR@FAR={f:<7} {v:.4f}")
    _emit(report, args, lines)
    return 0


def cmd_eval_landmarks(args) -> int:
    manifest_path = Path(args.manifest)
    truth = {r.image_path: r for r in datagen.read_manifest(manifest_path)}
    errors = []
    for lineno, obj in _read_jsonl(args.predictions):
        try:
            rec = truth[obj["image_path"]]
            err = evaluation.landmark_error(obj["predicted"], rec.landmarks, rec.face_box)
        except KeyError as exc:
            raise BadRecord(f"no manifest entry or field {exc}", line=lineno) from exc
        except (MorphgenError, TypeError, ValueError) as exc:
            raise BadRecord(str(exc), line=lineno) from exc
        errors.append(err)
    acc = {repr(t): evaluation.detection_accuracy(errors, t) for t in args.thresholds}
    report = {
        "images": len(errors),
        "mean_error": float(np.mean(errors)),
        "detection_accuracy": acc,
    }
    lines = [f"images          {len(errors)}", f"mean error      {report['mean_error']:.4f}"]
    lines += [f"acc@{t:<11} {v:.4f}" for t, v in acc.items()]
    _emit(report, args, lines)
    return 0


def cmd_bias_report(args) -> int:
    report = evaluation.bias_report(datagen.read_manifest(args.manifest))
    lines = [f"records         {report['records']}", f"identities      {report['identity_count']}"]
    for angle in ("yaw", "pitch", "roll"):
        lines.append(f"{angle:<6} max|.|  {report[angle]['max_abs']:.2f}")
    if args.compare:
        other = evaluation.bias_report(datagen.read_manifest(args.compare))
        report = {"a": report, "b": other, "diff": evaluation.compare_reports(report, other)}
        for angle in ("yaw", "pitch", "roll"):
            tv = report["diff"][angle]["total_variation"]
            lines.append(f"{angle:<6} TV diff {tv:.4f}")
    _emit(report, args, lines)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphgen", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-toy-model", help="write a procedural MFM1 model")
    s.add_argument("--rings", type=int, default=16)
    s.add_argument("--ks", type=int, default=10)
    s.add_argument("--kc", type=int, default=10)
    s.add_argument("--ke", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_make_toy_model)

    s = sub.add_parser("generate", help="render an annotated synthetic dataset")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(datagen.PRESETS), default="recognition-desk")
    src.add_argument("--spec", help="dataset spec JSON file")
    s.add_argument("--model", required=True)
    s.add_argument("--prior", help="illumination prior JSON (default: built-in toy prior)")
    s.add_argument("--backgrounds", help="directory of PNG backgrounds")
    s.add_argument("--identities", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--frontal-bias", action="store_true")
    s.add_argument("--half-identities", action="store_true")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-verification", help="10-fold accuracy and TAR@FAR")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--far", type=float, nargs="+", default=[0.1])
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--pairs-per-fold", type=int, default=None)
    s.add_argument("--out")
    s.add_argument("--human", action="store_true")
    s.set_defaults(func=cmd_eval_verification)

    s = sub.add_parser("eval-landmarks", help="normalized landmark error")
    s.add_argument("--predictions", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--thresholds", type=float, nargs="+", default=[0.03, 0.05])
    s.add_argument("--out")
    s.add_argument("--human", action="store_true")
    s.set_defaults(func=cmd_eval_landmarks)

    s = sub.add_parser("bias-report", help="pose/identity/illumination distribution summary")
    s.add_argument("manifest")
    s.add_argument("--compare", help="second manifest to diff against")
    s.add_argument("--out")
    s.add_argument("--human", action="store_true")
    s.set_defaults(func=cmd_bias_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (MorphgenError, OSError) as exc:
        print(f"morphgen {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
