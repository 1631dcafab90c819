"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
divergence.  Every run writes ``run_manifest.json`` (resolved config plus
sha256 digests of the inputs) into the output directory so artifacts are
reproducible from the manifest alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (disable_filters_eval, global_filter_stats, global_mc_set,
                       logits_ablation, misclassification_report, render_table,
                       sparsity_sweep)
from .errors import CfexError, DivergenceError, FormatError, ValidationError
from .explain import explain_mc, explain_mi, rf_heatmap, write_pgm
from .formats import (DatasetManifest, KIND_MC, KIND_MI, load_checkpoint,
                      load_classifier_head, load_feature_bundle, save_checkpoint,
                      save_classifier_head, save_feature_bundle, save_manifest)
from .heads import (checkpoint_from_mc, checkpoint_from_mi, mc_from_checkpoint,
                    mi_from_checkpoint, McHead, MiHead)
from .losses import (finite_diff_check, grad_mc, grad_mi, mc_kink_units,
                     mc_total_loss, mi_kink_units, mi_total_loss,
                     unit_exclusion_masks)
from .train import (TrainConfig, synth_dataset, train_classifier_head, train_mc,
                    train_mi)

GRADCHECK_TOLERANCE = 1e-4


class _UsageError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self.format_usage())


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command, resolved_config, inputs, outputs):
    manifest = {
        "command": command,
        "version": __version__,
        "resolved_config": resolved_config,
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(o) for o in outputs],
    }
    path = outdir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args, kind):
    lam = args.lambda_
    if lam is None:
        lam = 2.0 if kind == KIND_MC else 1.0
    return TrainConfig(
        learning_rate=args.lr, momentum=args.momentum, batch_size=args.batch_size,
        epochs=args.epochs, sparsity_weight=lam, seed=args.seed,
        subset_policy=args.policy, source_class=args.source_class,
        use_logits=not args.no_logits, logits_abs=args.logits_abs,
    ).validate()


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default=None)
    p.add_argument("--source-class", type=int, default=None)
    p.add_argument("--no-logits", action="store_true")
    p.add_argument("--logits-abs", action="store_true")


def _config_json(config: TrainConfig):
    return {
        "learning_rate": config.learning_rate, "momentum": config.momentum,
        "batch_size": config.batch_size, "epochs": config.epochs,
        "sparsity_weight": config.sparsity_weight, "seed": config.seed,
        "subset_policy": config.subset_policy, "source_class": config.source_class,
        "threshold": config.threshold, "use_logits": config.use_logits,
        "logits_abs": config.logits_abs,
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_synth(args):
    out = _outdir(args)
    bundle, head = synth_dataset(args.n, args.classes, args.per_class,
                                 separation=args.separation, seed=args.seed,
                                 spatial_shape=tuple(args.spatial) if args.spatial else None)
    bundle_path = out / "bundle.fex"
    head_path = out / "head.chd"
    save_feature_bundle(bundle, bundle_path)
    save_classifier_head(head, head_path)
    manifest = DatasetManifest(
        bundle_path=str(bundle_path), head_path=str(head_path),
        class_names=[f"class_{c:03d}" for c in range(args.classes)],
        splits=["train"] * len(bundle.images))
    manifest_path = out / "dataset.json"
    save_manifest(manifest, manifest_path)
    config = {"n": args.n, "classes": args.classes, "per_class": args.per_class,
              "separation": args.separation, "seed": args.seed,
              "spatial": args.spatial}
    _write_manifest(out, "gen-synth", config, [], [bundle_path, head_path, manifest_path])
    return 0


def _cmd_train_head(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    config = TrainConfig(learning_rate=args.lr, momentum=args.momentum,
                         batch_size=args.batch_size, epochs=args.epochs,
                         seed=args.seed).validate()
    head = train_classifier_head(bundle, bundle.num_classes, config)
    head_path = out / "head.chd"
    save_classifier_head(head, head_path)
    _write_manifest(out, "train-head", _config_json(config), [args.bundle], [head_path])
    return 0


def _cmd_train_mc(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    config = _train_config(args, KIND_MC)
    head, report = train_mc(bundle, classifier, args.target_class, config)
    ckpt = checkpoint_from_mc(head, args.target_class, config.sparsity_weight,
                              config.epochs)
    ckpt_path = out / f"mc_class{args.target_class}.cfe"
    save_checkpoint(ckpt, ckpt_path)
    report_path = _write_json(out / "report.json", report.to_json())
    _write_manifest(out, "train-mc", _config_json(config) |
                    {"target_class": args.target_class},
                    [args.bundle, args.head], [ckpt_path, report_path])
    return 0


def _cmd_train_mi(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    config = _train_config(args, KIND_MI)
    head, report = train_mi(bundle, classifier, args.alter_class, config)
    ckpt = checkpoint_from_mi(head, args.alter_class, config.sparsity_weight,
                              config.epochs)
    ckpt_path = out / f"mi_class{args.alter_class}.cfe"
    save_checkpoint(ckpt, ckpt_path)
    report_path = _write_json(out / "report.json", report.to_json())
    _write_manifest(out, "train-mi", _config_json(config) |
                    {"alter_class": args.alter_class},
                    [args.bundle, args.head], [ckpt_path, report_path])
    return 0


def _cmd_explain(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind == KIND_MC:
        report = explain_mc(args.image_index, bundle, classifier, ckpt)
    else:
        alter = args.alter_class if args.alter_class is not None else ckpt.target_class
        report = explain_mi(args.image_index, bundle, classifier, ckpt, alter)
    outputs = [_write_json(out / "explanation.json", report.to_json())]
    if args.heatmap_filter is not None:
        h, w = args.heatmap_size
        heatmap = rf_heatmap(args.image_index, bundle, args.heatmap_filter, h, w)
        pgm = out / f"heatmap_f{args.heatmap_filter}.pgm"
        write_pgm(heatmap, pgm)
        outputs.append(pgm)
        outputs.append(_write_json(out / f"heatmap_f{args.heatmap_filter}.json",
                                   heatmap.to_json()))
    _write_manifest(out, "explain",
                    {"image_index": args.image_index, "alter_class": args.alter_class,
                     "heatmap_filter": args.heatmap_filter,
                     "heatmap_size": args.heatmap_size},
                    [args.bundle, args.head, args.checkpoint], outputs)
    return 0


def _cmd_stats(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    head = mc_from_checkpoint(load_checkpoint(args.checkpoint))
    stats = global_filter_stats(bundle, classifier, head, args.target_class)
    json_path = _write_json(out / "filter_stats.json", stats.to_json())
    active = np.flatnonzero(stats.counts)
    rows = [(int(k), int(stats.counts[k]), f"{stats.magnitudes[k]:.4f}")
            for k in active]
    rows.sort(key=lambda r: (-r[1], r[0]))
    txt_path = out / "filter_stats.txt"
    txt_path.write_text(render_table(["filter", "count", "norm. magnitude"], rows))
    _write_manifest(out, "stats", {"target_class": args.target_class},
                    [args.bundle, args.head, args.checkpoint], [json_path, txt_path])
    return 0


def _cmd_ablate(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    head = mc_from_checkpoint(load_checkpoint(args.checkpoint))
    stats = global_filter_stats(bundle, classifier, head, args.target_class)
    disabled = global_mc_set(stats, min_count=args.min_count)
    result = disable_filters_eval(bundle, classifier, disabled, args.target_class,
                                  baseline_seed=args.baseline_seed)
    json_path = _write_json(out / "ablation.json", result.to_json())
    txt_path = out / "ablation.txt"
    txt_path.write_text(render_table(
        ["class", "disabled", "recall orig", "recall rand", "recall disabled", "accuracy"],
        [(result.class_index, len(result.disabled),
          f"{100 * result.recall_before:.1f}", f"{100 * result.recall_random:.1f}",
          f"{100 * result.recall_after:.1f}", f"{100 * result.accuracy_after:.1f}")]))
    _write_manifest(out, "ablate",
                    {"target_class": args.target_class, "min_count": args.min_count,
                     "baseline_seed": args.baseline_seed},
                    [args.bundle, args.head, args.checkpoint], [json_path, txt_path])
    return 0


def _sweep_one(payload):
    bundle_path, head_path, target, lam, config = payload
    bundle = load_feature_bundle(bundle_path)
    classifier = load_classifier_head(head_path)
    rows = sparsity_sweep(bundle, classifier, target, [lam], config)
    return rows["train"][0]


def _cmd_sweep(args):
    out = _outdir(args)
    lambdas = [float(v) for v in args.lambdas.split(",") if v]
    if not lambdas:
        raise ValidationError("--lambdas must list at least one value")
    config = _train_config(args, KIND_MC)
    if args.jobs > 1:
        payloads = [(args.bundle, args.head, args.target_class, lam, config)
                    for lam in lambdas]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, payloads))
    else:
        bundle = load_feature_bundle(args.bundle)
        classifier = load_classifier_head(args.head)
        rows = sparsity_sweep(bundle, classifier, args.target_class, lambdas,
                              config)["train"]
    outputs = []
    for row in rows:
        outputs.append(_write_json(out / f"sweep_lambda{row.sparsity_weight:g}.json",
                                   row.to_json()))
    outputs.append(_write_json(out / "sweep.json", [r.to_json() for r in rows]))
    txt_path = out / "sweep.txt"
    txt_path.write_text(render_table(
        ["lambda", "accuracy", "ce", "l1", "filters"],
        [(f"{r.sparsity_weight:g}", f"{100 * r.accuracy:.1f}%", f"{r.ce:.3f}",
          f"{r.l1:.3f}", f"{r.mean_filters:.1f}") for r in rows]))
    outputs.append(txt_path)
    _write_manifest(out, "sweep", _config_json(config) |
                    {"target_class": args.target_class, "lambdas": lambdas,
                     "jobs": args.jobs},
                    [args.bundle, args.head], outputs)
    return 0


def _cmd_logits_ablate(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    config = _train_config(args, KIND_MC)
    rows = logits_ablation(bundle, classifier, args.target_class, config)
    json_path = _write_json(out / "logits_ablation.json", [r.to_json() for r in rows])
    txt_path = out / "logits_ablation.txt"
    txt_path.write_text(render_table(
        ["variant", "accuracy", "ce", "l1", "logits", "filters"],
        [("with logits" if r.with_logits else "w/o logits", f"{100 * r.accuracy:.1f}%",
          f"{r.ce:.3f}", f"{r.l1:.3f}", f"{-r.logits_value:.3f}",
          f"{r.mean_filters:.1f}") for r in rows]))
    _write_manifest(out, "logits-ablate", _config_json(config) |
                    {"target_class": args.target_class},
                    [args.bundle, args.head], [json_path, txt_path])
    return 0


def _cmd_misclass(args):
    out = _outdir(args)
    bundle = load_feature_bundle(args.bundle)
    classifier = load_classifier_head(args.head)
    mc_ckpt = load_checkpoint(args.mc_checkpoint)
    mi_ckpt = load_checkpoint(args.mi_checkpoint)
    report = misclassification_report(args.image_index, bundle, classifier,
                                      mc_ckpt, mi_ckpt)
    json_path = _write_json(out / "misclass.json", report.to_json())
    _write_manifest(out, "misclass", {"image_index": args.image_index},
                    [args.bundle, args.head, args.mc_checkpoint, args.mi_checkpoint],
                    [json_path])
    return 0


def _cmd_gradcheck(args):
    out = _outdir(args)
    n, C, batch = args.n, args.classes, args.batch
    worst = {"mc": 0.0, "mi": 0.0}
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        G = rng.uniform(0, 3, size=(batch, n))
        classifier_w = rng.standard_normal((n, C)).astype(np.float32)
        classifier_b = rng.standard_normal(C).astype(np.float32)
        from .formats import ClassifierHead

        classifier = ClassifierHead(weights=classifier_w, bias=classifier_b)
        target = int(rng.integers(C))
        params = {"weight": rng.standard_normal((n, n)) * 0.3,
                  "bias": rng.standard_normal(n) * 0.1}

        mc = McHead(weight=params["weight"], bias=params["bias"])
        grads, _ = grad_mc(G, target, mc, classifier, 2.0)
        exclude = unit_exclusion_masks(mc_kink_units(mc, G), n)
        err = finite_diff_check(
            lambda: mc_total_loss(G, target, mc, classifier, 2.0).total,
            params, grads, exclude=exclude)
        worst["mc"] = max(worst["mc"], err)

        mi = MiHead(weight=params["weight"], bias=params["bias"])
        grads, _ = grad_mi(G, target, mi, classifier, 1.0)
        exclude = unit_exclusion_masks(mi_kink_units(mi, G), n)
        err = finite_diff_check(
            lambda: mi_total_loss(G, target, mi, classifier, 1.0).total,
            params, grads, exclude=exclude)
        worst["mi"] = max(worst["mi"], err)
    worst = {k: float(v) for k, v in worst.items()}
    result = {"n": n, "classes": C, "batch": batch, "seeds": args.seeds,
              "max_relative_error": worst, "tolerance": GRADCHECK_TOLERANCE,
              "passed": bool(max(worst.values()) <= GRADCHECK_TOLERANCE)}
    json_path = _write_json(out / "gradcheck.json", result)
    _write_manifest(out, "gradcheck", {"n": n, "classes": C, "batch": batch,
                                       "seeds": args.seeds}, [], [json_path])
    print(f"mc max rel err {worst['mc']:.3g}, mi max rel err {worst['mi']:.3g}")
    return 0 if result["passed"] else 3


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="cfex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic bundle + trained head")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spatial", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train-head", help="train the stand-in classifier head")
    p.add_argument("--bundle", required=True)
    p.add_argument("--lr", type=float, default=2.0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_head)

    p = sub.add_parser("train-mc", help="train a mask head for one target class")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_mc)

    p = sub.add_parser("train-mi", help="train an addition head toward one alter class")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--class", dest="alter_class", type=int, required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_mi)

    p = sub.add_parser("explain", help="per-image explanation report")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-index", type=int, required=True)
    p.add_argument("--alter-class", type=int, default=None)
    p.add_argument("--heatmap-filter", type=int, default=None)
    p.add_argument("--heatmap-size", type=int, nargs=2, default=(64, 64),
                   metavar=("H", "W"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("stats", help="per-class filter statistics")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("ablate", help="disable a class's global filter set")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--baseline-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="sparsity-weight sweep")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--lambdas", default="1,2,4")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("logits-ablate", help="train with and without the logits term")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--class", dest="target_class", type=int, required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_logits_ablate)

    p = sub.add_parser("misclass", help="misclassification analysis for one image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--mc-checkpoint", required=True)
    p.add_argument("--mi-checkpoint", required=True)
    p.add_argument("--image-index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_misclass)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(exc.usage, file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CfexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
