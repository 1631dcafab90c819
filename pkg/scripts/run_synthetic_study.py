#!/usr/bin/env python3
"""Full synthetic study: data generation, both explainer heads, and every
quantitative analysis, written as JSON + plain-text tables under one
output directory.

    python3 scripts/run_synthetic_study.py --out runs/study --n 64 --classes 10
"""

import argparse
import json
from pathlib import Path

import numpy as np

from cfex import (TrainConfig, disable_filters_eval, explain_mc, explain_mi,
                  global_filter_stats, global_mc_set, logits_ablation,
                  mc_forward_infer, save_checkpoint, save_classifier_head,
                  save_feature_bundle, sparsity_sweep, synth_dataset, train_mc,
                  train_mi)
from cfex.analysis import render_table
from cfex.heads import checkpoint_from_mc, checkpoint_from_mi
from cfex.model import batch_top_class
from cfex.train import POLICY_INFERRED_EQUALS_TARGET, select_subset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alter-class", type=int, default=3)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print("generating synthetic dataset ...")
    bundle, classifier = synth_dataset(args.n, args.classes, args.per_class,
                                       seed=args.seed)
    save_feature_bundle(bundle, out / "bundle.fex")
    save_classifier_head(classifier, out / "head.chd")
    acc = float(np.mean(batch_top_class(bundle.feature_matrix(), classifier)
                        == bundle.true_labels()))
    print(f"  classifier train accuracy {acc:.4f}")

    print("training mask heads for every class ...")
    retention_rows = []
    mc_heads = {}
    for c in range(args.classes):
        head, report = train_mc(bundle, classifier, c, TrainConfig(seed=args.seed))
        mc_heads[c] = head
        save_checkpoint(checkpoint_from_mc(head, c, report.sparsity_weight,
                                           len(report.epoch_losses)),
                        out / f"mc_class{c}.cfe")
        retention_rows.append((c, report.subset_size,
                               f"{100 * report.final_accuracy:.1f}%",
                               f"{report.final_sparsity:.2f}"))
    (out / "retention.txt").write_text(render_table(
        ["class", "images", "retention", "mean filters"], retention_rows))
    print((out / "retention.txt").read_text())

    print(f"training an addition head toward class {args.alter_class} ...")
    mi_head, mi_report = train_mi(bundle, classifier, args.alter_class,
                                  TrainConfig(seed=args.seed))
    save_checkpoint(checkpoint_from_mi(mi_head, args.alter_class,
                                       mi_report.sparsity_weight,
                                       len(mi_report.epoch_losses)),
                    out / f"mi_class{args.alter_class}.cfe")
    print(f"  flip rate {100 * mi_report.final_accuracy:.2f}%, "
          f"mean added mass {mi_report.final_sparsity:.2f}")

    print("per-image examples ...")
    idx = select_subset(bundle, POLICY_INFERRED_EQUALS_TARGET, 0)[0]
    mc_example = explain_mc(idx, bundle, classifier, mc_heads[0])
    mi_example = explain_mi(idx, bundle, classifier, mi_head, args.alter_class)
    (out / "example_mc.json").write_text(json.dumps(mc_example.to_json(), indent=2))
    (out / "example_mi.json").write_text(json.dumps(mi_example.to_json(), indent=2))

    print("disable-filter ablation per class ...")
    ablation_rows = []
    for c in range(args.classes):
        stats = global_filter_stats(bundle, classifier, mc_heads[c], c)
        disabled = global_mc_set(stats, min_count=1)
        res = disable_filters_eval(bundle, classifier, disabled, c,
                                   baseline_seed=args.seed)
        ablation_rows.append((c, len(disabled),
                              f"{100 * res.recall_before:.1f}",
                              f"{100 * res.recall_random:.1f}",
                              f"{100 * res.recall_after:.1f}",
                              f"{100 * res.accuracy_after:.1f}"))
    (out / "ablation.txt").write_text(render_table(
        ["class", "disabled", "recall orig", "recall rand", "recall disabled",
         "accuracy"], ablation_rows))
    print((out / "ablation.txt").read_text())

    print("sparsity sweep (class 0) ...")
    sweep = sparsity_sweep(bundle, classifier, 0, [1.0, 2.0, 4.0],
                           TrainConfig(seed=args.seed))
    (out / "sweep.txt").write_text(render_table(
        ["lambda", "retention", "ce", "mean filters"],
        [(f"{r.sparsity_weight:g}", f"{100 * r.accuracy:.1f}%", f"{r.ce:.3f}",
          f"{r.mean_filters:.2f}") for r in sweep["train"]]))
    print((out / "sweep.txt").read_text())

    print("logits-term ablation (class 0) ...")
    rows = logits_ablation(bundle, classifier, 0, TrainConfig(seed=args.seed))
    (out / "logits_ablation.txt").write_text(render_table(
        ["variant", "retention", "ce", "logit mass", "mean filters"],
        [("with" if r.with_logits else "without", f"{100 * r.accuracy:.1f}%",
          f"{r.ce:.4f}", f"{r.logits_value:.2f}", f"{r.mean_filters:.2f}")
         for r in rows]))
    print((out / "logits_ablation.txt").read_text())
    print(f"all artifacts under {out}/")


if __name__ == "__main__":
    main()
