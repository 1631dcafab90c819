#!/usr/bin/env python3
"""Verify an externally exported bundle + classifier head against this toolkit.

Checks, for every image in the bundle:
  * the toolkit's top-1 prediction from (g, W, b) matches the inferred label
    recorded by the exporting framework (agreement must reach --min-agreement);
  * when spatial maps are present, their per-channel means reproduce g within
    the documented tolerance (enforced by bundle validation on load).

Prints a one-line summary and a JSON report; exits 0 on success, 1 on failure.

    python3 scripts/check_export_parity.py --bundle export/bundle.fex \
        --head export/head.chd --report export/parity.json
"""

import argparse
import json
import sys

import numpy as np

from cfex import load_classifier_head, load_feature_bundle
from cfex.model import batch_top_class


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bundle", required=True)
    ap.add_argument("--head", required=True)
    ap.add_argument("--min-agreement", type=float, default=0.99)
    ap.add_argument("--report", default=None)
    args = ap.parse_args()

    bundle = load_feature_bundle(args.bundle)  # validates spatial means
    head = load_classifier_head(args.head)
    if head.n != bundle.n or head.num_classes != bundle.num_classes:
        print(f"shape mismatch: bundle n={bundle.n} C={bundle.num_classes}, "
              f"head n={head.n} C={head.num_classes}", file=sys.stderr)
        return 1

    predicted = batch_top_class(bundle.feature_matrix(), head)
    recorded = bundle.inferred_labels()
    agreement = float(np.mean(predicted == recorded)) if len(recorded) else 0.0
    disagreements = [int(i) for i in np.flatnonzero(predicted != recorded)]
    ok = agreement >= args.min_agreement and len(recorded) > 0

    report = {
        "images": len(recorded),
        "agreement": agreement,
        "min_agreement": args.min_agreement,
        "disagreements": disagreements[:50],
        "spatial_maps": bundle.spatial_shape != (0, 0),
        "passed": ok,
    }
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
    print(f"{'PASS' if ok else 'FAIL'}: top-1 agreement {agreement:.4f} on "
          f"{len(recorded)} images (needs >= {args.min_agreement})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
