#!/usr/bin/env python3
"""Run the knowledge-graph node-classification benchmarks.

Expects a data directory containing, per dataset, ``<name>.nt`` plus
``<name>_train.tsv`` and ``<name>_test.tsv`` split files (TSV with a header
row; first column entity IRI, second column class label).  Datasets whose
files are absent are reported and skipped.
"""

import argparse
import json
from pathlib import Path

from hetscene import kg


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="dataset directory")
    ap.add_argument("--datasets", nargs="+", default=["aifb", "mutag", "bgs"],
                    choices=list(kg.DATASETS))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--config", help="JSON file with KgConfig overrides")
    ap.add_argument("--out", help="optional JSON output path")
    args = ap.parse_args()

    cfg = kg.KgConfig.from_dict(
        json.loads(Path(args.config).read_text()) if args.config else {})
    results = {}
    for name in args.datasets:
        try:
            kg.dataset_paths(args.data, name)
        except FileNotFoundError as e:
            print(f"{name}: skipped ({e})")
            continue
        res = kg.run_benchmark(name, args.data, cfg, seeds=args.seeds)
        results[name] = res
        print(f"{name}: accuracy {res['acc_mean'] * 100:.2f} "
              f"± {res['acc_std'] * 100:.2f} %")

    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=1) + "\n")


if __name__ == "__main__":
    main()
