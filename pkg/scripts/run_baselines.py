#!/usr/bin/env python3
"""Compare the full scene model against the velocity and MLP baselines.

Generates (or loads) a synthetic dataset, trains the full-context model and
the agent-feature MLP over several seeds on the parked and ghost tasks, and
prints a small results table next to the velocity rule.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from hetscene import encoder as enc
from hetscene import synth
from hetscene import training as tr


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", help="existing dataset directory (else generate)")
    ap.add_argument("--n-scenes", type=int, default=5000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--gen-seed", type=int, default=0)
    ap.add_argument("--out", help="optional JSON output path")
    args = ap.parse_args()

    if args.data:
        data = synth.load_dataset(args.data)
        test_scenes = None
    else:
        cfg = synth.GenConfig(n_scenes=args.n_scenes, seed=args.gen_seed)
        scenes = synth.generate(cfg)
        data = synth.make_split(scenes)
        test_idx = synth.split_indices(len(scenes), cfg.splits)[2]
        test_scenes = [scenes[i] for i in test_idx]

    tc = tr.TrainConfig(epochs=args.epochs)
    results = {}
    if test_scenes is not None:
        vb = synth.velocity_baseline_metrics(test_scenes)
        results["velocity/parked"] = [vb.f1]
        print(f"velocity baseline   parked F1 {vb.f1:.4f}")

    for task in ("parked", "ghost"):
        for name, runner in (
                ("scene", lambda s: tr.train(enc.EncoderConfig(), data, task,
                                             seed=s, train_cfg=tc)[1][task]),
                ("mlp", lambda s: synth.train_mlp(data, task, seed=s,
                                                  train_cfg=tc)[1])):
            f1s = [runner(seed).f1 for seed in range(args.seeds)]
            results[f"{name}/{task}"] = f1s
            print(f"{name:8s} {task:6s} F1 {np.mean(f1s):.4f} "
                  f"± {np.std(f1s):.4f}  ({args.seeds} seeds)")

    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=1) + "\n")


if __name__ == "__main__":
    main()
