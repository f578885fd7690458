#!/usr/bin/env python3
"""Architecture-ablation study: full model versus single-switch ablations
(no trajectory encoder, no residual concatenation, no edge features) on the
parked task.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from hetscene import encoder as enc
from hetscene import synth
from hetscene import training as tr

VARIANTS = {
    "full": {},
    "no_temporal": {"use_temporal": False},
    "no_residual": {"use_residual_concat": False},
    "no_edge_features": {"use_edge_features": False},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", help="existing dataset directory (else generate)")
    ap.add_argument("--n-scenes", type=int, default=5000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--out", help="optional JSON output path")
    args = ap.parse_args()

    if args.data:
        data = synth.load_dataset(args.data)
    else:
        scenes = synth.generate(synth.GenConfig(n_scenes=args.n_scenes))
        data = synth.make_split(scenes)

    tc = tr.TrainConfig(epochs=args.epochs)
    results = {}
    for name, overrides in VARIANTS.items():
        cfg = enc.EncoderConfig(**overrides)
        f1s = []
        for seed in range(args.seeds):
            _, rep = tr.train(cfg, data, "parked", seed=seed, train_cfg=tc)
            f1s.append(rep["parked"].f1)
        results[name] = f1s
        print(f"{name:18s}: F1 {np.mean(f1s):.4f} ± {np.std(f1s):.4f}")

    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=1) + "\n")


if __name__ == "__main__":
    main()
