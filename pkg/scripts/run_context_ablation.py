#!/usr/bin/env python3
"""Context-ablation study: train the scene model at each context level
(none, agent, lane, full) on the parked task and report mean/std F1 and the
parameter count per configuration.
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
    ap.add_argument("--task", default="parked",
                    choices=["parked", "ghost", "both"])
    ap.add_argument("--out", help="optional JSON output path")
    args = ap.parse_args()

    if args.data:
        data = synth.load_dataset(args.data)
    else:
        scenes = synth.generate(synth.GenConfig(n_scenes=args.n_scenes))
        data = synth.make_split(scenes)

    tc = tr.TrainConfig(epochs=args.epochs)
    results = {}
    for level in enc.CONTEXT_LEVELS:
        cfg = enc.EncoderConfig(context_level=level)
        n_params = enc.build_scene_model(cfg).num_parameters()
        f1s = []
        for seed in range(args.seeds):
            _, rep = tr.train(cfg, data, args.task, seed=seed, train_cfg=tc)
            f1s.append(float(np.mean([r.f1 for r in rep.values()])))
        results[level] = {"f1": f1s, "params": n_params}
        print(f"context {level:6s}: F1 {np.mean(f1s):.4f} ± {np.std(f1s):.4f}"
              f"  ({n_params} parameters)")

    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=1) + "\n")


if __name__ == "__main__":
    main()
