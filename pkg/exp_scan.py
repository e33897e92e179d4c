"""Scan hex-loss knobs for the rank_super direction (seed 1 only)."""
import json
import sys
import time

from hexreg.trainer import TrainConfig, run_training

BASE = {
    "data": {"n_super": 4, "classes_per_super": 4, "samples_per_class": 100,
             "input_dim": 32, "sigma_super": 3.0, "sigma_class": 1.0,
             "sigma_sample": 0.3, "seed": 7},
    "model": {"encoder_hidden": [64], "repr_dim": 16, "proj_hidden": 32, "proj_dim": 8},
    "loss": {"kind": "simclr"},
    "optimizer": {"lr": 0.02, "momentum": 0.9},
    "augment": {"noise_sigma": 0.5, "mask_prob": 0.1},
    "schedule": {"kind": "adaptive", "sigma_multiplier": 2.0},
    "train": {"epochs": 200, "batch_size": 64, "eval_every": 40,
              "rank_subsets": 8, "rank_subset_size": 100, "seed": 1},
}

def run(mod):
    raw = json.loads(json.dumps(BASE))
    for k, v in mod.items():
        sec, key = k.split(".")
        raw[sec][key] = v
    t0 = time.time()
    rows, _, _ = run_training(TrainConfig.from_dict(raw))
    by = {r["epoch"]: r for r in rows}
    tr = [round(by[e]["rankme_super"], 2) for e in (40, 80, 120, 160, 200)]
    print(f"{json.dumps(mod):>90}  rank_super@[40..200]={tr} "
          f"rand@200={by[200]['rankme_random']:.2f} H@200={by[200]['mean_H_size']:.1f} "
          f"clamps={by[200]['clamp_events']} ({time.time()-t0:.0f}s)")
    sys.stdout.flush()
    return by

if __name__ == "__main__":
    run({})  # baseline
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "subtract"})
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "add"})
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "add", "loss.qhi_tau": 0.3})
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "add", "loss.qhi_tau": 0.5})
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "add", "loss.qhi_tau": 0.5,
         "loss.qhi_n": "views"})
    run({"loss.kind": "simclr_hex", "loss.qhi_sign": "subtract", "loss.qhi_tau": 0.5})
