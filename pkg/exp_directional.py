"""Scratch experiment: acceptance criteria 5-10 directional preview."""
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
    "optimizer": {"lr": 0.1, "momentum": 0.9},
    "augment": {"noise_sigma": 0.3, "mask_prob": 0.1},
    "schedule": {"kind": "adaptive", "sigma_multiplier": 2.0},
    "train": {"epochs": 200, "batch_size": 64, "eval_every": 20,
              "rank_subsets": 8, "rank_subset_size": 100},
}

def run(kind, seed, overrides=None):
    raw = json.loads(json.dumps(BASE))
    raw["loss"]["kind"] = kind
    raw["train"]["seed"] = seed
    for k, v in (overrides or {}).items():
        sec, key = k.split(".")
        raw[sec][key] = v
    cfg = TrainConfig.from_dict(raw)
    t0 = time.time()
    rows, summary, state = run_training(cfg)
    dt = time.time() - t0
    return rows, dt

def report(rows, label):
    by_epoch = {r["epoch"]: r for r in rows}
    e20, e200 = by_epoch[20], by_epoch[200]
    print(f"== {label}")
    print(f"  rank@20  super={e20['rankme_super']:.3f} rand={e20['rankme_random']:.3f} gap={e20['rankme_random']-e20['rankme_super']:.3f}")
    print(f"  rank@200 super={e200['rankme_super']:.3f} rand={e200['rankme_random']:.3f} gap={e200['rankme_random']-e200['rankme_super']:.3f}")
    print(f"  thr@20={e20['threshold']:.4f} thr@200={e200['threshold']:.4f}  H@20={e20['mean_H_size']:.3f} H@200={e200['mean_H_size']:.3f}")
    print(f"  skew_super@20={e20['skew_super']} @200={e200['skew_super']}")
    print(f"  prec@200={e200['mask_precision']:.3f} size@200={e200['mask_size']:.3f}")
    print(f"  knn_super@200={e200['knn_super']:.3f} knn_class@200={e200['knn_class']:.3f}")
    sys.stdout.flush()
    return e20, e200

if __name__ == "__main__":
    overrides = json.loads(sys.argv[1]) if len(sys.argv) > 1 else {}
    hex_overrides = json.loads(sys.argv[2]) if len(sys.argv) > 2 else {}
    for seed in (1, 2, 3):
        rows_b, dt_b = run("simclr", seed, overrides)
        b20, b200 = report(rows_b, f"simclr seed {seed} ({dt_b:.0f}s)")
        rows_h, dt_h = run("simclr_hex", seed, {**overrides, **hex_overrides})
        h20, h200 = report(rows_h, f"simclr_hex seed {seed} ({dt_h:.0f}s)")
        print(f"#6 hex rank_super {h200['rankme_super']:.3f} vs base {b200['rankme_super']:.3f} -> {'PASS' if h200['rankme_super'] > b200['rankme_super'] else 'FAIL'}")
        print(f"#10 hex knn_super {h200['knn_super']:.3f} vs base {b200['knn_super']:.3f} -> {'PASS' if h200['knn_super'] >= b200['knn_super'] else 'FAIL'}")
        print()
