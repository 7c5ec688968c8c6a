"""Occlusion and acquisition-style corruptions.

Patch occlusion replaces floor(ratio * 16) of the 4x4 patch grid with a
baseline value; noise and blur follow a 5-level severity schedule.
"""

import os

from ssmrobust import (
    SsmClassifier,
    corruption_sweep,
    load_checkpoint,
    synthetic_splits,
)
from ssmrobust.corruptions import patchdrop_sweep

if not os.path.exists("demo_model.ckpt"):
    raise SystemExit("run demos/01_train_and_evaluate.py first")

ckpt = load_checkpoint("demo_model.ckpt")
model = SsmClassifier(ckpt.model_cfg)
_, _, test_split = synthetic_splits(4, 100, 28, seed=7)

ratios = [0.0, 0.0625, 0.1875, 0.25, 0.375, 0.5, 0.5625]
report = patchdrop_sweep(model, ckpt.params, test_split, ratios, seed=1, batch_size=100)
print("patch occlusion (ratio of 16 patches dropped -> accuracy):")
for row in report.condition_rows("patchdrop"):
    dropped = int(row[1] * 16)
    print(f"  {row[1]:>7.4f} ({dropped:2d} patches) -> {row[2]:.3f}")

report = corruption_sweep(model, ckpt.params, test_split, seed=1, batch_size=100)
print("\ncorruptions (severity 1..5):")
noise = [r[2] for r in report.condition_rows("noise")]
blur = [r[2] for r in report.condition_rows("blur")]
print("  noise:", "  ".join(f"{a:.3f}" for a in noise))
print("  blur: ", "  ".join(f"{a:.3f}" for a in blur))
print(f"  clean: {report.condition_rows('clean')[0][2]:.3f}")
