"""Bit-flip fault injection: from single-value semantics to full drivers.

Shows the XOR flip operator, per-group sensitivity, and the worst-case
random-search adversary that usually finds one exponent flip collapsing the
model.
"""

import os

import numpy as np

from ssmrobust import (
    SsmClassifier,
    flip_bit,
    generate_plan,
    apply_plan,
    layerwise_bitflip_eval,
    load_checkpoint,
    random_bitflip_eval,
    synthetic_splits,
    worstcase_bitflip_search,
)

if not os.path.exists("demo_model.ckpt"):
    raise SystemExit("run demos/01_train_and_evaluate.py first")

print("value-level semantics of a 32-bit flip:")
print(f"  flip_bit(1.0, 31) = {flip_bit(1.0, 31)}   (sign bit)")
print(f"  flip_bit(1.0, 30) = {flip_bit(1.0, 30)}   (top exponent bit)")
print(f"  flip_bit(1.0,  0) = {flip_bit(1.0, 0):.9f} (lowest mantissa bit)")

ckpt = load_checkpoint("demo_model.ckpt")
model = SsmClassifier(ckpt.model_cfg)
_, _, test_split = synthetic_splits(4, 100, 28, seed=7)

plan = generate_plan(ckpt.params, budget=4, region="any", seed=1235)
print("\na 4-flip plan (key, element, bit):")
for line in plan.manifest_lines():
    print("  " + line.replace("\t", "  "))
restored = apply_plan(apply_plan(ckpt.params, plan), plan)
same = all(
    np.array_equal(restored[k].data.view(np.uint32), ckpt.params[k].data.view(np.uint32))
    for k in ckpt.params
)
print(f"applying the plan twice restores the tree bit-exactly: {same}")

baseline, stats = random_bitflip_eval(model, ckpt.params, test_split,
                                      budgets=[1, 2, 4, 8, 16], trials=5,
                                      batch_size=100)
print(f"\nrandom flips anywhere (baseline {baseline:.3f}):")
for s in stats:
    print(f"  K={s.budget:2d}: mean {s.mean:.3f} +- {s.std:.3f}")

_, layer_stats = layerwise_bitflip_eval(model, ckpt.params, test_split,
                                        budgets=[8], trials=5, batch_size=100)
print("\nK=8 flips restricted to one group at a time:")
for s in sorted(layer_stats, key=lambda s: s.mean):
    print(f"  {s.group:16s} mean {s.mean:.3f}")

_, results = worstcase_bitflip_search(model, ckpt.params, test_split,
                                      budgets=[1], region="exponent",
                                      iterations=100, fast_batches=1,
                                      batch_size=100)
worst = results[0]
print(f"\nworst single exponent flip over 100 candidates: seed {worst.seed}, "
      f"full accuracy {worst.full_accuracy:.3f} (baseline {baseline:.3f})")
