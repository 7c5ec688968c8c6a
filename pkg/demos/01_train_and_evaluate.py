"""Train the compact SSM classifier on synthetic data and evaluate it.

The synthetic set renders one deterministic template per class (bars, disks,
checkerboards) plus pixel noise, so a few epochs suffice. Everything is
seeded: run this twice and you get bit-identical checkpoints.
"""

import time

from ssmrobust import (
    ModelConfig,
    SsmClassifier,
    TrainConfig,
    evaluate_accuracy,
    save_checkpoint,
    synthetic_splits,
    train,
)

train_split, val_split, test_split = synthetic_splits(
    classes=4, samples_per_class=100, image_size=28, seed=7
)
print(f"splits: train={len(train_split)} val={len(val_split)} test={len(test_split)}")

model_cfg = ModelConfig(num_classes=4)
print(f"stage dims: {model_cfg.stage_dims}, state dim: {model_cfg.state_dim}")

t0 = time.perf_counter()
ckpt = train(model_cfg, TrainConfig(epochs=4, batch_size=50, seed=7),
             train_split, val_split)
print(f"trained in {time.perf_counter() - t0:.1f}s")

for epoch, loss, val_acc in ckpt.meta["history"]:
    print(f"  epoch {epoch}: mean loss {loss:.4f}, val accuracy {val_acc:.3f}")
print(f"best epoch: {ckpt.meta['epoch']} (val accuracy {ckpt.meta['val_accuracy']:.3f})")

model = SsmClassifier(ckpt.model_cfg)
test_acc, nonfinite = evaluate_accuracy(model, ckpt.params, test_split)
print(f"test accuracy: {test_acc:.3f} ({nonfinite} non-finite logit rows)")

save_checkpoint(ckpt, "demo_model.ckpt")
print("checkpoint written to demo_model.ckpt (used by the other demos)")
