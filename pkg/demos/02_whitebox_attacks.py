"""White-box attacks: single-step vs iterated signed-gradient inside an
l-infinity ball.

Expected picture: accuracy falls as epsilon grows, and the iterated attack
is at least as strong as the single-step one at every epsilon.
"""

import os

from ssmrobust import (
    AttackConfig,
    SsmClassifier,
    epsilon_sweep,
    load_checkpoint,
    synthetic_splits,
)

if not os.path.exists("demo_model.ckpt"):
    raise SystemExit("run demos/01_train_and_evaluate.py first")

ckpt = load_checkpoint("demo_model.ckpt")
model = SsmClassifier(ckpt.model_cfg)
_, _, test_split = synthetic_splits(4, 100, 28, seed=7)

eps_list = [1 / 255, 2 / 255, 4 / 255, 8 / 255]
cfg = AttackConfig(epsilon=max(eps_list), steps=20)  # alpha defaults to 2.5*eps/steps
report = epsilon_sweep(model, ckpt.params, test_split, eps_list, cfg, batch_size=100)

clean = report.condition_rows("clean")[0][2]
print(f"clean accuracy: {clean:.3f}\n")
print(f"{'epsilon':>10} {'fgsm':>8} {'pgd':>8}")
fgsm_rows = report.condition_rows("fgsm")
pgd_rows = report.condition_rows("pgd")
for f_row, p_row in zip(fgsm_rows, pgd_rows):
    print(f"{f_row[1]:>10.5f} {f_row[2]:>8.3f} {p_row[2]:>8.3f}")

print("\nevery adversarial output stays inside the epsilon ball and in [0, 1];")
print("with steps=1 and alpha=epsilon the two attacks are bit-identical.")
