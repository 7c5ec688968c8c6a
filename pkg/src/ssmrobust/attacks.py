"""White-box input-space attacks with an l-infinity budget.

Both attacks perturb copies of the input (never in place), keep every output
inside the epsilon ball around the clean input, and clamp the final result to
valid pixel range. The single-step attack is bit-identical to the iterative
one run for a single step with step size epsilon.
"""

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import DTYPE, GradientTape, Tensor, softmax_cross_entropy
from .model import SsmClassifier, decide_labels
from .rng import derive_seed, make_rng
from .training import batch_slices, evaluate_accuracy

from .reporting import EvalReport, report_meta


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = 1
    alpha: float | None = None  # None derives 2.5 * epsilon / steps
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        alpha = self.resolved_alpha
        if self.epsilon > 0 and alpha <= 0:
            raise ValueError("alpha must be > 0 for a non-degenerate attack")
        if self.steps > 1 and alpha > 2 * self.epsilon:
            raise ValueError("alpha must satisfy alpha <= 2*epsilon when steps > 1")

    @property
    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.epsilon / self.steps


def input_gradient(model: SsmClassifier, params: dict, x: Tensor, labels) -> np.ndarray:
    """Gradient of the task loss with respect to the input pixels."""
    with GradientTape() as tape:
        tape.watch(x)
        logits = model.forward(params, x)
        loss = softmax_cross_entropy(logits, labels)
        grads = tape.gradients(loss, [x])
    return grads[x].data


def fgsm(model: SsmClassifier, params: dict, x: Tensor, labels, cfg: AttackConfig) -> Tensor:
    """Single signed-gradient step of size epsilon, clamped to [0, 1]."""
    grad = input_gradient(model, params, x, labels)
    eps = DTYPE(cfg.epsilon)
    adv = np.clip(x.data + eps * np.sign(grad), DTYPE(0.0), DTYPE(1.0))
    return Tensor(adv)


def pgd(model: SsmClassifier, params: dict, x: Tensor, labels, cfg: AttackConfig) -> Tensor:
    """Iterated signed-gradient steps projected onto the epsilon ball."""
    eps = DTYPE(cfg.epsilon)
    alpha = DTYPE(cfg.resolved_alpha)
    x0 = x.data
    lo = x0 - eps
    hi = x0 + eps
    if cfg.random_start:
        rng = make_rng(derive_seed(cfg.seed, "pgd_start"))
        start = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape).astype(DTYPE)
        xt = np.clip(x0 + start, DTYPE(0.0), DTYPE(1.0))
    else:
        xt = x0.copy()
    for _ in range(cfg.steps):
        grad = input_gradient(model, params, Tensor(xt), labels)
        xt = np.clip(xt + alpha * np.sign(grad), lo, hi)
    return Tensor(np.clip(xt, DTYPE(0.0), DTYPE(1.0)))


_ATTACKS = {"fgsm": fgsm, "pgd": pgd}


def attacked_accuracy(model, params, split, attack_name, cfg, batch_size=128):
    """Accuracy on adversarial versions of a split, plus all-NaN row count."""
    attack = _ATTACKS[attack_name]
    images = split.images.data
    labels = split.labels
    correct = 0
    nonfinite = 0
    for sl in batch_slices(images.shape[0], batch_size):
        adv = attack(model, params, Tensor(images[sl]), labels[sl], cfg)
        logits = model.forward(params, adv)
        preds, n_nan = decide_labels(logits.data)
        correct += int((preds == labels[sl]).sum())
        nonfinite += n_nan
    return correct / len(labels), nonfinite


def epsilon_sweep(model, params, split, eps_list, cfg: AttackConfig,
                  batch_size=128, attacks=("fgsm", "pgd"), meta=None) -> EvalReport:
    """Accuracy records for each attack at each epsilon, plus a clean row."""
    eps_list = [float(e) for e in eps_list]
    if eps_list != sorted(eps_list):
        raise ValueError("eps_list must be sorted ascending")
    for name in attacks:
        if name not in _ATTACKS:
            raise ValueError(f"unknown attack {name!r}")

    n = len(split.labels)
    clean_acc, clean_nf = evaluate_accuracy(model, params, split, batch_size)
    rows = [("clean", 0.0, clean_acc, n, clean_nf)]
    for name in attacks:
        for eps in eps_list:
            run_cfg = replace(cfg, epsilon=eps)
            acc, nf = attacked_accuracy(model, params, split, name, run_cfg, batch_size)
            rows.append((name, eps, acc, n, nf))
    return EvalReport("whitebox", rows=rows, meta=report_meta("whitebox", meta))
