"""Non-adversarial input degradations: patch occlusion, noise, and blur.

All operators are pure functions of (input, seed); severity indexes a
schedule of progressively stronger parameters. Outputs always stay in [0, 1].
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DTYPE, Tensor
from .errors import GridError
from .model import decide_labels
from .reporting import EvalReport, report_meta
from .rng import derive_seed, make_rng
from .training import batch_slices, evaluate_accuracy


@dataclass(frozen=True)
class PatchGrid:
    """Occlusion protocol: drop floor(ratio * grid_n^2) patches to baseline."""

    ratio: float
    grid_n: int = 4
    baseline: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")
        if self.grid_n < 1:
            raise ValueError("grid_n must be >= 1")

    @property
    def num_patches(self) -> int:
        return self.grid_n * self.grid_n

    @property
    def num_dropped(self) -> int:
        return int(math.floor(self.ratio * self.num_patches))


def patch_drop(x, grid: PatchGrid) -> Tensor:
    """Replace a seeded random set of non-overlapping patches with baseline.

    Exactly ``grid.num_dropped`` distinct patches change across all channels;
    every other pixel is bit-identical to the input.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
    if arr.ndim != 3:
        raise GridError(f"patch_drop expects one [C,H,W] image, got shape {arr.shape}")
    _, h, w = arr.shape
    if h % grid.grid_n or w % grid.grid_n:
        raise GridError(
            f"image sides {h}x{w} are not divisible by grid_n={grid.grid_n}"
        )
    ph, pw = h // grid.grid_n, w // grid.grid_n
    rng = make_rng(grid.seed)
    chosen = rng.permutation(grid.num_patches)[: grid.num_dropped]
    out = arr.copy()
    fill = DTYPE(grid.baseline)
    for p in chosen:
        r0 = (int(p) // grid.grid_n) * ph
        c0 = (int(p) % grid.grid_n) * pw
        out[:, r0 : r0 + ph, c0 : c0 + pw] = fill
    return Tensor(out)


DEFAULT_NOISE_SIGMAS = (0.04, 0.08, 0.12, 0.18, 0.26)
DEFAULT_BLUR_STDS = (0.5, 1.0, 1.5, 2.0, 2.5)


@dataclass(frozen=True)
class SeveritySchedule:
    """Severity-indexed corruption parameters (index 1 is mildest).

    Schedules are strictly increasing; ``strict=False`` admits degenerate
    all-zero schedules used to verify that zero severity is the identity.
    """

    noise_sigmas: tuple = DEFAULT_NOISE_SIGMAS
    blur_stds: tuple = DEFAULT_BLUR_STDS
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "noise_sigmas", tuple(float(v) for v in self.noise_sigmas))
        object.__setattr__(self, "blur_stds", tuple(float(v) for v in self.blur_stds))
        if len(self.noise_sigmas) != len(self.blur_stds):
            raise ValueError("noise and blur schedules must have equal length")
        if self.strict:
            for name, seq in (("noise", self.noise_sigmas), ("blur", self.blur_stds)):
                if any(b <= a for a, b in zip(seq, seq[1:])):
                    raise ValueError(f"{name} schedule must be strictly increasing")

    @property
    def levels(self) -> int:
        return len(self.noise_sigmas)

    def _check(self, severity: int):
        if not 1 <= severity <= self.levels:
            raise ValueError(f"severity must lie in [1, {self.levels}]")


DEFAULT_SCHEDULE = SeveritySchedule()


def noise_field(shape, severity: int, seed: int, schedule: SeveritySchedule = DEFAULT_SCHEDULE):
    """The pre-clip additive noise draw for one corruption call (float64)."""
    schedule._check(severity)
    sigma = schedule.noise_sigmas[severity - 1]
    rng = make_rng(seed)
    return rng.normal(0.0, sigma, size=shape)


def gaussian_noise(x, severity: int, seed: int,
                   schedule: SeveritySchedule = DEFAULT_SCHEDULE) -> Tensor:
    """Additive seeded Gaussian noise, clipped back into [0, 1]."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
    eta = noise_field(arr.shape, severity, seed, schedule)
    out = np.clip(arr.astype(np.float64) + eta, 0.0, 1.0)
    return Tensor(out.astype(DTYPE))


def blur_kernel(std: float) -> np.ndarray:
    """2-D Gaussian kernel of size 2*ceil(3*std)+1, normalized to sum 1."""
    if std <= 0.0:
        return np.ones((1, 1), dtype=np.float64)
    half = int(math.ceil(3.0 * std))
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(coords**2) / (2.0 * std * std))
    k = np.outer(g1, g1)
    return k / k.sum()


def blur(x, severity: int, schedule: SeveritySchedule = DEFAULT_SCHEDULE) -> Tensor:
    """Gaussian blur per channel with reflect padding; output size preserved."""
    schedule._check(severity)
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
    kernel = blur_kernel(schedule.blur_stds[severity - 1])
    kh, kw = kernel.shape
    if kh == 1 and kw == 1:
        return Tensor(arr.copy())
    h, w = arr.shape[-2], arr.shape[-1]
    ph, pw = kh // 2, kw // 2
    pad = [(0, 0)] * (arr.ndim - 2) + [(ph, ph), (pw, pw)]
    # edge-including reflection conserves the global mean exactly
    padded = np.pad(arr.astype(np.float64), pad, mode="symmetric")
    out = np.zeros(arr.shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[..., i : i + h, j : j + w]
    return Tensor(np.clip(out, 0.0, 1.0).astype(DTYPE))


def patchdrop_sweep(model, params, split, ratios, grid_n=4, baseline=0.0,
                    seed=0, batch_size=128, meta=None) -> EvalReport:
    """Accuracy at each drop ratio; per-image drop sets use derived seeds."""
    n = len(split.labels)
    clean_acc, clean_nf = evaluate_accuracy(model, params, split, batch_size)
    rows = [("clean", 0.0, clean_acc, n, clean_nf)]
    for ratio in ratios:
        images = np.empty_like(split.images.data)
        for i in range(n):
            grid = PatchGrid(float(ratio), grid_n, baseline,
                             derive_seed(seed, "patchdrop", ratio, i))
            images[i] = patch_drop(split.images.data[i], grid).data
        acc, nf = _corrupted_accuracy(model, params, images, split.labels, batch_size)
        rows.append(("patchdrop", float(ratio), acc, n, nf))
    return EvalReport("patchdrop", rows=rows, meta=report_meta("patchdrop", meta))


def _corrupted_accuracy(model, params, images, labels, batch_size):
    correct = 0
    nonfinite = 0
    for sl in batch_slices(images.shape[0], batch_size):
        logits = model.forward(params, Tensor(images[sl]))
        preds, n_nan = decide_labels(logits.data)
        correct += int((preds == labels[sl]).sum())
        nonfinite += n_nan
    return correct / len(labels), nonfinite


def corruption_sweep(model, params, split, schedule: SeveritySchedule = DEFAULT_SCHEDULE,
                     seed: int = 0, batch_size: int = 128, meta=None) -> EvalReport:
    """Clean accuracy plus one cell per (family, severity) pair."""
    n = len(split.labels)
    clean_acc, clean_nf = evaluate_accuracy(model, params, split, batch_size)
    rows = [("clean", 0, clean_acc, n, clean_nf)]
    for severity in range(1, schedule.levels + 1):
        noisy = np.empty_like(split.images.data)
        for i in range(n):
            noisy[i] = gaussian_noise(
                split.images.data[i], severity,
                derive_seed(seed, "noise", severity, i), schedule
            ).data
        acc, nf = _corrupted_accuracy(model, params, noisy, split.labels, batch_size)
        rows.append(("noise", severity, acc, n, nf))
    for severity in range(1, schedule.levels + 1):
        blurred = blur(split.images.data, severity, schedule).data
        acc, nf = _corrupted_accuracy(model, params, blurred, split.labels, batch_size)
        rows.append(("blur", severity, acc, n, nf))
    return EvalReport("corruption", rows=rows, meta=report_meta("corruption", meta))
