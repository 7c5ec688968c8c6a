"""Training loop, accuracy evaluation, and bit-exact checkpoints.

Every robustness experiment starts from a checkpoint produced here. The
checkpoint container stores each parameter's raw 32-bit pattern so fault
experiments (which may create NaN/Inf payloads) survive a save/load round
trip bit-exactly.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DTYPE, GradientTape, Tensor, softmax_cross_entropy
from .errors import FormatError, TrainingDivergedError, VersionError
from .model import ModelConfig, SsmClassifier, decide_labels
from .rng import derive_seed, make_rng

MAGIC = b"SSMF"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 50
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class Checkpoint:
    version: int
    model_cfg: ModelConfig
    params: dict
    meta: dict = field(default_factory=dict)


def batch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def predict_split(model: SsmClassifier, params: dict, split, batch_size: int = 128):
    """Per-sample predicted labels over a split, in canonical order."""
    images = split.images.data
    preds = np.empty(len(split.labels), dtype=np.int64)
    nonfinite = 0
    for sl in batch_slices(images.shape[0], batch_size):
        logits = model.forward(params, Tensor(images[sl]))
        labels, n_nan = decide_labels(logits.data)
        preds[sl] = labels
        nonfinite += n_nan
    return preds, nonfinite


def evaluate_accuracy(model: SsmClassifier, params: dict, split, batch_size: int = 128):
    """(fraction correct, all-NaN logit row count) on a split."""
    if len(split.labels) == 0:
        raise ValueError("split is empty")
    preds, nonfinite = predict_split(model, params, split, batch_size)
    return float((preds == split.labels).sum() / len(split.labels)), nonfinite


def _adam_step(params, grads, m_state, v_state, t, cfg: TrainConfig):
    b1, b2 = cfg.betas
    lr = DTYPE(cfg.learning_rate)
    eps = DTYPE(1e-8)
    corr1 = DTYPE(1.0 - b1**t)
    corr2 = DTYPE(1.0 - b2**t)
    for key, tensor in params.items():
        g = grads[tensor].data
        m = m_state[key] = DTYPE(b1) * m_state[key] + DTYPE(1 - b1) * g
        v = v_state[key] = DTYPE(b2) * v_state[key] + DTYPE(1 - b2) * (g * g)
        update = (m / corr1) / (np.sqrt(v / corr2) + eps)
        new = tensor.data - lr * update
        if cfg.weight_decay:
            new = new - lr * DTYPE(cfg.weight_decay) * tensor.data
        params[key] = Tensor(new)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_split, val_split) -> Checkpoint:
    """Adam on softmax cross-entropy; returns the best-validation checkpoint.

    Fully deterministic given the seed: initialization and per-epoch
    shuffling use derived Philox streams, and best-epoch ties resolve to the
    earlier epoch.
    """
    if len(train_split.labels) == 0 or len(val_split.labels) == 0:
        raise ValueError("train and validation splits must be non-empty")
    for split in (train_split, val_split):
        if split.labels.max(initial=0) >= model_cfg.num_classes:
            raise ValueError("split contains labels outside [0, num_classes)")

    model = SsmClassifier(model_cfg)
    params = model.init_params(derive_seed(train_cfg.seed, "init"))
    m_state = {k: np.zeros_like(t.data) for k, t in params.items()}
    v_state = {k: np.zeros_like(t.data) for k, t in params.items()}
    shuffle_rng = make_rng(derive_seed(train_cfg.seed, "shuffle"))

    images = train_split.images.data
    labels = train_split.labels
    n = images.shape[0]

    best_params = None
    best_acc = -1.0
    best_epoch = 0
    history = []
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        losses = []
        for sl in batch_slices(n, train_cfg.batch_size):
            idx = perm[sl.start : sl.stop]
            step += 1
            with GradientTape() as tape:
                for t in params.values():
                    tape.watch(t)
                logits = model.forward(params, Tensor(images[idx]))
                loss = softmax_cross_entropy(logits, labels[idx])
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingDivergedError(epoch, step)
                grads = tape.gradients(loss, list(params.values()))
            losses.append(loss_val)
            _adam_step(params, grads, m_state, v_state, step, train_cfg)

        val_acc, _ = evaluate_accuracy(model, params, val_split, train_cfg.batch_size)
        history.append([epoch, float(np.mean(losses)), val_acc])
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = {k: t.copy() for k, t in params.items()}

    meta = {
        "seed": train_cfg.seed,
        "epoch": best_epoch,
        "val_accuracy": best_acc,
        "epochs_run": train_cfg.epochs,
        "optimizer": f"adam({train_cfg.betas[0]},{train_cfg.betas[1]})",
        "learning_rate": train_cfg.learning_rate,
        "weight_decay": train_cfg.weight_decay,
        "batch_size": train_cfg.batch_size,
        "history": history,
    }
    return Checkpoint(CHECKPOINT_VERSION, model_cfg, best_params, meta)


# -- checkpoint container ---------------------------------------------------
#
# magic "SSMF" | u32 version | u32 header length | header JSON (model config +
# training metadata) | u32 entry count | entries, each:
#   u16 key length | key bytes | u8 ndim | u32 dims... | raw little-endian
#   32-bit payload
# All integers little-endian. Payload bytes are the exact in-memory patterns,
# so NaN payloads survive.


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = json.dumps(
        {"config": ckpt.model_cfg.to_dict(), "meta": ckpt.meta}, sort_keys=True
    ).encode()
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", ckpt.version)
    buf += struct.pack("<I", len(header))
    buf += header
    buf += struct.pack("<I", len(ckpt.params))
    for key, tensor in ckpt.params.items():
        kb = key.encode()
        buf += struct.pack("<H", len(kb))
        buf += kb
        buf += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            buf += struct.pack("<I", dim)
        buf += tensor.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})",
            offset=4,
        )
    header_len = r.u32("header length")
    header_bytes = r.take(header_len, "header")
    try:
        header = json.loads(header_bytes.decode())
        model_cfg = ModelConfig.from_dict(header["config"])
        meta = header["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}", offset=12) from exc

    count = r.u32("entry count")
    params = {}
    for _ in range(count):
        klen = r.u16("key length")
        key = r.take(klen, "key").decode()
        ndim = r.u8("ndim")
        shape = tuple(r.u32(f"dim of {key}") for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * size, f"payload of {key}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True)
        params[key] = Tensor(arr.reshape(shape))
    if r.pos != len(raw):
        raise FormatError("trailing bytes after last entry", offset=r.pos)
    return Checkpoint(version, model_cfg, params, meta)
