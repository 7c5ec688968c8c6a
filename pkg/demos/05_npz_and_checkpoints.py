"""File formats: the self-contained NPY/NPZ reader and bit-exact checkpoints.

Builds a six-member archive in the standard layout, parses it without numpy's
loader, and demonstrates that checkpoints preserve raw bit patterns.
"""

import io
import os
import zipfile

import numpy as np

from ssmrobust import load_checkpoint, load_medmnist, parse_npz, save_checkpoint

rng = np.random.Generator(np.random.Philox(key=5))

# build an archive in memory with numpy's own writer, then parse it ourselves
members = {}
for split, n in (("train", 12), ("val", 4), ("test", 6)):
    members[f"{split}_images"] = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    members[f"{split}_labels"] = (np.arange(n) % 3).astype(np.int64)[:, None]

archive = io.BytesIO()
np.savez_compressed(archive, **members)
path = "demo_dataset.npz"
with open(path, "wb") as f:
    f.write(archive.getvalue())

parsed = parse_npz(path)
print("members:", ", ".join(sorted(parsed)))
print("train_images:", parsed["train_images"].descr, parsed["train_images"].shape)

train, val, test = load_medmnist(path)
print(f"datasets: train={len(train)} val={len(val)} test={len(test)}, "
      f"{train.num_classes} classes, pixels in [{train.images.data.min():.2f}, "
      f"{train.images.data.max():.2f}]")

with zipfile.ZipFile(path) as zf:
    print("zip members checked against stdlib reader:", zf.namelist()[:2], "...")

if os.path.exists("demo_model.ckpt"):
    ckpt = load_checkpoint("demo_model.ckpt")
    # poison one value with a NaN payload and show it survives a round trip
    raw = ckpt.params["classifier_head.weight"].data.reshape(-1).view(np.uint32)
    raw[0] = np.uint32(0x7FC00123)
    save_checkpoint(ckpt, "demo_faulted.ckpt")
    back = load_checkpoint("demo_faulted.ckpt")
    pattern = back.params["classifier_head.weight"].data.reshape(-1).view(np.uint32)[0]
    print(f"NaN payload after checkpoint round trip: 0x{int(pattern):08X}")
else:
    print("run demos/01_train_and_evaluate.py to also see the checkpoint round trip")
