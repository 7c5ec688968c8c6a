"""Dataset ingestion: NPY/NPZ parsing and deterministic synthetic data.

The NPY/NPZ reader is self-contained (ZIP container walked by hand, raw
deflate via zlib, CRC-checked) and supports exactly the three dtypes the
medical-MNIST-style archives ship: ``|u1``, ``<i8``, ``<f4``.
"""

import ast
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, SchemaError
from .rng import derive_seed, make_rng

_NPY_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCR = {"|u1": np.uint8, "<i8": np.int64, "<f4": np.float32}


@dataclass
class Dataset:
    images: Tensor  # [S, C, H, W] in [0, 1]
    labels: np.ndarray  # int64 [S]
    split: str
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise SchemaError(f"images must be 4-D, got shape {self.images.shape}")
        s = self.images.shape[0]
        if s < 1:
            raise SchemaError("dataset must contain at least one sample")
        if self.labels.shape != (s,):
            raise SchemaError(
                f"label count {self.labels.shape} does not match {s} images"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise SchemaError("labels outside [0, num_classes)")
        lo, hi = float(self.images.data.min()), float(self.images.data.max())
        if lo < 0.0 or hi > 1.0:
            raise SchemaError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, index) -> "Dataset":
        return Dataset(
            Tensor(self.images.data[index]), self.labels[index], self.split, self.num_classes
        )


@dataclass
class NpyArray:
    descr: str
    shape: tuple
    fortran_order: bool
    data: np.ndarray


def parse_npy(raw: bytes) -> NpyArray:
    """Parse one NPY v1.0/v2.0 byte stream."""
    if len(raw) < 8 or raw[:6] != _NPY_MAGIC:
        raise FormatError("bad NPY magic", offset=0)
    major, minor = raw[6], raw[7]
    if (major, minor) == (1, 0):
        if len(raw) < 10:
            raise FormatError("truncated NPY header length", offset=8)
        (hlen,) = struct.unpack("<H", raw[8:10])
        body = 10
    elif (major, minor) == (2, 0):
        if len(raw) < 12:
            raise FormatError("truncated NPY header length", offset=8)
        (hlen,) = struct.unpack("<I", raw[8:12])
        body = 12
    else:
        raise FormatError(f"unsupported NPY version {major}.{minor}", offset=6)

    if body + hlen > len(raw):
        raise FormatError("truncated NPY header", offset=body)
    try:
        header = ast.literal_eval(raw[body : body + hlen].decode("latin1"))
        descr = header["descr"]
        fortran_order = header["fortran_order"]
        shape = tuple(int(d) for d in header["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed NPY header dict: {exc}", offset=body) from exc

    if descr not in _SUPPORTED_DESCR:
        raise FormatError(f"unsupported dtype descriptor {descr!r}", offset=body)
    if fortran_order:
        raise FormatError("fortran-order layout not supported", offset=body)

    dtype = np.dtype(_SUPPORTED_DESCR[descr]).newbyteorder("<")
    count = 1
    for d in shape:
        count *= d
    start = body + hlen
    expected = count * dtype.itemsize
    if len(raw) - start != expected:
        raise FormatError(
            f"payload length {len(raw) - start} does not match shape {shape} "
            f"({expected} bytes expected)",
            offset=start,
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    data = data.astype(_SUPPORTED_DESCR[descr], copy=True).reshape(shape)
    return NpyArray(descr, shape, bool(fortran_order), data)


def _find_eocd(raw: bytes) -> int:
    probe = max(0, len(raw) - 22 - 65535)
    pos = raw.rfind(b"PK\x05\x06", probe)
    if pos < 0:
        raise FormatError("not a ZIP container (no end-of-central-directory record)")
    return pos


def parse_npz(source) -> dict:
    """Parse every member of an NPZ (ZIP of NPY files) into arrays.

    ``source`` may be a path or raw bytes. Member names are exposed without
    the ``.npy`` suffix. Stored and deflated members are supported; every
    member is CRC-checked.
    """
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        with open(source, "rb") as f:
            raw = f.read()

    eocd = _find_eocd(raw)
    count, _cd_size, cd_offset = struct.unpack("<HII", raw[eocd + 10 : eocd + 20])

    members = {}
    pos = cd_offset
    for _ in range(count):
        if raw[pos : pos + 4] != b"PK\x01\x02":
            raise FormatError("bad central directory entry signature", offset=pos)
        (
            method,
            crc,
            csize,
            usize,
            name_len,
            extra_len,
            comment_len,
        ) = struct.unpack("<H4xIIIHHH", raw[pos + 10 : pos + 34])
        flags = struct.unpack("<H", raw[pos + 8 : pos + 10])[0]
        local_off = struct.unpack("<I", raw[pos + 42 : pos + 46])[0]
        name = raw[pos + 46 : pos + 46 + name_len].decode()
        pos += 46 + name_len + extra_len + comment_len

        if flags & 0x1:
            raise FormatError("encrypted member not supported", member=name)
        if method not in (0, 8):
            raise FormatError(f"unsupported compression method {method}", member=name)

        if raw[local_off : local_off + 4] != b"PK\x03\x04":
            raise FormatError("bad local header signature", member=name, offset=local_off)
        lname_len, lextra_len = struct.unpack(
            "<HH", raw[local_off + 26 : local_off + 30]
        )
        data_start = local_off + 30 + lname_len + lextra_len
        blob = raw[data_start : data_start + csize]
        if len(blob) != csize:
            raise FormatError("truncated member data", member=name, offset=data_start)
        if method == 8:
            try:
                payload = zlib.decompress(blob, -15)
            except zlib.error as exc:
                raise FormatError(f"deflate stream error: {exc}", member=name) from exc
        else:
            payload = blob
        if len(payload) != usize:
            raise FormatError(
                f"decompressed size {len(payload)} != declared {usize}", member=name
            )
        if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
            raise FormatError("CRC mismatch", member=name)

        key = name[:-4] if name.endswith(".npy") else name
        try:
            members[key] = parse_npy(payload)
        except FormatError as exc:
            raise FormatError(f"invalid NPY member: {exc}", member=name) from exc
    return members


_SPLIT_MEMBERS = (
    ("train", "train_images", "train_labels"),
    ("val", "val_images", "val_labels"),
    ("test", "test_images", "test_labels"),
)


def _to_image_stack(arr: np.ndarray, member: str) -> np.ndarray:
    if arr.dtype == np.uint8:
        scaled = arr.astype(np.float32) / np.float32(255.0)
    elif arr.dtype == np.float32:
        scaled = arr
    else:
        raise SchemaError(f"{member}: unsupported image dtype {arr.dtype}")
    if scaled.ndim == 3:  # grayscale S,H,W
        return scaled[:, None, :, :]
    if scaled.ndim == 4 and scaled.shape[-1] in (1, 3):  # S,H,W,C channels-last
        return np.ascontiguousarray(scaled.transpose(0, 3, 1, 2))
    raise SchemaError(f"{member}: unexpected image shape {arr.shape}")


def load_medmnist(path):
    """Load the six-member archive layout into (train, val, test) datasets.

    Images are scaled from uint8 into [0, 1]; grayscale stacks gain a channel
    axis; S x 1 label columns are squeezed to length-S vectors.
    """
    members = parse_npz(path)
    splits = {}
    max_label = -1
    for split, im_name, lb_name in _SPLIT_MEMBERS:
        for need in (im_name, lb_name):
            if need not in members:
                raise SchemaError(f"archive is missing member {need!r}")
        images = _to_image_stack(members[im_name].data, im_name)
        labels = members[lb_name].data
        if labels.ndim == 2 and labels.shape[1] == 1:
            labels = labels[:, 0]
        if labels.ndim != 1:
            raise SchemaError(f"{lb_name}: unexpected label shape {labels.shape}")
        labels = labels.astype(np.int64)
        if labels.shape[0] != images.shape[0]:
            raise SchemaError(
                f"{split}: {images.shape[0]} images but {labels.shape[0]} labels"
            )
        splits[split] = (images, labels)
        max_label = max(max_label, int(labels.max()))

    num_classes = max_label + 1
    return tuple(
        Dataset(Tensor(images), labels, split, num_classes)
        for split, (images, labels) in splits.items()
    )


# -- synthetic data ----------------------------------------------------------

_BACKGROUND = 0.1
_AMPLITUDE = 0.5
_NOISE_SIGMA = 0.05


def _class_pattern(c: int, size: int) -> np.ndarray:
    """Deterministic template for class c: bar / disk / checker families."""
    ys, xs = np.meshgrid(
        np.linspace(-1.0, 1.0, size), np.linspace(-1.0, 1.0, size), indexing="ij"
    )
    kind, variant = c % 3, c // 3
    if kind == 0:  # oriented bar through the center
        theta = (variant % 2) * (np.pi / 2) + (variant // 2) * (np.pi / 4)
        dist = np.abs(-np.sin(theta) * xs + np.cos(theta) * ys)
        mask = dist < 0.22
    elif kind == 1:  # centered disk, radius indexed by variant
        radius = 0.38 + 0.18 * variant
        mask = (xs**2 + ys**2) < radius**2
    else:  # checkerboard, frequency indexed by variant
        freq = 2 + variant
        mask = (np.sin(np.pi * freq * xs) * np.sin(np.pi * freq * ys)) > 0
    return _BACKGROUND + _AMPLITUDE * mask.astype(np.float64)


def synthetic_dataset(
    classes: int,
    samples_per_class: int,
    image_size: int = 28,
    seed: int = 0,
    split: str = "train",
) -> Dataset:
    """Balanced dataset of noisy class templates, deterministic given seed."""
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = make_rng(seed)
    total = classes * samples_per_class
    images = np.empty((total, 1, image_size, image_size), dtype=np.float32)
    labels = np.empty(total, dtype=np.int64)
    i = 0
    for c in range(classes):
        template = _class_pattern(c, image_size)
        for _ in range(samples_per_class):
            noisy = template + rng.normal(0.0, _NOISE_SIGMA, size=template.shape)
            images[i, 0] = np.clip(noisy, 0.0, 1.0).astype(np.float32)
            labels[i] = c
            i += 1
    perm = rng.permutation(total)
    return Dataset(Tensor(images[perm]), labels[perm], split, classes)


def synthetic_splits(
    classes: int, samples_per_class: int, image_size: int = 28, seed: int = 0
):
    """(train, val, test) datasets; val/test hold a quarter of train's size."""
    eval_per_class = max(1, samples_per_class // 4)
    train = synthetic_dataset(
        classes, samples_per_class, image_size, derive_seed(seed, "train"), "train"
    )
    val = synthetic_dataset(
        classes, eval_per_class, image_size, derive_seed(seed, "val"), "val"
    )
    test = synthetic_dataset(
        classes, eval_per_class, image_size, derive_seed(seed, "test"), "test"
    )
    return train, val, test
