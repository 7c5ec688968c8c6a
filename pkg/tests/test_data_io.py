import io
import zipfile

import numpy as np
import pytest

from ssmrobust.data import (
    Dataset,
    load_medmnist,
    parse_npy,
    parse_npz,
    synthetic_dataset,
    synthetic_splits,
)
from ssmrobust.errors import FormatError, SchemaError

from _oracles import nearest_centroid_accuracy, write_npy, write_zip


def _medmnist_fixture(tmp_path, n=10, classes=3, rgb=False, compress=True,
                      label_shape="column"):
    rng = np.random.Generator(np.random.Philox(key=77))
    shape = (n, 6, 6, 3) if rgb else (n, 6, 6)
    members = []
    for split in ("train", "val", "test"):
        images = rng.integers(0, 256, size=shape, dtype=np.uint8)
        labels = (np.arange(n, dtype=np.int64) % classes)
        if label_shape == "column":
            labels = labels[:, None]
        members.append((f"{split}_images.npy", write_npy(images)))
        members.append((f"{split}_labels.npy", write_npy(labels)))
    path = tmp_path / "fixture.npz"
    path.write_bytes(write_zip(members, compress=compress))
    return path


class TestParseNpy:
    def test_handcrafted_128_byte_scalar(self):
        raw = write_npy(np.array(7, dtype=np.uint8), total_size=128)
        assert len(raw) == 128
        arr = parse_npy(raw)
        assert arr.shape == () and arr.descr == "|u1"
        assert arr.data[()] == 7

    def test_round_trip_against_independent_writer(self, rng):
        payload = rng.integers(0, 256, size=(3, 4), dtype=np.uint8)
        arr = parse_npy(write_npy(payload))
        assert np.array_equal(arr.data, payload)
        assert arr.data.tobytes() == payload.tobytes()

    @pytest.mark.parametrize("dtype", [np.uint8, np.int64, np.float32])
    def test_matches_numpy_save(self, dtype, rng):
        data = rng.normal(size=(2, 5)).astype(dtype) if dtype == np.float32 else \
            rng.integers(0, 100, size=(2, 5)).astype(dtype)
        buf = io.BytesIO()
        np.save(buf, data)
        arr = parse_npy(buf.getvalue())
        assert np.array_equal(arr.data, data)
        assert arr.data.dtype == dtype

    def test_version_2_header(self):
        payload = np.arange(6, dtype=np.int64).reshape(2, 3)
        arr = parse_npy(write_npy(payload, version=(2, 0)))
        assert np.array_equal(arr.data, payload)

    def test_fortran_order_rejected(self):
        raw = write_npy(np.zeros((2, 2), np.uint8)).replace(b"False", b"True ", 1)
        with pytest.raises(FormatError, match="fortran"):
            parse_npy(raw)

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            parse_npy(b"\x93NUMPZ" + b"\x00" * 20)
        assert err.value.offset == 0

    def test_unsupported_dtype(self):
        raw = write_npy(np.zeros(3, np.uint8)).replace(b"|u1", b"<f8")
        with pytest.raises(FormatError, match="dtype"):
            parse_npy(raw)

    def test_truncated_payload_reports_offset(self):
        raw = write_npy(np.zeros((4, 4), np.float32))
        with pytest.raises(FormatError) as err:
            parse_npy(raw[:-8])
        assert err.value.offset is not None

    def test_unsupported_version(self):
        raw = bytearray(write_npy(np.zeros(2, np.uint8)))
        raw[6:8] = bytes((3, 0))
        with pytest.raises(FormatError, match="version"):
            parse_npy(bytes(raw))


class TestParseNpz:
    def test_six_member_fixture(self, tmp_path):
        path = _medmnist_fixture(tmp_path)
        members = parse_npz(path)
        assert sorted(members) == [
            "test_images", "test_labels", "train_images",
            "train_labels", "val_images", "val_labels",
        ]

    def test_stored_and_deflated_parse_identically(self, tmp_path, rng):
        data = rng.integers(0, 256, size=(4, 4), dtype=np.uint8)
        stored = write_zip([("a.npy", write_npy(data))], compress=False)
        deflated = write_zip([("a.npy", write_npy(data))], compress=True)
        a = parse_npz(stored)["a"]
        b = parse_npz(deflated)["a"]
        assert np.array_equal(a.data, b.data) and np.array_equal(a.data, data)

    def test_matches_numpy_savez(self, tmp_path, rng):
        path = tmp_path / "np.npz"
        x = rng.normal(size=(3, 2)).astype(np.float32)
        y = rng.integers(0, 9, size=5).astype(np.int64)
        np.savez_compressed(path, x=x, y=y)
        members = parse_npz(path)
        assert np.array_equal(members["x"].data, x)
        assert np.array_equal(members["y"].data, y)

    def test_empty_archive(self, tmp_path):
        path = tmp_path / "empty.npz"
        with zipfile.ZipFile(path, "w"):
            pass
        assert parse_npz(path) == {}

    def test_crc_mismatch_names_member(self):
        payload = write_npy(np.zeros(4, np.uint8))
        raw = write_zip(
            [("good.npy", payload), ("bad.npy", payload)],
            crc_override={"bad.npy": 0xDEADBEEF},
        )
        with pytest.raises(FormatError, match="bad.npy"):
            parse_npz(raw)

    def test_unsupported_method_names_member(self):
        payload = write_npy(np.zeros(4, np.uint8))
        raw = write_zip([("odd.npy", payload)], method_override={"odd.npy": 12})
        with pytest.raises(FormatError, match="odd.npy"):
            parse_npz(raw)

    def test_non_zip(self, tmp_path):
        path = tmp_path / "noise.npz"
        path.write_bytes(b"definitely not a zip container")
        with pytest.raises(FormatError, match="ZIP"):
            parse_npz(path)


class TestLoadMedmnist:
    def test_fixture_splits(self, tmp_path):
        path = _medmnist_fixture(tmp_path, n=10, classes=3)
        train, val, test = load_medmnist(path)
        for ds, name in ((train, "train"), (val, "val"), (test, "test")):
            assert len(ds) == 10
            assert ds.num_classes == 3
            assert ds.split == name
            assert ds.images.shape == (10, 1, 6, 6)

    def test_rgb_fixture_is_channels_first(self, tmp_path):
        path = _medmnist_fixture(tmp_path, rgb=True)
        train, _, _ = load_medmnist(path)
        assert train.images.shape == (10, 3, 6, 6)

    def test_pixel_255_scales_to_one(self, tmp_path):
        members = []
        for split in ("train", "val", "test"):
            images = np.full((2, 4, 4), 255, dtype=np.uint8)
            labels = np.array([[0], [1]], dtype=np.int64)
            members.append((f"{split}_images.npy", write_npy(images)))
            members.append((f"{split}_labels.npy", write_npy(labels)))
        path = tmp_path / "white.npz"
        path.write_bytes(write_zip(members))
        train, _, _ = load_medmnist(path)
        assert train.images.data.max() == 1.0

    def test_column_labels_squeezed(self, tmp_path):
        path = _medmnist_fixture(tmp_path, label_shape="column")
        train, _, _ = load_medmnist(path)
        assert train.labels.shape == (10,)

    def test_missing_member(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(2, 4, 4), dtype=np.uint8)
        members = [("train_images.npy", write_npy(images))]
        path = tmp_path / "partial.npz"
        path.write_bytes(write_zip(members))
        with pytest.raises(SchemaError, match="train_labels"):
            load_medmnist(path)

    def test_count_mismatch(self, tmp_path, rng):
        members = []
        for split in ("train", "val", "test"):
            images = rng.integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
            labels = np.zeros((2, 1), dtype=np.int64)
            members.append((f"{split}_images.npy", write_npy(images)))
            members.append((f"{split}_labels.npy", write_npy(labels)))
        path = tmp_path / "mismatch.npz"
        path.write_bytes(write_zip(members))
        with pytest.raises(SchemaError, match="images but"):
            load_medmnist(path)


class TestSyntheticDataset:
    def test_deterministic(self):
        a = synthetic_dataset(3, 5, 16, seed=12)
        b = synthetic_dataset(3, 5, 16, seed=12)
        assert np.array_equal(
            a.images.data.view(np.uint32), b.images.data.view(np.uint32)
        )
        assert np.array_equal(a.labels, b.labels)

    def test_balanced(self):
        ds = synthetic_dataset(2, 100, 16, seed=0)
        assert len(ds) == 200
        assert (ds.labels == 0).sum() == 100 and (ds.labels == 1).sum() == 100

    def test_requires_two_classes(self):
        with pytest.raises(ValueError):
            synthetic_dataset(1, 4, 16, seed=0)

    def test_values_in_unit_interval(self):
        ds = synthetic_dataset(4, 10, 28, seed=5)
        assert ds.images.data.min() >= 0.0 and ds.images.data.max() <= 1.0

    def test_nearest_centroid_oracle_on_held_out_half(self):
        ds = synthetic_dataset(4, 50, 28, seed=9)
        half = len(ds) // 2
        acc = nearest_centroid_accuracy(
            ds.images.data[:half], ds.labels[:half],
            ds.images.data[half:], ds.labels[half:],
        )
        assert acc >= 0.95

    def test_splits_are_distinct(self):
        train, val, test = synthetic_splits(3, 20, 16, seed=4)
        assert (len(train), len(val), len(test)) == (60, 15, 15)
        assert not np.array_equal(val.images.data[:5], test.images.data[:5])


class TestDatasetValidation:
    def test_rejects_out_of_range_pixels(self):
        from ssmrobust.autodiff import Tensor

        with pytest.raises(SchemaError):
            Dataset(Tensor(np.full((1, 1, 2, 2), 1.5)), np.zeros(1, np.int64), "t", 2)

    def test_rejects_label_count_mismatch(self):
        from ssmrobust.autodiff import Tensor

        with pytest.raises(SchemaError):
            Dataset(Tensor(np.zeros((2, 1, 2, 2))), np.zeros(3, np.int64), "t", 2)
