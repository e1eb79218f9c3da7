import gzip
import struct

import numpy as np
import numpy.testing as npt
import pytest

from llnn.data import (
    NEGATIVE_POOL,
    SYNTHETIC_CHARS,
    TaskSpec,
    build_task,
    load_emnist,
    parse_idx,
    serialize_idx,
    synthetic_glyphs,
)


class TestParseIdx:
    def test_two_images(self):
        payload = bytes(range(256)) * 6 + bytes(32)  # 2 * 28 * 28 = 1568
        raw = struct.pack(">IIII", 0x803, 2, 28, 28) + payload
        arr = parse_idx(raw)
        assert arr.shape == (2, 28, 28)
        assert arr.dtype == np.uint8

    def test_labels(self):
        raw = struct.pack(">II", 0x801, 3) + bytes([1, 7, 2])
        npt.assert_array_equal(parse_idx(raw), [1, 7, 2])

    def test_bad_magic(self):
        raw = struct.pack(">II", 0x802, 3) + bytes(3)
        with pytest.raises(ValueError, match="0x00000802"):
            parse_idx(raw)

    def test_truncated_payload(self):
        raw = struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(100)
        with pytest.raises(ValueError, match="1568"):
            parse_idx(raw)

    def test_roundtrip_images(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
        npt.assert_array_equal(parse_idx(serialize_idx(arr)), arr)

    def test_roundtrip_labels(self):
        arr = np.array([0, 255, 7], dtype=np.uint8)
        npt.assert_array_equal(parse_idx(serialize_idx(arr)), arr)

    def test_gzip_transparent(self):
        arr = np.arange(10, dtype=np.uint8)
        npt.assert_array_equal(parse_idx(gzip.compress(serialize_idx(arr))), arr)


def write_emnist_fixture(tmp_path, chars="0123OZPQRS", per_char=6, gzipped=False):
    """Tiny fake EMNIST split: distinct constant images per class."""
    n = len(chars) * per_char
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.uint8)
    for ci, ch in enumerate(chars):
        for k in range(per_char):
            i = ci * per_char + k
            images[i] = ci * 20 + k
            labels[i] = ci
    img_bytes = serialize_idx(images.transpose(0, 2, 1))  # stored transposed
    lbl_bytes = serialize_idx(labels)
    suffix = ".gz" if gzipped else ""
    img_path = tmp_path / f"images-idx3-ubyte{suffix}"
    lbl_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    if gzipped:
        img_bytes, lbl_bytes = gzip.compress(img_bytes), gzip.compress(lbl_bytes)
    img_path.write_bytes(img_bytes)
    lbl_path.write_bytes(lbl_bytes)
    mapping = tmp_path / "mapping.txt"
    mapping.write_text("".join(f"{i} {ord(c)}\n" for i, c in enumerate(chars)))
    return img_path, lbl_path, mapping


class TestLoadEmnist:
    def test_lookup_comes_from_mapping_file(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path)
        split = load_emnist(img, lbl, mapping)
        assert split.lookup("0") == 0
        assert split.lookup("Z") == 5

    def test_images_are_transposed_upright(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path)
        split = load_emnist(img, lbl, mapping)
        # fixture wrote transposed constants, loader flips them back
        assert split.pixels[0, 0, 0] == 0
        assert split.count == 60

    def test_gzipped_files(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path, gzipped=True)
        assert load_emnist(img, lbl, mapping).count == 60

    def test_missing_required_char(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path)
        mapping.write_text("0 48\n1 49\n")
        with pytest.raises(ValueError, match="required characters"):
            load_emnist(img, lbl, mapping)

    def test_unknown_char_lookup(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path)
        split = load_emnist(img, lbl, mapping)
        with pytest.raises(ValueError, match="not in the class mapping"):
            split.lookup("@")

    def test_count_mismatch(self, tmp_path):
        img, lbl, mapping = write_emnist_fixture(tmp_path)
        lbl.write_bytes(serialize_idx(np.zeros(3, dtype=np.uint8)))
        with pytest.raises(ValueError, match="count"):
            load_emnist(img, lbl, mapping)


class TestTaskSpec:
    def test_positive_cannot_be_negative(self):
        with pytest.raises(ValueError):
            TaskSpec("P")

    def test_counts_positive(self):
        with pytest.raises(ValueError):
            TaskSpec("0", n_pos_train=0)

    def test_defaults(self):
        spec = TaskSpec("0")
        assert spec.negative_chars == NEGATIVE_POOL
        assert spec.n_pos_train == 100
        assert spec.n_neg_train_per_char == 100


class TestBuildTask:
    @pytest.fixture()
    def splits(self):
        return synthetic_glyphs(["0", "1", "P", "Q", "R", "S"], per_char=30, seed=5)

    def test_paper_counts(self, splits):
        train, test = splits
        spec = TaskSpec("0", n_pos_train=20, n_neg_train_per_char=25)
        ds = build_task(train, test, spec, seed=3)
        assert ds.train_pos.shape == (20, 784)
        assert ds.train_neg.shape == (100, 784)
        assert ds.test_pos.shape[0] == test.of_char("0").shape[0]

    def test_few_shot_counts(self, splits):
        train, test = splits
        ds = build_task(train, test, TaskSpec("1", n_pos_train=10, n_neg_train_per_char=5), 0)
        assert ds.train_pos.shape == (10, 784)

    def test_seed_determinism(self, splits):
        train, test = splits
        spec = TaskSpec("0", n_pos_train=15, n_neg_train_per_char=10)
        a = build_task(train, test, spec, seed=7)
        b = build_task(train, test, spec, seed=7)
        npt.assert_array_equal(a.train_pos, b.train_pos)
        npt.assert_array_equal(a.train_neg, b.train_neg)

    def test_different_seeds_differ(self, splits):
        train, test = splits
        spec = TaskSpec("0", n_pos_train=15, n_neg_train_per_char=10)
        a = build_task(train, test, spec, seed=7)
        b = build_task(train, test, spec, seed=8)
        assert not np.array_equal(a.train_pos, b.train_pos)

    def test_insufficient_samples(self, splits):
        train, test = splits
        with pytest.raises(ValueError, match="'0'"):
            build_task(train, test, TaskSpec("0", n_pos_train=1000), 0)

    def test_values_in_unit_interval(self, splits):
        train, test = splits
        ds = build_task(train, test, TaskSpec("0", n_pos_train=10, n_neg_train_per_char=5), 1)
        for arr in (ds.train_pos, ds.train_neg, ds.test_pos, ds.test_neg):
            assert arr.min() >= 0.0 and arr.max() <= 1.0
            assert arr.shape[1] == 784


class TestSyntheticGlyphs:
    def test_count_contract(self):
        train, test = synthetic_glyphs(["0"], per_char=5, seed=0)
        assert train.count == 5
        assert np.all(train.labels == train.lookup("0"))

    def test_seed_determinism_bitwise(self):
        a_train, a_test = synthetic_glyphs(["0", "Z"], per_char=4, seed=9)
        b_train, b_test = synthetic_glyphs(["0", "Z"], per_char=4, seed=9)
        npt.assert_array_equal(a_train.pixels, b_train.pixels)
        npt.assert_array_equal(a_test.pixels, b_test.pixels)

    def test_unsupported_character(self):
        with pytest.raises(ValueError, match="no glyph template"):
            synthetic_glyphs(["0", "&"], per_char=2, seed=0)

    def test_core_characters_supported(self):
        for c in ("0", "1", "2", "3", "O", "Z", "P", "Q", "R", "S"):
            assert c in SYNTHETIC_CHARS

    def test_train_and_test_disjoint(self):
        train, test = synthetic_glyphs(["0"], per_char=6, seed=1)
        train_set = {tr.tobytes() for tr in train.pixels}
        assert all(te.tobytes() not in train_set for te in test.pixels)

    def test_glyphs_have_ink(self):
        train, _ = synthetic_glyphs(list(SYNTHETIC_CHARS), per_char=3, seed=2)
        per_image_ink = train.pixels.reshape(train.count, -1).astype(int).sum(axis=1)
        assert per_image_ink.min() > 255 * 10  # every glyph draws something
