import hashlib
import json

import numpy as np
import pytest

from fedsr.data import (
    ImageRecord,
    decode_ppm,
    encode_ppm,
    extract_patches,
    load_dataset,
    load_manifest,
    load_training_set,
    mod_crop,
    pregenerate_test_variants,
    save_ppm,
    sha256_file,
    synthetic_corpus,
    verify_manifest,
    write_training_patches,
)
from fedsr.degradation import VARIANTS, downsample_bicubic
from fedsr.errors import CorruptedDatasetError, InvalidArgumentError, ParseError


class TestPpm:
    def test_known_bytes(self):
        data = b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 255])
        img = decode_ppm(data)
        assert img.shape == (3, 1, 2) and img.dtype == np.float32
        np.testing.assert_allclose(img[:, 0, 0], [1, 0, 0])
        np.testing.assert_allclose(img[:, 0, 1], [0, 128 / 255, 1])
        assert encode_ppm(img) == data

    def test_header_comments_and_whitespace(self):
        data = b"P6 # comment\n 1\t1 # x\n255\n" + bytes([1, 2, 3])
        np.testing.assert_allclose(decode_ppm(data)[:, 0, 0] * 255, [1, 2, 3], rtol=1e-6)

    def test_encode_rounds_half_up_and_clamps(self):
        img = np.array([[[0.5 / 255]], [[-0.2]], [[1.7]]], np.float32)
        assert encode_ppm(img)[-3:] == bytes([1, 0, 255])

    def test_round_trip(self, tmp_path):
        q = np.random.default_rng(0).integers(0, 256, (3, 5, 7)).astype(np.float32) / 255
        save_ppm(q, tmp_path / "a.ppm")
        rec = load_dataset(tmp_path)[0]
        assert rec.id == "a"
        np.testing.assert_array_equal(rec.hr, q)

    @pytest.mark.parametrize("data,offset", [
        (b"P3\n1 1\n255\n000", 0),
        (b"P6\n1 1\n65535\n" + bytes(6), 7),
        (b"P6\n2 2\n255\n" + bytes(5), 16),
        (b"P6\nx 2\n255\n", 3),
    ])
    def test_errors_carry_offset(self, data, offset):
        with pytest.raises(ParseError) as err:
            decode_ppm(data, path="bad.ppm")
        assert err.value.offset == offset
        assert "bad.ppm" in str(err.value)


class TestPatches:
    def test_counts_with_border_snap(self):
        img = np.zeros((3, 480, 960), np.float32)
        patches = extract_patches(img, 480, 480)
        assert len(patches) == 2
        assert len(extract_patches(img, 400, 400)) == 6  # rows 0, 80; cols 0, 400, 560
        assert len(extract_patches(np.zeros((3, 64, 64), np.float32), 32, 16)) == 9

    def test_last_patch_touches_border(self):
        img = np.arange(3 * 10 * 10, dtype=np.float32).reshape(3, 10, 10)
        last = extract_patches(img, 4, 4)[-1]
        np.testing.assert_array_equal(last, img[:, 6:, 6:])

    def test_too_small(self):
        assert extract_patches(np.zeros((3, 4, 4), np.float32), 8, 8) == []

    def test_mod_crop(self):
        assert mod_crop(np.zeros((3, 10, 13)), 4).shape == (3, 8, 12)

    def test_training_set_groups_by_image(self, tmp_path, small_corpus):
        n = write_training_patches(small_corpus[:2], tmp_path, 16, 16)
        assert n == 8
        ds = load_training_set(tmp_path, 16, 16, 2)
        assert list(ds) == [small_corpus[0].id, small_corpus[1].id]
        assert ds[small_corpus[0].id].shape == (4, 3, 16, 16)

    def test_training_set_patch_scale_check(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            load_training_set(tmp_path, 15, 15, 2)


class TestPregenerate:
    def test_layout_and_manifest(self, tmp_path, small_corpus):
        m = pregenerate_test_variants(small_corpus[:2], 2, tmp_path, master_seed=0)
        assert [v["name"] for v in m["variants"]] == list(VARIANTS)
        lr_files = list(tmp_path.glob("*/*.ppm"))
        assert len(lr_files) == 2 * 8 + 2
        for v in m["variants"]:
            for f in v["files"]:
                path = tmp_path / f["path"]
                assert f["sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
        on_disk, root = load_manifest(tmp_path)
        assert on_disk == json.loads(json.dumps(m)) and root == tmp_path
        verify_manifest(on_disk, root)

    def test_clean_equals_downsample(self, tmp_path, small_corpus):
        pregenerate_test_variants(small_corpus[:1], 4, tmp_path)
        rec = load_dataset(tmp_path / "clean")[0]
        expected = downsample_bicubic(small_corpus[0].hr, 4)
        expected = np.floor(expected.astype(np.float64) * 255 + 0.5) / 255
        np.testing.assert_allclose(rec.hr, expected, atol=1e-7)

    def test_deterministic_bytes(self, tmp_path, small_corpus):
        pregenerate_test_variants(small_corpus[:2], 2, tmp_path / "a", master_seed=4)
        pregenerate_test_variants(small_corpus[:2], 2, tmp_path / "b", master_seed=4)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_noise_shared_across_noisy_variants(self, tmp_path, small_corpus):
        pregenerate_test_variants(small_corpus[:1], 2, tmp_path, master_seed=1)
        clean = load_dataset(tmp_path / "clean")[0].hr
        noise = load_dataset(tmp_path / "noise")[0].hr
        assert not np.array_equal(clean, noise)

    def test_tamper_detected(self, tmp_path, small_corpus):
        pregenerate_test_variants(small_corpus[:1], 2, tmp_path)
        target = tmp_path / "jpeg" / f"{small_corpus[0].id}.ppm"
        data = bytearray(target.read_bytes())
        data[-1] ^= 1
        target.write_bytes(bytes(data))
        m, root = load_manifest(tmp_path)
        with pytest.raises(CorruptedDatasetError, match="digest mismatch"):
            verify_manifest(m, root)

    def test_duplicate_ids(self, tmp_path):
        img = np.zeros((3, 8, 8), np.float32)
        with pytest.raises(InvalidArgumentError):
            pregenerate_test_variants([ImageRecord("a", img), ImageRecord("a", img)], 2, tmp_path)


def test_synthetic_corpus_deterministic():
    a = synthetic_corpus(3, 16, seed=2)
    b = synthetic_corpus(3, 16, seed=2)
    assert [r.id for r in a] == ["img000", "img001", "img002"]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.hr, y.hr)
        assert x.hr.min() >= 0 and x.hr.max() <= 1
    assert not np.array_equal(a[0].hr, a[1].hr)


def test_sha256_file(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"abc")
    assert sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
