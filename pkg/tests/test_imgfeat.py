import colorsys

import numpy as np
import pytest

from kinverify import imgfeat
from kinverify.errors import DataError, DimensionError
from kinverify.imgfeat import BsifFilterBank


def bilinear_at(img, y, x):
    """Slow reference bilinear sample at float coordinates."""
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    if fy < 1e-12 and fx < 1e-12:
        return float(img[y0, x0])
    return float(
        (1 - fy) * (1 - fx) * img[y0, x0]
        + (1 - fy) * fx * img[y0, x0 + 1]
        + fy * (1 - fx) * img[y0 + 1, x0]
        + fy * fx * img[y0 + 1, x0 + 1]
    )


def lbp_reference(img, p=8, r=1.0):
    """Per-pixel LBP codes by direct neighborhood loops."""
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), dtype=np.int64)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            code = 0
            for k in range(p):
                theta = 2 * np.pi * k / p
                ny = i + r * np.sin(theta)
                nx = j + r * np.cos(theta)
                if bilinear_at(img, ny, nx) >= img[i, j] - 1e-12:
                    code |= 1 << k
            out[i - 1, j - 1] = code
    return out


class TestHsv:
    def test_matches_colorsys(self, rng):
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        hsv = imgfeat.rgb_to_hsv(img)
        for i in range(8):
            for j in range(8):
                r, g, b = img[i, j] / 255.0
                expect = colorsys.rgb_to_hsv(r, g, b)
                assert np.allclose(hsv[i, j], expect, atol=1e-12)

    def test_achromatic_hue_zero(self):
        img = np.full((2, 2, 3), 120, dtype=np.uint8)
        hsv = imgfeat.rgb_to_hsv(img)
        assert np.all(hsv[:, :, 0] == 0)
        assert np.all(hsv[:, :, 1] == 0)

    def test_range(self, rng):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        hsv = imgfeat.rgb_to_hsv(img)
        assert hsv.min() >= 0.0 and hsv.max() <= 1.0

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            imgfeat.rgb_to_hsv(np.zeros((4, 4)))


class TestUniformTable:
    def test_bin_count(self):
        table = imgfeat.uniform_lbp_table(8)
        assert table.shape == (256,)
        assert table.max() == 58  # 58 uniform bins + 1 miscellaneous

    def test_uniform_patterns_get_unique_bins(self):
        table = imgfeat.uniform_lbp_table(8)

        def transitions(code):
            bits = [(code >> i) & 1 for i in range(8)]
            return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))

        uniform = [c for c in range(256) if transitions(c) <= 2]
        assert len(uniform) == 58
        assert len({int(table[c]) for c in uniform}) == 58
        non_uniform = [c for c in range(256) if transitions(c) > 2]
        assert all(table[c] == 58 for c in non_uniform)


class TestLbp:
    def test_codes_match_reference(self, rng):
        img = rng.uniform(0, 1, (10, 10))
        assert np.array_equal(imgfeat.lbp_code_map(img), lbp_reference(img))

    def test_constant_image_all_ones_code(self):
        img = np.full((6, 6), 0.5)
        assert np.all(imgfeat.lbp_code_map(img) == 255)

    def test_positive_affine_invariance(self, rng):
        img = rng.uniform(0, 1, (12, 12))
        a = imgfeat.lbp_code_map(img)
        b = imgfeat.lbp_code_map(2.5 * img + 0.3)
        assert np.array_equal(a, b)

    def test_feature_dim_and_mass(self, rng):
        frames = rng.uniform(0, 1, (2, 64, 64, 3))
        feat = imgfeat.lbp_features(frames)
        assert feat.dim == imgfeat.LBP_DIM == 2832
        # every interior pixel lands in exactly one bin, per channel
        assert np.isclose(feat.values.sum(), 62 * 62 * 3)

    def test_shape_check(self, rng):
        with pytest.raises(DimensionError):
            imgfeat.lbp_features(rng.uniform(0, 1, (2, 32, 32, 3)))


class TestLpq:
    def test_codes_match_reference(self, rng):
        img = rng.uniform(0, 1, (12, 12))
        win, a = 7, 1.0 / 7.0
        n = np.arange(win) - win // 2
        w1 = np.exp(-2j * np.pi * a * n)
        ones = np.ones(win)
        kernels = [
            np.outer(ones, w1), np.outer(w1, ones),
            np.outer(w1, w1), np.outer(np.conj(w1), w1),
        ]
        got = imgfeat.lpq_code_map(img)
        h = img.shape[0] - win + 1
        for i in range(h):
            for j in range(h):
                patch = img[i : i + win, j : j + win]
                code = 0
                for k, kernel in enumerate(kernels):
                    coeff = (patch * kernel).sum()
                    code |= int(coeff.real > 0) << (2 * k)
                    code |= int(coeff.imag > 0) << (2 * k + 1)
                assert got[i, j] == code

    def test_positive_affine_invariance(self, rng):
        # filters against a constant are sign-preserved under positive scaling;
        # the offset only shifts the (zero-sum-free) DC, handled by each kernel
        img = rng.uniform(0.1, 0.9, (16, 16))
        a = imgfeat.lpq_code_map(img)
        b = imgfeat.lpq_code_map(3.0 * img)
        assert np.array_equal(a, b)

    def test_feature_dim_and_mass(self, rng):
        frames = rng.uniform(0, 1, (1, 64, 64, 3))
        feat = imgfeat.lpq_features(frames)
        assert feat.dim == imgfeat.LPQ_DIM == 3072
        assert np.isclose(feat.values.sum(), 58 * 58 * 3)


class TestBsif:
    def test_default_bank_properties(self):
        bank = imgfeat.default_filter_bank()
        assert bank.filters.shape == (8, 9, 9)
        assert np.abs(bank.filters.mean(axis=(1, 2))).max() < 1e-9

    def test_codes_match_reference(self, rng):
        bank = imgfeat.default_filter_bank()
        img = rng.uniform(0, 1, (14, 14))
        got = imgfeat.bsif_code_map(img, bank)
        s = bank.size
        for i in range(img.shape[0] - s + 1):
            for j in range(img.shape[1] - s + 1):
                patch = img[i : i + s, j : j + s]
                code = 0
                for k in range(8):
                    if (patch * bank.filters[k]).sum() > 0:
                        code |= 1 << k
                assert got[i, j] == code

    def test_positive_affine_invariance(self, rng):
        # zero-mean filters ignore the offset; positive scale keeps signs
        bank = imgfeat.default_filter_bank()
        img = rng.uniform(0, 1, (20, 20))
        a = imgfeat.bsif_code_map(img, bank)
        b = imgfeat.bsif_code_map(1.7 * img + 0.4, bank)
        assert np.array_equal(a, b)

    def test_feature_dim_and_mass(self, rng):
        frames = rng.uniform(0, 1, (1, 64, 64, 3))
        feat = imgfeat.bsif_features(frames)
        assert feat.dim == imgfeat.BSIF_DIM == 3072
        assert np.isclose(feat.values.sum(), 56 * 56 * 3)

    def test_bank_io_roundtrip(self, tmp_path, rng):
        f = rng.normal(size=(8, 5, 5))
        f -= f.mean(axis=(1, 2), keepdims=True)
        bank = BsifFilterBank(f)
        path = tmp_path / "bank.bin"
        imgfeat.save_filter_bank(bank, path)
        assert np.array_equal(imgfeat.load_filter_bank(path).filters, f)

    def test_bank_rejects_nonzero_mean(self):
        with pytest.raises(DataError, match="zero-mean"):
            BsifFilterBank(np.ones((8, 3, 3)))

    def test_bank_rejects_even_size(self, rng):
        f = rng.normal(size=(8, 4, 4))
        f -= f.mean(axis=(1, 2), keepdims=True)
        with pytest.raises(DataError, match="odd"):
            BsifFilterBank(f)

    def test_truncated_bank_file(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x08\x00\x00\x00\x09\x00\x00\x00" + b"\0" * 10)
        with pytest.raises(DataError, match="bytes"):
            imgfeat.load_filter_bank(path)


class TestLbpTop:
    def test_codes_match_reference(self, rng):
        vol = rng.uniform(0, 1, (4, 9, 9))
        maps = imgfeat.lbptop_code_maps(vol)
        table = imgfeat.uniform_lbp_table(8)
        # plane -> function giving the neighbor coordinate per (t, y, x)
        planes = {
            "XY": lambda t, y, x, c, s: (t, y + s, x + c),
            "XT": lambda t, y, x, c, s: (t + s, y, x + c),
            "YT": lambda t, y, x, c, s: (t + s, y + c, x),
        }
        for name, coord in planes.items():
            for t in range(1, vol.shape[0] - 1):
                for y in range(1, vol.shape[1] - 1):
                    for x in range(1, vol.shape[2] - 1):
                        code = 0
                        for k in range(8):
                            theta = 2 * np.pi * k / 8
                            c, s = np.cos(theta), np.sin(theta)
                            ct, cy, cx = coord(t, y, x, c, s)
                            if name == "XY":
                                val = bilinear_at(vol[t], cy, cx)
                            elif name == "XT":
                                val = bilinear_at(vol[:, y, :], ct, cx)
                            else:
                                val = bilinear_at(vol[:, :, x], ct, cy)
                            if val >= vol[t, y, x] - 1e-12:
                                code |= 1 << k
                        assert maps[name][t - 1, y - 1, x - 1] == table[code]

    def test_feature_dim_and_mass(self, rng):
        vol = rng.uniform(0, 255, (4, 224, 224))
        feat = imgfeat.lbptop_features(vol)
        assert feat.dim == imgfeat.LBPTOP_DIM == 2832
        # 3 planes x 2 interior frames x 222 x 222 coded voxels
        assert np.isclose(feat.values.sum(), 3 * 2 * 222 * 222)

    def test_needs_three_frames(self, rng):
        with pytest.raises(DimensionError, match="3 frames"):
            imgfeat.lbptop_code_maps(rng.uniform(0, 1, (2, 8, 8)))

    def test_shape_check(self, rng):
        with pytest.raises(DimensionError):
            imgfeat.lbptop_features(rng.uniform(0, 1, (4, 64, 64)))


class TestAverageFrames:
    def test_mean(self, rng):
        from kinverify.core import FeatureVector

        a = FeatureVector(np.array([1.0, 2.0]), "x")
        b = FeatureVector(np.array([3.0, 6.0]), "x")
        avg = imgfeat.average_frames([a, b])
        assert np.allclose(avg.values, [2.0, 4.0])

    def test_mismatched_dims(self):
        from kinverify.core import FeatureVector

        with pytest.raises(DimensionError):
            imgfeat.average_frames(
                [FeatureVector([1.0], "x"), FeatureVector([1.0, 2.0], "x")]
            )

    def test_empty(self):
        with pytest.raises(DimensionError):
            imgfeat.average_frames([])
