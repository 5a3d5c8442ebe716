import json

import numpy as np
import pytest

from atnet.image import Image, load_image
from atnet.metrics import psnr
from atnet.rng import SeededRng
from atnet.synth import (
    DeformationField,
    DegradationConfig,
    PsfKernel,
    convolve2d,
    degrade,
    generate_dataset,
    load_manifest,
    make_gaussian_psf,
    psf_size_for_sigma,
    sample_deformation_field,
    warp_image,
)
from conftest import make_random_image, make_smooth_image

IDENTITY_CFG = DegradationConfig(
    n_warp_centers=4,
    warp_strength=(0.0, 0.0),
    warp_falloff_sigma=(8.0, 8.0),
    psf_sigma=(0.0, 0.0),
    noise_sigma=0.0,
    seed=1,
)


class TestGaussianPsf:
    def test_sigma_zero_is_delta(self):
        k = make_gaussian_psf(0.0, 5)
        expected = np.zeros((5, 5))
        expected[2, 2] = 1.0
        assert np.array_equal(k.weights, expected)

    def test_normalization(self):
        for sigma in (0.3, 1.0, 2.7):
            k = make_gaussian_psf(sigma, psf_size_for_sigma(sigma))
            assert abs(k.weights.sum() - 1.0) <= 1e-9

    def test_matches_direct_formula(self):
        sigma, size = 1.0, 5
        k = make_gaussian_psf(sigma, size)
        ref = np.empty((size, size))
        for u in range(size):
            for v in range(size):
                du, dv = u - 2, v - 2
                ref[u, v] = np.exp(-(du * du + dv * dv) / (2 * sigma * sigma))
        ref /= ref.sum()
        assert np.abs(k.weights - ref).max() < 1e-12

    def test_rotation_symmetry(self):
        k = make_gaussian_psf(1.5, 7)
        assert np.array_equal(k.weights, np.rot90(k.weights, 2))

    def test_even_size_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            make_gaussian_psf(1.0, 4)

    def test_kernel_invariants_enforced(self):
        with pytest.raises(ValueError, match="sum"):
            PsfKernel(np.ones((3, 3)))
        bad = np.full((3, 3), 0.25)
        bad[1, 1] = -1.0
        with pytest.raises(ValueError, match="non-negative"):
            PsfKernel(bad)


class TestDeformationField:
    def test_zero_strength_gives_zero_field(self):
        field = sample_deformation_field(IDENTITY_CFG, 16, 16, SeededRng(3))
        assert np.all(field.dx == 0.0)
        assert np.all(field.dy == 0.0)

    def test_no_centers_gives_zero_field(self):
        cfg = DegradationConfig(n_warp_centers=0, seed=0)
        field = sample_deformation_field(cfg, 16, 16, SeededRng(3))
        assert field.max_magnitude() == 0.0

    def test_deterministic(self):
        cfg = DegradationConfig(seed=0)
        a = sample_deformation_field(cfg, 32, 32, SeededRng(5))
        b = sample_deformation_field(cfg, 32, 32, SeededRng(5))
        assert np.array_equal(a.dx, b.dx)
        assert np.array_equal(a.dy, b.dy)

    def test_magnitude_bounded_over_samples(self):
        cfg = DegradationConfig(warp_strength=(0.5, 2.5), seed=0)
        for i in range(100):
            field = sample_deformation_field(cfg, 16, 16, SeededRng(i))
            assert field.max_magnitude() <= 2.5 + 1e-12


class TestWarp:
    def test_zero_field_identity(self):
        img = make_random_image(0, 16, 16)
        out = warp_image(img, DeformationField.zero(16, 16))
        assert np.array_equal(out.data, img.data)

    def test_integer_shift_duplicates_border(self):
        img = make_random_image(1, 10, 10)
        field = DeformationField(np.ones((10, 10)), np.zeros((10, 10)))
        out = warp_image(img, field)
        # out(x) = in(x + 1): shifted left, last column duplicated
        assert np.array_equal(out.data[:, :-1, :], img.data[:, 1:, :])
        assert np.array_equal(out.data[:, -1, :], img.data[:, -1, :])

    def test_range_preserved(self):
        img = make_random_image(2, 16, 16)
        cfg = DegradationConfig(warp_strength=(1.0, 5.0), seed=0)
        field = sample_deformation_field(cfg, 16, 16, SeededRng(9))
        out = warp_image(img, field)
        assert out.data.min() >= 0.0
        assert out.data.max() <= 1.0

    def test_round_trip_on_smooth_images(self):
        # warp then warp with the negated field is close to identity on
        # smooth content (bilinear resampling is only approximately invertible)
        img = make_smooth_image(7, 48, 48)
        cfg = DegradationConfig(
            n_warp_centers=8, warp_strength=(0.5, 2.0), warp_falloff_sigma=(10.0, 16.0), seed=0
        )
        field = sample_deformation_field(cfg, 48, 48, SeededRng(11))
        back = warp_image(warp_image(img, field), field.negated())
        assert np.abs(back.data - img.data).mean() < 0.05

    def test_shape_mismatch(self):
        img = make_random_image(0, 16, 16)
        with pytest.raises(ValueError, match="field"):
            warp_image(img, DeformationField.zero(8, 8))


class TestConvolve:
    def test_delta_kernel_identity(self):
        img = make_random_image(3, 16, 16)
        out = convolve2d(img, make_gaussian_psf(0.0, 3))
        assert np.array_equal(out.data, img.data)

    def test_constant_image_unchanged(self):
        img = Image(np.full((16, 16, 3), 0.37))
        out = convolve2d(img, make_gaussian_psf(1.2, 7))
        assert np.abs(out.data - 0.37).max() < 1e-12

    def test_matches_quadruple_loop_oracle(self):
        img = make_random_image(4, 16, 16)
        kern = make_gaussian_psf(0.8, 3)
        out = convolve2d(img, kern)
        h, w = 16, 16
        ref = np.zeros((h, w, 3))
        for i in range(h):
            for j in range(w):
                for u in range(3):
                    for v in range(3):
                        ii = min(max(i + u - 1, 0), h - 1)
                        jj = min(max(j + v - 1, 0), w - 1)
                        ref[i, j, :] += kern.weights[u, v] * img.data[ii, jj, :]
        assert np.abs(out.data - ref).max() < 1e-9

    def test_kernel_larger_than_image_rejected(self):
        img = make_random_image(0, 8, 8)
        with pytest.raises(ValueError, match="kernel"):
            convolve2d(img, make_gaussian_psf(3.0, 9))


class TestDegrade:
    def test_identity_config_bit_exact(self):
        x = make_random_image(5, 24, 24)
        y, field, psf = degrade(x, IDENTITY_CFG, SeededRng(0))
        assert np.array_equal(y.data, x.data)
        assert field.max_magnitude() == 0.0
        assert psf.sigma == 0.0

    def test_deterministic(self):
        x = make_random_image(6, 16, 16)
        cfg = DegradationConfig(seed=3)
        y1, _, _ = degrade(x, cfg, SeededRng(8))
        y2, _, _ = degrade(x, cfg, SeededRng(8))
        assert np.array_equal(y1.data, y2.data)

    def test_psnr_non_increasing_in_noise(self):
        x = make_smooth_image(7, 32, 32)
        values = []
        for noise in (0.0, 0.01, 0.05):
            cfg = DegradationConfig(
                n_warp_centers=8, warp_strength=(0.5, 1.5), psf_sigma=(0.5, 1.0),
                noise_sigma=noise, seed=4,
            )
            y, _, _ = degrade(x, cfg, SeededRng(12))
            values.append(psnr(y, x))
        assert values[0] >= values[1] >= values[2]

    def test_noise_mean_near_zero(self):
        sigma = 0.02
        draws = SeededRng(1).normal(0.0, sigma, (64, 64, 3, 8))
        assert abs(draws.mean()) <= 3.0 * sigma / np.sqrt(draws.size)

    def test_blur_order_flag_changes_output(self):
        x = make_smooth_image(9, 32, 32)
        base = dict(n_warp_centers=8, warp_strength=(1.0, 3.0), psf_sigma=(1.0, 2.0),
                    noise_sigma=0.0, seed=2)
        y1, _, _ = degrade(x, DegradationConfig(blur_first=True, **base), SeededRng(3))
        y2, _, _ = degrade(x, DegradationConfig(blur_first=False, **base), SeededRng(3))
        assert not np.array_equal(y1.data, y2.data)


class TestDatasetGeneration:
    def _clean_dir(self, tmp_path, count=2):
        d = tmp_path / "clean"
        d.mkdir(exist_ok=True)
        from atnet.image import save_image

        for i in range(count):
            save_image(make_smooth_image(20 + i, 16, 16), d / f"img_{i}.png")
        return d

    def test_manifest_counting(self, tmp_path):
        clean = self._clean_dir(tmp_path, count=2)
        cfg = DegradationConfig(seed=1)
        manifest = generate_dataset(clean, tmp_path / "out", cfg, pairs_per_image=3)
        records = load_manifest(manifest)
        assert len(records) == 6

    def test_every_record_loads(self, tmp_path):
        clean = self._clean_dir(tmp_path)
        manifest = generate_dataset(clean, tmp_path / "out", DegradationConfig(seed=1), 2)
        for rec in load_manifest(manifest):
            img = load_image(rec["degraded"])
            assert img.shape == (16, 16, 3)
            assert load_image(rec["clean"]).shape == (16, 16, 3)
            assert rec["psf_sigma"] >= 0.0

    def test_regeneration_byte_identical(self, tmp_path):
        clean = self._clean_dir(tmp_path)
        cfg = DegradationConfig(seed=9)
        m1 = generate_dataset(clean, tmp_path / "o1", cfg, 2)
        m2 = generate_dataset(clean, tmp_path / "o2", cfg, 2)
        r1, r2 = load_manifest(m1), load_manifest(m2)
        for a, b in zip(r1, r2):
            assert a["seed"] == b["seed"]
            assert open(a["degraded"], "rb").read() == open(b["degraded"], "rb").read()

    def test_threads_do_not_change_bytes(self, tmp_path):
        clean = self._clean_dir(tmp_path)
        cfg = DegradationConfig(seed=2)
        m1 = generate_dataset(clean, tmp_path / "s1", cfg, 2, threads=1)
        m2 = generate_dataset(clean, tmp_path / "s2", cfg, 2, threads=4)
        for a, b in zip(load_manifest(m1), load_manifest(m2)):
            assert open(a["degraded"], "rb").read() == open(b["degraded"], "rb").read()

    def test_manifest_is_json_lines(self, tmp_path):
        clean = self._clean_dir(tmp_path)
        manifest = generate_dataset(clean, tmp_path / "out", DegradationConfig(seed=1), 1)
        for line in manifest.read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            assert set(rec) == {"clean", "degraded", "seed", "psf_sigma"}

    def test_empty_dir_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(ValueError, match="no loadable"):
            generate_dataset(empty, tmp_path / "out", DegradationConfig(), 1)
