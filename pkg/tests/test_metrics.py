"""PSNR and SSIM closed forms plus the report container."""

import numpy as np
import pytest

from mwdcnn.metrics import PSNR_CAP_DB, QualityReport, _gaussian_window, psnr, ssim


class TestPsnr:
    def test_identical_hits_cap(self):
        a = np.random.default_rng(0).uniform(0, 255, size=(16, 16))
        assert psnr(a, a) == PSNR_CAP_DB

    def test_constant_shift_is_twenty_db(self):
        a = np.full((8, 8), 100.0)
        assert psnr(a, a + 25.5) == pytest.approx(20.0, abs=1e-12)

    def test_unit_mse_closed_form(self):
        a = np.zeros((10, 10))
        expected = 20.0 * np.log10(255.0)
        assert psnr(a, a + 1.0) == pytest.approx(expected, rel=1e-12)

    def test_unit_scale(self):
        a = np.full((8, 8), 0.5)
        assert psnr(a, a + 0.1, max_val=1.0) == pytest.approx(20.0, abs=1e-12)

    def test_near_identical_capped(self):
        a = np.zeros((4, 4))
        assert psnr(a, a + 1e-10) == PSNR_CAP_DB

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_self_similarity_is_exactly_one(self):
        a = np.random.default_rng(1).uniform(0, 255, size=(24, 24))
        assert ssim(a, a) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 255, size=(20, 20))
        b = np.clip(a + rng.normal(0, 20, size=a.shape), 0, 255)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_constant_images_closed_form(self):
        """Zero variance leaves only the luminance comparison term."""
        mu_a, mu_b = 100.0, 150.0
        a = np.full((16, 16), mu_a)
        b = np.full((16, 16), mu_b)
        c1 = (0.01 * 255.0) ** 2
        expected = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_more_noise_scores_lower(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(60, 200, size=(32, 32))
        light = np.clip(a + rng.normal(0, 5, a.shape), 0, 255)
        heavy = np.clip(a + rng.normal(0, 40, a.shape), 0, 255)
        assert 0.0 < ssim(a, heavy) < ssim(a, light) < 1.0

    def test_color_collapses_to_luminance(self):
        rng = np.random.default_rng(4)
        gray = rng.uniform(0, 255, size=(16, 16))
        noisy = np.clip(gray + rng.normal(0, 15, gray.shape), 0, 255)
        rgb_a = np.repeat(gray[:, :, None], 3, axis=2)
        rgb_b = np.repeat(noisy[:, :, None], 3, axis=2)
        assert ssim(rgb_a, rgb_b) == pytest.approx(ssim(gray, noisy), rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="mismatch"):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))
        with pytest.raises(ValueError, match="2-d or 3-d"):
            ssim(np.zeros(16), np.zeros(16))

    def test_window_normalized_and_symmetric(self):
        win = _gaussian_window(11, 1.5)
        assert win.shape == (11, 11)
        assert win.sum() == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(win, win.T, rtol=1e-15)
        np.testing.assert_allclose(win, win[::-1, ::-1], rtol=1e-15)
        assert win[5, 5] == win.max()


class TestQualityReport:
    def test_means_and_csv(self, tmp_path):
        rep = QualityReport()
        rep.add("a.png", 30.0, 0.9)
        rep.add("b.png", 32.0, 0.8)
        assert rep.mean_psnr == pytest.approx(31.0)
        assert rep.mean_ssim == pytest.approx(0.85)
        lines = rep.csv_lines()
        assert lines[0] == "image,psnr_db,ssim"
        assert lines[1] == "a.png,30.000000,0.900000"
        assert lines[-1] == "MEAN,31.000000,0.850000"
        rep.save(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines() == lines

    def test_empty_report_means_are_nan(self):
        rep = QualityReport()
        assert np.isnan(rep.mean_psnr) and np.isnan(rep.mean_ssim)
