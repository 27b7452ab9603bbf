"""Image quality scores: peak signal-to-noise ratio and structural similarity.

Both operate on the sample values they are handed. The evaluation
pipeline quantizes reconstructions to 8-bit before scoring (see
`data.quantize_u8`), which matches how denoising results are normally
reported; the functions themselves do not round, so closed-form float
cases hold exactly.
"""

import numpy as np
from dataclasses import dataclass, field
from pathlib import Path
from scipy.signal import correlate2d

from .data import luminance

PSNR_CAP_DB = 100.0


def psnr(a, b, max_val: float = 255.0) -> float:
    """10*log10(max_val^2 / MSE) in dB, capped at 100 for (near-)identical pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val * max_val / mse))


def _gaussian_window(size: int, sigma: float):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, max_val: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity with a Gaussian window.

    Color inputs are collapsed to BT.601 luminance first. Local statistics
    use an 11x11 sigma=1.5 window over fully interior positions, so the
    images must be at least window x window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = luminance(a)
        b = luminance(b)
    if a.ndim != 2:
        raise ValueError(f"expected 2-d or 3-d images, got {a.ndim}-d")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")

    win = _gaussian_window(window, sigma)
    mu_a = correlate2d(a, win, mode="valid")
    mu_b = correlate2d(b, win, mode="valid")
    e_aa = correlate2d(a * a, win, mode="valid")
    e_bb = correlate2d(b * b, win, mode="valid")
    e_ab = correlate2d(a * b, win, mode="valid")
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b

    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
         / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
    return float(s.mean())


@dataclass
class QualityReport:
    """Per-image PSNR/SSIM rows plus their arithmetic means."""
    names: list = field(default_factory=list)
    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim_value: float) -> None:
        self.names.append(name)
        self.psnr_values.append(float(psnr_db))
        self.ssim_values.append(float(ssim_value))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values)) if self.psnr_values else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else float("nan")

    def csv_lines(self):
        lines = ["image,psnr_db,ssim"]
        for name, p, s in zip(self.names, self.psnr_values, self.ssim_values):
            lines.append(f"{name},{p:.6f},{s:.6f}")
        lines.append(f"MEAN,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        return lines

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.csv_lines()) + "\n", newline="\n")
