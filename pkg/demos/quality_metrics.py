"""PSNR and SSIM behavior as an image degrades.

PSNR is a pure function of mean squared error, so it tracks any noise
level; SSIM compares local luminance, contrast and structure inside a
Gaussian window, so it saturates near 1 for faint noise and punishes
structural damage harder than uniform shifts.
"""

import numpy as np

from mwdcnn.metrics import psnr, ssim


def main():
    rng = np.random.default_rng(0)
    y, x = np.mgrid[0:64, 0:64]
    img = 128 + 80 * np.sin(x / 6.0) * np.cos(y / 11.0)

    print("sigma   PSNR (dB)   SSIM")
    for sigma in (5, 15, 25, 50):
        noisy = np.clip(img + rng.normal(0, sigma, img.shape), 0, 255)
        print(f"{sigma:5d}   {psnr(noisy, img):9.2f}   {ssim(noisy, img):.4f}")

    # a constant shift keeps structure: SSIM stays high while PSNR drops
    shifted = np.clip(img + 25.5, 0, 255)
    print(f"shift   {psnr(shifted, img):9.2f}   {ssim(shifted, img):.4f}"
          "   (uniform +25.5)")

    # identical images: PSNR is capped rather than infinite
    print(f"self    {psnr(img, img):9.2f}   {ssim(img, img):.4f}")


if __name__ == "__main__":
    main()
