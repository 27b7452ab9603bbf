"""Train a small denoiser on synthetic images and watch it beat the noise.

Everything is generated on the fly: a handful of smooth gradient images,
patches with frozen per-index Gaussian noise, a narrow model, a short
Adam run. On one CPU core this takes about twenty seconds and already
lifts heldout PSNR by several dB over the noisy input.
"""

import numpy as np
from scipy import ndimage

from mwdcnn.data import ImageBuffer, PatchDataset, add_awgn, quantize_u8, to_chw
from mwdcnn.engine import Tensor
from mwdcnn.metrics import psnr
from mwdcnn.model import ModelConfig, MwdcnnModel
from mwdcnn.training import TrainPlan, train

SIGMA = 25.0


def smooth_image(rng, coarse, side=80):
    """Bilinear blow-up of a coarse random grid: smooth, band-limited."""
    grid = rng.uniform(0, 1, size=(coarse, coarse))
    img = ndimage.zoom(grid, side / coarse, order=1)[:side, :side]
    return ImageBuffer(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))


def main():
    rng = np.random.default_rng(0)
    train_imgs = [smooth_image(rng, c) for c in (6, 8, 8, 10)]
    held = smooth_image(rng, 8)

    model = MwdcnnModel(ModelConfig(in_channels=1, base_channels=8,
                                    kernel_size=3, precision=32, seed=0))
    dataset = PatchDataset(train_imgs, 96, size=32, sigma=SIGMA, seed=0)
    plan = TrainPlan(batch_size=16, epochs=25, lr_table=((1, 25, 1e-4),),
                     seed=0, sigma=SIGMA)

    print(f"training on {len(dataset)} patches from {len(train_imgs)} images")
    rows = train(plan, model, dataset)
    losses = [r[3] for r in rows]
    print(f"loss: first five {np.mean(losses[:5]):.3f} -> "
          f"last five {np.mean(losses[-5:]):.3f} over {len(rows)} iterations")

    clean = to_chw(held.pixels, 1)[:, :64, :64]
    noisy = add_awgn(clean, SIGMA, key=12345)
    denoised = model.forward(Tensor(noisy[None], dtype=np.float32)).data[0]

    def q(v):
        return quantize_u8(np.transpose(v, (1, 2, 0))).astype(np.float64)

    p_noisy = psnr(q(noisy), q(clean))
    p_out = psnr(q(denoised), q(clean))
    print(f"heldout image: noisy {p_noisy:.2f} dB -> denoised {p_out:.2f} dB "
          f"({p_out - p_noisy:+.2f} dB)")


if __name__ == "__main__":
    main()
