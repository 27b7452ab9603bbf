"""Single-level 2-D orthonormal Haar transform and its exact inverse.

`dwt2d` maps (N, C, H, W) to the subband layout (N, 4C, H/2, W/2) with the
channel blocks ordered [LL | LH | HL | HH], each C channels wide. The
per-subband scale of 1/2 makes the transform orthonormal: energy is
preserved and the inverse is the transpose, so each op's backward rule is
simply the other op applied to the upstream gradient.

For a 2x2 block [a b; c d]:

    LL = (a + b + c + d) / 2      a = (LL - LH - HL + HH) / 2
    LH = (-a - b + c + d) / 2     b = (LL - LH + HL - HH) / 2
    HL = (-a + b - c + d) / 2     c = (LL + LH - HL - HH) / 2
    HH = (a - b - c + d) / 2      d = (LL + LH + HL + HH) / 2

A constant image of value v therefore lands entirely in LL, at 2v.
"""

import numpy as np

from .engine import Tensor, _result


def dwt2d_array(x: np.ndarray) -> np.ndarray:
    """Forward Haar analysis on a plain NCHW array with even H and W."""
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (-a - b + c + d) * 0.5
    hl = (-a + b - c + d) * 0.5
    hh = (a - b - c + d) * 0.5
    return np.concatenate([ll, lh, hl, hh], axis=1)


def idwt2d_array(y: np.ndarray) -> np.ndarray:
    """Exact Haar synthesis: inverse (and transpose) of `dwt2d_array`."""
    n, c4, h, w = y.shape
    c = c4 // 4
    ll = y[:, 0 * c:1 * c]
    lh = y[:, 1 * c:2 * c]
    hl = y[:, 2 * c:3 * c]
    hh = y[:, 3 * c:4 * c]
    out = np.empty((n, c, 2 * h, 2 * w), dtype=y.dtype)
    out[:, :, 0::2, 0::2] = (ll - lh - hl + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll + lh + hl + hh) * 0.5
    return out


def dwt2d(x: Tensor) -> Tensor:
    """Differentiable forward transform; backward applies the synthesis map."""
    if x.data.ndim != 4:
        raise ValueError(f"dwt2d expects NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(
            f"dwt2d needs even spatial dims, got {h}x{w}; pad the input upstream")
    return _result("dwt2d", (x,), dwt2d_array(x.data), lambda g: (idwt2d_array(g),))


def idwt2d(y: Tensor) -> Tensor:
    """Differentiable inverse transform; backward applies the analysis map."""
    if y.data.ndim != 4:
        raise ValueError(f"idwt2d expects NCHW, got shape {y.shape}")
    if y.shape[1] % 4:
        raise ValueError(
            f"idwt2d needs a channel count divisible by 4, got {y.shape[1]}")
    return _result("idwt2d", (y,), idwt2d_array(y.data), lambda g: (dwt2d_array(g),))
