"""2-D convolution kernels operating on plain numpy arrays.

Everything here is cross-correlation with zero padding and stride 1, in
NCHW layout. Two forward paths are provided: a naive nested-loop version
(`conv2d_direct`) that serves as the reference oracle, and an im2col/GEMM
version (`conv2d_gemm`) used everywhere performance matters. The batched
variants apply a different kernel to every sample, which is what dynamic
convolution needs.
"""

import numpy as np


def same_padding(kernel_size: int) -> int:
    """Padding that preserves spatial size for an odd kernel at stride 1."""
    if kernel_size % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {kernel_size}")
    return (kernel_size - 1) // 2


def conv2d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, padding: int) -> np.ndarray:
    """Reference convolution: six explicit loops, no vectorization tricks.

    Kept deliberately simple so it can act as an independent oracle for
    the GEMM path. Only use on small shapes.
    """
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels but weight expects {cin_w}")
    p = padding
    xp = np.zeros((n, cin, h + 2 * p, wd + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + wd] = x
    oh = h + 2 * p - kh + 1
    ow = wd + 2 * p - kw + 1
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for o in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for c in range(cin):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[ni, c, y + dy, xx + dx] * w[o, c, dy, dx]
                    out[ni, o, y, xx] = acc
    if b is not None:
        out += b.reshape(1, cout, 1, 1)
    return out


def im2col(x: np.ndarray, kernel_size: int, padding: int) -> np.ndarray:
    """Unfold padded input into a (N, C*k*k, H_out*W_out) matrix.

    Column index layout is (c, dy, dx) row-major, matching
    ``w.reshape(cout, -1)`` for the GEMM.
    """
    n, c, h, w = x.shape
    k, p = kernel_size, padding
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    oh = h + 2 * p - k + 1
    ow = w + 2 * p - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # (n, c, oh, ow, k, k) -> (n, c, k, k, oh, ow) -> (n, c*k*k, oh*ow)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape: tuple, kernel_size: int, padding: int) -> np.ndarray:
    """Scatter-add the transpose of `im2col`: columns back to image layout."""
    n, c, h, w = x_shape
    k, p = kernel_size, padding
    oh = h + 2 * p - k + 1
    ow = w + 2 * p - k + 1
    cols6 = cols.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy:dy + oh, dx:dx + ow] += cols6[:, :, dy, dx]
    return xp[:, :, p:p + h, p:p + w]


def conv2d_gemm(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, padding: int) -> np.ndarray:
    """im2col + matrix-multiply convolution, one kernel for the whole batch."""
    n, cin, h, wd = x.shape
    cout, cin_w, k, _ = w.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels but weight expects {cin_w}")
    cols = im2col(x, k, padding)
    out = np.matmul(w.reshape(cout, -1), cols)  # (cout, ckk) @ (n, ckk, hw)
    oh = h + 2 * padding - k + 1
    ow = wd + 2 * padding - k + 1
    out = out.reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b.reshape(1, cout, 1, 1)
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    padding: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of `conv2d_gemm` w.r.t. input, weight and bias."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    g2 = grad_out.reshape(n, cout, -1)
    cols = im2col(x, k, padding)
    # (n, cout, hw) x (n, ckk, hw) summed over n, hw
    gw = np.einsum("nof,ncf->oc", g2, cols, optimize=True).reshape(w.shape)
    gcols = np.matmul(w.reshape(cout, -1).T, g2)  # (ckk, cout) @ (n, cout, hw)
    gx = col2im(gcols, x.shape, k, padding)
    gb = grad_out.sum(axis=(0, 2, 3))
    return gx, gw, gb


def batch_conv2d_gemm(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, padding: int) -> np.ndarray:
    """Convolution with a separate kernel per sample.

    `w` has shape (N, Cout, Cin, k, k) and `b` shape (N, Cout); sample i of
    the batch is convolved with kernel i.
    """
    n, cin, h, wd = x.shape
    nw, cout, cin_w, k, _ = w.shape
    if n != nw:
        raise ValueError(f"batch size {n} does not match {nw} kernels")
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels but weight expects {cin_w}")
    cols = im2col(x, k, padding)
    out = np.matmul(w.reshape(n, cout, -1), cols)  # per-sample GEMM
    oh = h + 2 * padding - k + 1
    ow = wd + 2 * padding - k + 1
    out = out.reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b[:, :, None, None]
    return out


def batch_conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                          padding: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of `batch_conv2d_gemm` w.r.t. input, kernels and biases."""
    n, cin, h, wd = x.shape
    _, cout, _, k, _ = w.shape
    g2 = grad_out.reshape(n, cout, -1)
    cols = im2col(x, k, padding)
    gw = np.matmul(g2, cols.transpose(0, 2, 1)).reshape(w.shape)
    gcols = np.matmul(w.reshape(n, cout, -1).transpose(0, 2, 1), g2)
    gx = col2im(gcols, x.shape, k, padding)
    gb = grad_out.sum(axis=(2, 3))
    return gx, gw, gb
