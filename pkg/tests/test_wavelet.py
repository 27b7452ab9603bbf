"""Analysis/synthesis transform: exact reconstruction and orthonormality."""

import numpy as np
import pytest

from mwdcnn import wavelet
from mwdcnn.engine import Tape, Tensor, backward, sum_all, square


class TestHandWorkedBlocks:
    """2x2 blocks small enough to evaluate by hand."""

    def test_constant_block_lands_in_ll(self):
        x = np.full((1, 1, 2, 2), 3.0)
        y = wavelet.dwt2d_array(x)
        ll, lh, hl, hh = y[0, :, 0, 0]
        assert ll == 6.0  # (3+3+3+3)/2
        assert lh == hl == hh == 0.0

    def test_single_block_all_subbands(self):
        # block [1 2; 3 4]
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        y = wavelet.dwt2d_array(x)
        np.testing.assert_allclose(y[0, :, 0, 0], [5.0, 2.0, 1.0, 0.0])

    def test_horizontal_edge_excites_lh(self):
        """Rows differ, columns agree: only LL and LH respond."""
        x = np.array([[[[1.0, 1.0], [5.0, 5.0]]]])
        y = wavelet.dwt2d_array(x)
        ll, lh, hl, hh = y[0, :, 0, 0]
        assert lh == 4.0
        assert hl == 0.0 and hh == 0.0
        assert ll == 6.0


class TestRoundTrip:
    def test_reconstruction_float64(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 16, 20))
        err = np.abs(wavelet.idwt2d_array(wavelet.dwt2d_array(x)) - x).max()
        assert err < 1e-12

    def test_reconstruction_float32(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 16, 20)).astype(np.float32)
        err = np.abs(wavelet.idwt2d_array(wavelet.dwt2d_array(x)) - x).max()
        assert err < 1e-5

    def test_both_compositions_are_identity(self):
        """Synthesis then analysis is also exact (the map is a bijection)."""
        rng = np.random.default_rng(2)
        y = rng.normal(size=(1, 8, 5, 7))
        np.testing.assert_allclose(wavelet.dwt2d_array(wavelet.idwt2d_array(y)), y,
                                   atol=1e-12)


class TestOrthonormality:
    def test_energy_preserved(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 2, 12, 12))
        y = wavelet.dwt2d_array(x)
        np.testing.assert_allclose((y * y).sum(), (x * x).sum(), rtol=1e-12)

    def test_inner_products_preserved(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(1, 1, 8, 8))
        b = rng.normal(size=(1, 1, 8, 8))
        ya, yb = wavelet.dwt2d_array(a), wavelet.dwt2d_array(b)
        np.testing.assert_allclose((ya * yb).sum(), (a * b).sum(), rtol=1e-10)

    def test_subband_shapes_and_order(self):
        """C channels per subband, stacked [LL | LH | HL | HH]."""
        x = np.zeros((1, 3, 8, 8))
        x[0, 1] = 1.0  # constant in channel 1 only
        y = wavelet.dwt2d_array(x)
        assert y.shape == (1, 12, 4, 4)
        np.testing.assert_allclose(y[0, 1], 2.0)    # LL block, channel 1
        assert not y[0, [0, 2]].any()               # other LL channels silent
        assert not y[0, 3:].any()                   # detail blocks silent


class TestTensorOps:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="even"):
            wavelet.dwt2d(Tensor(np.zeros((1, 1, 5, 6))))
        with pytest.raises(ValueError, match="NCHW"):
            wavelet.dwt2d(Tensor(np.zeros((5, 6))))
        with pytest.raises(ValueError, match="divisible by 4"):
            wavelet.idwt2d(Tensor(np.zeros((1, 6, 3, 3))))

    def test_backwards_are_mutual_inverses(self):
        """d(sum dwt(x)^2)/dx = 2x because the transform is orthonormal."""
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(1, 2, 6, 6)), dtype=np.float64,
                   requires_grad=True)
        with Tape():
            loss = sum_all(square(wavelet.dwt2d(x)))
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)

    def test_idwt_gradient(self):
        rng = np.random.default_rng(6)
        y = Tensor(rng.normal(size=(1, 4, 3, 3)), dtype=np.float64,
                   requires_grad=True)
        with Tape():
            loss = sum_all(square(wavelet.idwt2d(y)))
        backward(loss)
        np.testing.assert_allclose(y.grad, 2 * y.data, rtol=1e-12)
