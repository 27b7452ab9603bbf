"""Snapshot format: bit-exact round trips and the corruption error taxonomy."""

import json
import struct

import numpy as np
import pytest

from mwdcnn.checkpoint import (MAGIC, VERSION, BadMagicError, CheckpointError,
                               ManifestError, TruncatedPayloadError,
                               UnsupportedVersionError, load_checkpoint,
                               save_checkpoint)
from mwdcnn.model import ModelConfig, MwdcnnModel
from mwdcnn.training import AdamState


def toy_model(seed=0, precision=32):
    cfg = ModelConfig(in_channels=1, base_channels=8, kernel_size=3,
                      precision=precision, seed=seed)
    model = MwdcnnModel(cfg)
    # give every tensor (including the zero-init conv) distinct values
    rng = np.random.default_rng(seed + 100)
    for _, p in model.params():
        p.data[:] = rng.normal(size=p.data.shape).astype(p.data.dtype)
    return model


@pytest.fixture
def ckpt_path(tmp_path):
    return tmp_path / "model.ckpt"


class TestRoundTrip:
    @pytest.mark.parametrize("precision", [32, 64])
    def test_parameters_bit_identical(self, ckpt_path, precision):
        model = toy_model(precision=precision)
        save_checkpoint(model, ckpt_path)
        loaded, blob = load_checkpoint(ckpt_path)
        assert blob is None
        for (n1, p1), (n2, p2) in zip(model.params(), loaded.params()):
            assert n1 == n2
            assert p1.data.dtype == p2.data.dtype
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_forward_outputs_bit_identical(self, ckpt_path):
        from mwdcnn.engine import Tensor
        model = toy_model(seed=3)
        save_checkpoint(model, ckpt_path)
        loaded, _ = load_checkpoint(ckpt_path)
        x = np.random.default_rng(1).uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
        out1 = model(Tensor(x)).data
        out2 = loaded(Tensor(x)).data
        np.testing.assert_array_equal(out1, out2)

    def test_config_restored(self, ckpt_path):
        model = toy_model()
        save_checkpoint(model, ckpt_path)
        loaded, _ = load_checkpoint(ckpt_path)
        assert loaded.config == model.config

    def test_optimizer_state_round_trips(self, ckpt_path):
        model = toy_model(seed=5)
        params = [p for _, p in model.params()]
        state = AdamState(params)
        state.t = 17
        rng = np.random.default_rng(2)
        for m, v in zip(state.m, state.v):
            m[:] = rng.normal(size=m.shape)
            v[:] = rng.uniform(0.1, 1.0, size=v.shape)
        save_checkpoint(model, ckpt_path, optimizer=state)
        _, blob = load_checkpoint(ckpt_path)
        assert blob.step == 17
        for a, b in zip(state.m, blob.m):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(state.v, blob.v):
            np.testing.assert_array_equal(a, b)

    def test_loaded_grads_are_fresh_zeros(self, ckpt_path):
        model = toy_model()
        for _, p in model.params():
            p.grad[:] = 1.0
        save_checkpoint(model, ckpt_path)
        loaded, _ = load_checkpoint(ckpt_path)
        for _, p in loaded.params():
            assert not p.grad.any()

    def test_file_layout_prefix(self, ckpt_path):
        save_checkpoint(toy_model(), ckpt_path)
        raw = ckpt_path.read_bytes()
        assert raw[:4] == MAGIC
        version, header_len = struct.unpack("<II", raw[4:12])
        assert version == VERSION
        header = json.loads(raw[12:12 + header_len])
        assert header["dtype"] == "<f4"
        assert header["tensors"][0]["offset"] == 0


class TestCorruption:
    def make(self, path, optimizer=False):
        model = toy_model()
        if optimizer:
            state = AdamState([p for _, p in model.params()])
            save_checkpoint(model, path, optimizer=state)
        else:
            save_checkpoint(model, path)
        return path.read_bytes()

    def test_bad_magic(self, ckpt_path):
        raw = self.make(ckpt_path)
        ckpt_path.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(BadMagicError):
            load_checkpoint(ckpt_path)

    def test_unsupported_version(self, ckpt_path):
        raw = self.make(ckpt_path)
        bumped = raw[:4] + struct.pack("<I", VERSION + 1) + raw[8:]
        ckpt_path.write_bytes(bumped)
        with pytest.raises(UnsupportedVersionError):
            load_checkpoint(ckpt_path)

    def test_truncated_payload(self, ckpt_path):
        raw = self.make(ckpt_path)
        ckpt_path.write_bytes(raw[:-100])
        with pytest.raises(TruncatedPayloadError):
            load_checkpoint(ckpt_path)

    def test_truncated_header(self, ckpt_path):
        raw = self.make(ckpt_path)
        ckpt_path.write_bytes(raw[:8])
        with pytest.raises(TruncatedPayloadError):
            load_checkpoint(ckpt_path)

    def test_trailing_garbage(self, ckpt_path):
        raw = self.make(ckpt_path)
        ckpt_path.write_bytes(raw + b"\x00" * 8)
        with pytest.raises(ManifestError, match="trailing"):
            load_checkpoint(ckpt_path)

    def test_header_not_json(self, ckpt_path):
        raw = self.make(ckpt_path)
        _, header_len = struct.unpack("<II", raw[4:12])
        mangled = raw[:12] + b"{" * header_len + raw[12 + header_len:]
        ckpt_path.write_bytes(mangled)
        with pytest.raises(ManifestError, match="JSON"):
            load_checkpoint(ckpt_path)

    def rewrite_header(self, raw, mutate):
        _, header_len = struct.unpack("<II", raw[4:12])
        header = json.loads(raw[12:12 + header_len])
        mutate(header)
        new_header = json.dumps(header).encode()
        return (raw[:4] + struct.pack("<II", VERSION, len(new_header))
                + new_header + raw[12 + header_len:])

    def test_wrong_tensor_name(self, ckpt_path):
        raw = self.make(ckpt_path)

        def mutate(h):
            h["tensors"][0]["name"] = "not.a.param"

        ckpt_path.write_bytes(self.rewrite_header(raw, mutate))
        with pytest.raises(ManifestError, match="belongs"):
            load_checkpoint(ckpt_path)

    def test_wrong_shape(self, ckpt_path):
        raw = self.make(ckpt_path)

        def mutate(h):
            h["tensors"][0]["shape"] = [1, 1, 1, 1]

        ckpt_path.write_bytes(self.rewrite_header(raw, mutate))
        with pytest.raises(ManifestError):
            load_checkpoint(ckpt_path)

    def test_overlapping_offsets(self, ckpt_path):
        raw = self.make(ckpt_path)

        def mutate(h):
            h["tensors"][1]["offset"] = 0

        ckpt_path.write_bytes(self.rewrite_header(raw, mutate))
        with pytest.raises(ManifestError, match="tile"):
            load_checkpoint(ckpt_path)

    def test_missing_tensor(self, ckpt_path):
        raw = self.make(ckpt_path)

        def mutate(h):
            h["tensors"].pop()

        ckpt_path.write_bytes(self.rewrite_header(raw, mutate))
        with pytest.raises(ManifestError, match="expected"):
            load_checkpoint(ckpt_path)

    def test_dtype_precision_mismatch(self, ckpt_path):
        raw = self.make(ckpt_path)

        def mutate(h):
            h["dtype"] = "<f8"

        ckpt_path.write_bytes(self.rewrite_header(raw, mutate))
        with pytest.raises(ManifestError, match="precision"):
            load_checkpoint(ckpt_path)

    def test_all_errors_share_base_class(self, ckpt_path):
        raw = self.make(ckpt_path)
        ckpt_path.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(CheckpointError):
            load_checkpoint(ckpt_path)
