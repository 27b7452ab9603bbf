"""Binary model snapshots with an inspectable JSON header.

Layout: 4 magic bytes "MWDC", a little-endian uint32 format version, a
little-endian uint32 header length, the UTF-8 JSON header, then the raw
payload. The header carries the model config, the element type tag and a
tensor manifest (name, shape, byte offset, byte count). The payload is
the concatenation of every parameter tensor's little-endian IEEE-754
bytes in manifest order, followed by the optimizer's first and second
moments when those are saved.

Round trips are bit-identical: loading never re-encodes values, it just
copies payload bytes back into fresh parameter buffers.
"""

import json
import struct
import numpy as np
from dataclasses import dataclass
from pathlib import Path

from .model import ModelConfig, MwdcnnModel

MAGIC = b"MWDC"
VERSION = 1

_DTYPE_TAGS = {32: "<f4", 64: "<f8"}


class CheckpointError(Exception):
    """Base class for malformed or unreadable snapshot files."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    pass


@dataclass
class OptimizerBlob:
    """Adam moments in parameter order, detached from any model."""
    step: int
    m: list
    v: list


def save_checkpoint(model: MwdcnnModel, path, optimizer=None) -> None:
    """Write the model (and optionally Adam state) to `path`.

    `optimizer` is anything exposing `t`, `m` and `v` (step count and the
    two moment lists aligned with `model.params()` order).
    """
    tag = _DTYPE_TAGS[model.config.precision]
    named = [(name, p.data) for name, p in model.params()]
    if optimizer is not None:
        names = [name for name, _ in model.params()]
        if len(optimizer.m) != len(names) or len(optimizer.v) != len(names):
            raise ValueError("optimizer moment lists do not match the parameter list")
        named += [("opt.m." + n, m) for n, m in zip(names, optimizer.m)]
        named += [("opt.v." + n, v) for n, v in zip(names, optimizer.v)]

    manifest = []
    chunks = []
    offset = 0
    for name, arr in named:
        blob = np.ascontiguousarray(arr).astype(tag, copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)

    header = {
        "config": model.config.to_dict(),
        "dtype": tag,
        "tensors": manifest,
        "optimizer": {"step": int(optimizer.t)} if optimizer is not None else None,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in chunks:
            fh.write(blob)


def _parse_header(raw: bytes):
    if len(raw) < 12:
        raise TruncatedPayloadError(f"file is {len(raw)} bytes, shorter than the fixed prefix")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {raw[:4]!r}")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version}, this build reads {VERSION}")
    if len(raw) < 12 + header_len:
        raise TruncatedPayloadError("header extends past the end of the file")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"header is not valid JSON: {exc}") from exc
    return header, raw[12 + header_len:]


def load_checkpoint(path):
    """Read a snapshot; returns (model, OptimizerBlob or None)."""
    raw = Path(path).read_bytes()
    header, payload = _parse_header(raw)

    tag = header.get("dtype")
    if tag not in _DTYPE_TAGS.values():
        raise ManifestError(f"unknown element type tag {tag!r}")
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ManifestError(f"bad config block: {exc}") from exc
    if _DTYPE_TAGS[config.precision] != tag:
        raise ManifestError(
            f"element type {tag} does not match precision {config.precision}")

    model = MwdcnnModel(config)
    params = model.params()
    base = [name for name, _ in params]
    expected = list(base)
    opt_header = header.get("optimizer")
    if opt_header is not None:
        expected += ["opt.m." + n for n in base] + ["opt.v." + n for n in base]

    manifest = header.get("tensors")
    if not isinstance(manifest, list) or len(manifest) != len(expected):
        got = len(manifest) if isinstance(manifest, list) else "no"
        raise ManifestError(f"manifest lists {got} tensors, expected {len(expected)}")

    itemsize = np.dtype(tag).itemsize
    offset = 0
    arrays = {}
    for entry, want_name in zip(manifest, expected):
        name, shape = entry.get("name"), tuple(entry.get("shape", ()))
        if name != want_name:
            raise ManifestError(f"manifest entry {name!r} where {want_name!r} belongs")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * itemsize
        if entry.get("offset") != offset or entry.get("nbytes") != nbytes:
            raise ManifestError(
                f"{name}: offset/size {entry.get('offset')}/{entry.get('nbytes')}"
                f" does not tile the payload (expected {offset}/{nbytes})")
        end = offset + nbytes
        if end > len(payload):
            raise TruncatedPayloadError(
                f"{name}: needs bytes up to {end}, payload has {len(payload)}")
        arrays[name] = np.frombuffer(payload, dtype=tag, count=count,
                                     offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(payload):
        raise ManifestError(f"{len(payload) - offset} trailing payload bytes")

    for name, p in params:
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise ManifestError(f"{name}: shape {arr.shape} vs model {p.data.shape}")
        p.data = arr
        p.grad = np.zeros_like(arr)

    blob = None
    if opt_header is not None:
        blob = OptimizerBlob(step=int(opt_header["step"]),
                             m=[arrays["opt.m." + n] for n, _ in params],
                             v=[arrays["opt.v." + n] for n, _ in params])
    return model, blob
