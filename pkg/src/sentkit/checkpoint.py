"""Binary checkpoint container for encoders. Layout is documented in docs/checkpoint_format.md."""

import json
import struct
import zlib

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION
from .encoders import ENCODERS
from .errors import CheckpointError
from .text import Vocabulary

MAGIC = b"SENTKIT\x00"


def _block(payload):
    return struct.pack("<I", len(payload)) + payload


def dumps(encoder):
    config = {"kind": encoder.kind, "config": encoder.config_dict(),
              "param_floats": encoder.num_param_floats()}
    parts = [MAGIC, struct.pack("<I", CHECKPOINT_FORMAT_VERSION),
             _block(json.dumps(config, sort_keys=True).encode()),
             _block(json.dumps(encoder.vocab.to_dict(), ensure_ascii=False).encode()),
             struct.pack("<I", len(encoder.params))]
    for name, p in encoder.params.items():
        raw = name.encode()
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(encoder, path):
    with open(path, "wb") as fh:
        fh.write(dumps(encoder))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self):
        (n,) = self.unpack("<I")
        return self.take(n)


def _parse(buf, header_only=False):
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a sentkit checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(expected {CHECKPOINT_FORMAT_VERSION})")
    try:
        meta = json.loads(r.block())
        if header_only:
            return meta, None, None
        vocab = json.loads(r.block())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if len(buf) < 4 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupt file)")
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
    if r.pos != len(buf) - 4:
        raise CheckpointError("trailing bytes after parameter blob")
    return meta, vocab, params


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    meta, vocab_d, params = _parse(buf)
    try:
        cls, cfg_cls = ENCODERS[meta["kind"]]
    except KeyError:
        raise CheckpointError(f"unknown encoder kind {meta.get('kind')!r}") from None
    encoder = cls(cfg_cls(**meta["config"]), Vocabulary.from_dict(vocab_d))
    if set(params) != set(encoder.params):
        raise CheckpointError("checkpoint parameters do not match the encoder architecture")
    for name, arr in params.items():
        p = encoder.params[name]
        if p.shape != arr.shape:
            raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {p.shape}")
        p.data = np.array(arr, dtype=np.float32)
        p.grad = np.zeros_like(p.data)
    return encoder


def checkpoint_metadata(path):
    """Kind, config and parameter count without loading the parameters."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    meta, _, _ = _parse(buf, header_only=True)
    meta = dict(meta)
    meta["embed_dim"] = meta["config"]["embed_dim"]
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    return meta
