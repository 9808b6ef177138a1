"""Binary checkpoints for classifiers (``CPTH``) and decoders (``CPTD``).

Layout, little-endian throughout::

    magic        4 bytes   b"CPTH" or b"CPTD"
    version      u32       currently 1
    layer_index  u32       CPTD only: classifier layer the decoder reads
    n_layers     u32
    per layer:
      in_dim     u32
      out_dim    u32
      activation u8        0 = identity, 1 = relu
      weights    f64[out_dim * in_dim]   row-major
      bias       f64[out_dim]
"""
import hashlib
import struct

import numpy as np

from .diffcore import LayerParams
from .errors import FormatError

VERSION = 1
CLASSIFIER_MAGIC = b"CPTH"
DECODER_MAGIC = b"CPTD"
_ACT_TAGS = {"identity": 0, "relu": 1}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


def encode_layers(magic: bytes, layers, layer_index=None) -> bytes:
    out = [magic, struct.pack("<I", VERSION)]
    if magic == DECODER_MAGIC:
        out.append(struct.pack("<I", layer_index))
    out.append(struct.pack("<I", len(layers)))
    for layer in layers:
        out.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_TAGS[layer.activation]))
        out.append(layer.weights.astype("<f8").tobytes())
        out.append(layer.bias.astype("<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.blob):
            raise FormatError(
                f"truncated checkpoint at offset {self.pos}: need {size} bytes for {what}, "
                f"{len(self.blob) - self.pos} left"
            )
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_layers(blob: bytes, magic: bytes):
    """Parse a checkpoint; returns ``(layers, layer_index)``."""
    r = _Reader(blob)
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r} at offset 0, expected {magic!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    layer_index = None
    if magic == DECODER_MAGIC:
        (layer_index,) = r.unpack("<I", "layer index")
    (count,) = r.unpack("<I", "layer count")
    layers = []
    for k in range(count):
        at = r.pos
        in_dim, out_dim, tag = r.unpack("<IIB", f"layer {k} header")
        if tag not in _TAG_ACTS or in_dim == 0 or out_dim == 0:
            raise FormatError(f"invalid layer {k} header at offset {at}")
        W = np.frombuffer(r.take(8 * in_dim * out_dim, f"layer {k} weights"), dtype="<f8")
        b = np.frombuffer(r.take(8 * out_dim, f"layer {k} bias"), dtype="<f8")
        layers.append(
            LayerParams(W.reshape(out_dim, in_dim).astype(np.float64), b.astype(np.float64), _TAG_ACTS[tag])
        )
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes at offset {r.pos}")
    return layers, layer_index


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_layers(CLASSIFIER_MAGIC, model.layers))


def load_model(path):
    from .classifier import MlpModel

    with open(path, "rb") as fh:
        layers, _ = decode_layers(fh.read(), CLASSIFIER_MAGIC)
    return MlpModel(layers)


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
