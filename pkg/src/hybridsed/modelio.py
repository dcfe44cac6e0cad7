"""Binary model files.

Layout (little-endian)::

    "SEDM" | u32 version | u8 kind | u32 visible_dim | u32 hidden_dim | u32 context
    f64 arrays, row-major, in dataclass field order
    standardization mean and std (RBM / cRBM)

Kinds: 0 RBM, 1 cRBM, 2 PCA (visible = input dim, hidden = components,
context = owning cRBM's context; trailing u8 rank-deficiency flag), 3 linear
frame classifier (visible = features, hidden = classes, context = frame
context; trailing u32 length + newline-joined UTF-8 class names).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from hybridsed.boundaries import PcaModel
from hybridsed.errors import DataError
from hybridsed.labeling import LinearClassifier
from hybridsed.models import CrbmParams, RbmParams

MAGIC = b"SEDM"
VERSION = 1
KIND_RBM, KIND_CRBM, KIND_PCA, KIND_CLASSIFIER = 0, 1, 2, 3

_HEADER = struct.Struct("<4sIBIII")


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def model_bytes(obj, context: int = 0) -> bytes:
    if isinstance(obj, RbmParams):
        head = _HEADER.pack(MAGIC, VERSION, KIND_RBM, obj.visible_dim, obj.hidden_dim, 0)
        body = [obj.W, obj.b_hidden, obj.b_visible, obj.sigma, obj.mean, obj.std]
        return head + b"".join(_f64(a) for a in body)
    if isinstance(obj, CrbmParams):
        head = _HEADER.pack(MAGIC, VERSION, KIND_CRBM, obj.visible_dim, obj.hidden_dim,
                            obj.context_frames)
        body = [obj.W, obj.A, obj.b_hidden, obj.b_visible_static, obj.A_vis, obj.mean, obj.std]
        return head + b"".join(_f64(a) for a in body)
    if isinstance(obj, PcaModel):
        head = _HEADER.pack(MAGIC, VERSION, KIND_PCA, obj.input_dim, obj.n_components, context)
        body = b"".join(_f64(a) for a in (obj.mean, obj.components, obj.explained_variance))
        return head + body + struct.pack("<B", int(obj.rank_deficient))
    if isinstance(obj, LinearClassifier):
        head = _HEADER.pack(MAGIC, VERSION, KIND_CLASSIFIER, obj.n_features,
                            len(obj.class_names), obj.context)
        body = b"".join(_f64(a) for a in (obj.weights, obj.bias, obj.feature_mean, obj.feature_std))
        names = "\n".join(obj.class_names).encode("utf-8")
        return head + body + struct.pack("<I", len(names)) + names
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_model(path, obj, context: int = 0):
    Path(path).write_bytes(model_bytes(obj, context))


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.path}: truncated model file")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def array(self, *shape):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_model(path):
    """Read any model file; returns ``(obj, context)``."""
    raw = Path(path).read_bytes()
    rd = _Reader(raw, path)
    magic, version, kind, vis, hid, ctx = rd.unpack(_HEADER.format)
    if magic != MAGIC:
        raise DataError(f"{path}: not a model file (magic {magic!r})")
    if version != VERSION:
        raise DataError(f"{path}: unsupported model version {version}")

    if kind == KIND_RBM:
        obj = RbmParams(rd.array(vis, hid), rd.array(hid), rd.array(vis), rd.array(vis),
                        rd.array(vis), rd.array(vis))
    elif kind == KIND_CRBM:
        W = rd.array(vis, hid)
        A = rd.array(vis * ctx, hid)
        bh, bv = rd.array(hid), rd.array(vis)
        A_vis = rd.array(vis * ctx, vis)
        obj = CrbmParams(W, A, bh, bv, A_vis, ctx, rd.array(vis), rd.array(vis))
    elif kind == KIND_PCA:
        mean, comps, var = rd.array(vis), rd.array(hid, vis), rd.array(hid)
        (flag,) = rd.unpack("<B")
        obj = PcaModel(mean, comps, var, bool(flag))
    elif kind == KIND_CLASSIFIER:
        W, b = rd.array(vis, hid), rd.array(hid)
        mean, std = rd.array(vis), rd.array(vis)
        (n,) = rd.unpack("<I")
        names = rd.take(n).decode("utf-8").split("\n") if n else []
        obj = LinearClassifier(W, b, names, mean, std, ctx)
    else:
        raise DataError(f"{path}: unknown model kind {kind}")
    if rd.pos != len(raw):
        raise DataError(f"{path}: {len(raw) - rd.pos} trailing bytes")
    return obj, ctx
