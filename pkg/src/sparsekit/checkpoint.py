"""Binary checkpoint format: dense f32, sparse bitmap, and int8 records.

Layout (little endian throughout):
  magic "POFA" | u16 version | stage string | model config blob |
  u32 tensor count | tensor records | metrics JSON blob | 32-byte config hash

Tensor record: name | u8 ndim | u32 dims | u8 storage kind | payload
  kind 0 dense-f32: raw f32 buffer
  kind 1 sparse:    bitmap (ceil(n/8) bytes, bit = nonzero) | u32 nnz | f32 payload
  kind 2 q8:        f32 scale | i32 zero point | u8 has_bitmap |
                    [bitmap | u32 nnz | int8 nonzero payload] or [int8 full payload]
Strings are u16 length-prefixed UTF-8; blobs are u32 length-prefixed.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .model import EncoderModel, ModelConfig, build_model

MAGIC = b"POFA"
VERSION = 1
DENSE_F32, SPARSE, Q8 = 0, 1, 2


class FormatError(ValueError):
    pass


@dataclass
class TensorRecord:
    name: str
    shape: tuple
    storage: int
    dense: Optional[np.ndarray] = None          # f32, dense
    bitmap: Optional[np.ndarray] = None         # bool, flat, True = nonzero
    payload_f32: Optional[np.ndarray] = None    # f32 nonzero values
    scale: float = 1.0
    zero_point: int = 0
    payload_i8: Optional[np.ndarray] = None     # int8 values

    @property
    def size(self) -> int:
        return int(math.prod(self.shape))

    def to_dense(self) -> np.ndarray:
        if self.storage == DENSE_F32:
            return self.dense.reshape(self.shape).copy()
        if self.storage == SPARSE:
            flat = np.zeros(self.size, dtype=np.float32)
            flat[self.bitmap] = self.payload_f32
            return flat.reshape(self.shape)
        flat = np.zeros(self.size, dtype=np.float32)
        if self.bitmap is not None:
            flat[self.bitmap] = self.payload_i8.astype(np.float32) * np.float32(self.scale)
        else:
            flat = (self.payload_i8.astype(np.float32) - np.float32(self.zero_point)) * np.float32(self.scale)
        return flat.reshape(self.shape)

    def payload_bytes(self) -> int:
        if self.storage == DENSE_F32:
            return 4 * self.size
        if self.storage == SPARSE:
            return 4 * int(self.payload_f32.size)
        return int(self.payload_i8.size)

    def bitmap_bytes(self) -> int:
        return (self.size + 7) // 8 if self.bitmap is not None else 0


@dataclass
class Checkpoint:
    stage: str
    model_config: ModelConfig
    tensors: Dict[str, TensorRecord]
    metrics: dict = field(default_factory=dict)
    config_hash: bytes = b"\x00" * 32


def dense_record(name: str, values: np.ndarray) -> TensorRecord:
    return TensorRecord(name, values.shape, DENSE_F32, dense=values.astype(np.float32).reshape(-1))


def sparse_record(name: str, values: np.ndarray) -> TensorRecord:
    flat = values.astype(np.float32).reshape(-1)
    bitmap = flat != 0
    return TensorRecord(name, values.shape, SPARSE, bitmap=bitmap, payload_f32=flat[bitmap])


def q8_record(name: str, values: np.ndarray, scale: float, with_bitmap: bool) -> TensorRecord:
    flat = values.astype(np.float32).reshape(-1)
    q = np.clip(np.round(flat / np.float32(scale)), -127, 127).astype(np.int8)
    if with_bitmap:
        bitmap = q != 0
        return TensorRecord(name, values.shape, Q8, bitmap=bitmap, scale=scale,
                            zero_point=0, payload_i8=q[bitmap])
    return TensorRecord(name, values.shape, Q8, scale=scale, zero_point=0, payload_i8=q)


def checkpoint_from_model(model: EncoderModel, stage: str, metrics: Optional[dict] = None,
                          config_hash: bytes = b"\x00" * 32,
                          q8_names: Optional[Dict[str, float]] = None) -> Checkpoint:
    """Dense by default; sparse when more than half zeros; q8 for listed names."""
    tensors: Dict[str, TensorRecord] = {}
    for name, p in model.parameters.items():
        vals = p.values
        if q8_names and name in q8_names:
            zero_frac = float((vals == 0).mean())
            tensors[name] = q8_record(name, vals, q8_names[name], with_bitmap=zero_frac > 0.5)
        elif float((vals == 0).mean()) > 0.5:
            tensors[name] = sparse_record(name, vals)
        else:
            tensors[name] = dense_record(name, vals)
    return Checkpoint(stage, model.config, tensors, metrics or {}, config_hash)


def model_from_checkpoint(ckpt: Checkpoint, head_kind: Optional[str] = None,
                          num_labels: Optional[int] = None, seed: int = 0) -> EncoderModel:
    """Rebuild a dense float32 model; missing head params are freshly seeded."""
    cfg = ckpt.model_config
    if head_kind is not None or num_labels is not None:
        from dataclasses import replace

        cfg = replace(cfg, head_kind=head_kind or cfg.head_kind,
                      num_labels=num_labels or cfg.num_labels)
    model = build_model(cfg, seed=seed)
    for name, rec in ckpt.tensors.items():
        if name in model.parameters:
            model.parameters[name].values = rec.to_dense()
    return model


# -- wire format ------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _pack_blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


_CONFIG_FIELDS = ("num_layers", "hidden", "heads", "ffn_dim", "vocab",
                  "max_seq", "has_pooler", "head_kind", "num_labels")


def _config_blob(cfg: ModelConfig) -> bytes:
    text = "\n".join(f"{k}={getattr(cfg, k)}" for k in _CONFIG_FIELDS)
    return text.encode("utf-8")


def _config_from_blob(blob: bytes) -> ModelConfig:
    kv = dict(line.split("=", 1) for line in blob.decode("utf-8").splitlines())
    return ModelConfig(
        num_layers=int(kv["num_layers"]), hidden=int(kv["hidden"]), heads=int(kv["heads"]),
        ffn_dim=int(kv["ffn_dim"]), vocab=int(kv["vocab"]), max_seq=int(kv["max_seq"]),
        has_pooler=kv["has_pooler"] == "True", head_kind=kv["head_kind"],
        num_labels=int(kv["num_labels"]))


def _pack_bitmap(bitmap: np.ndarray) -> bytes:
    return np.packbits(bitmap.astype(np.uint8)).tobytes()


def _unpack_bitmap(raw: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=n).astype(bool)


def serialize(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), _pack_str(ckpt.stage),
           _pack_blob(_config_blob(ckpt.model_config)),
           struct.pack("<I", len(ckpt.tensors))]
    for name, rec in ckpt.tensors.items():
        out.append(_pack_str(name))
        out.append(struct.pack("<B", len(rec.shape)))
        out.append(struct.pack(f"<{len(rec.shape)}I", *rec.shape))
        out.append(struct.pack("<B", rec.storage))
        if rec.storage == DENSE_F32:
            out.append(rec.dense.astype("<f4").tobytes())
        elif rec.storage == SPARSE:
            out.append(_pack_bitmap(rec.bitmap))
            out.append(struct.pack("<I", rec.payload_f32.size))
            out.append(rec.payload_f32.astype("<f4").tobytes())
        else:
            out.append(struct.pack("<fi", rec.scale, rec.zero_point))
            has_bitmap = rec.bitmap is not None
            out.append(struct.pack("<B", int(has_bitmap)))
            if has_bitmap:
                out.append(_pack_bitmap(rec.bitmap))
                out.append(struct.pack("<I", rec.payload_i8.size))
            out.append(rec.payload_i8.tobytes())
    out.append(_pack_blob(json.dumps(ckpt.metrics, sort_keys=True).encode("utf-8")))
    out.append(ckpt.config_hash)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def read_blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def deserialize(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic at offset 0")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    stage = r.read_str()
    cfg = _config_from_blob(r.read_blob())
    (count,) = r.unpack("<I")
    tensors: Dict[str, TensorRecord] = {}
    for _ in range(count):
        name = r.read_str()
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{ndim}I"))
        (storage,) = r.unpack("<B")
        n = int(math.prod(shape))
        if storage == DENSE_F32:
            dense = np.frombuffer(r.take(4 * n), dtype="<f4").copy()
            rec = TensorRecord(name, shape, DENSE_F32, dense=dense)
        elif storage == SPARSE:
            bitmap = _unpack_bitmap(r.take((n + 7) // 8), n)
            (nnz,) = r.unpack("<I")
            if nnz != int(bitmap.sum()):
                raise FormatError(f"bitmap popcount mismatch at offset {r.pos}")
            payload = np.frombuffer(r.take(4 * nnz), dtype="<f4").copy()
            rec = TensorRecord(name, shape, SPARSE, bitmap=bitmap, payload_f32=payload)
        elif storage == Q8:
            scale, zp = r.unpack("<fi")
            (has_bitmap,) = r.unpack("<B")
            if has_bitmap:
                bitmap = _unpack_bitmap(r.take((n + 7) // 8), n)
                (nnz,) = r.unpack("<I")
                if nnz != int(bitmap.sum()):
                    raise FormatError(f"bitmap popcount mismatch at offset {r.pos}")
                payload = np.frombuffer(r.take(nnz), dtype=np.int8).copy()
                rec = TensorRecord(name, shape, Q8, bitmap=bitmap, scale=scale,
                                   zero_point=zp, payload_i8=payload)
            else:
                payload = np.frombuffer(r.take(n), dtype=np.int8).copy()
                rec = TensorRecord(name, shape, Q8, scale=scale, zero_point=zp,
                                   payload_i8=payload)
        else:
            raise FormatError(f"unknown storage kind {storage} at offset {r.pos}")
        tensors[name] = rec
    metrics = json.loads(r.read_blob().decode("utf-8"))
    config_hash = r.take(32)
    return Checkpoint(stage, cfg, tensors, metrics, config_hash)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
