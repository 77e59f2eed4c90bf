"""Tiny transformer encoder with MLM and classification heads.

Parameter names are a stable public contract:
  embeddings.{token|position}, embeddings.ln.{gain|bias},
  layer.{i}.{q|k|v|attn_out|ffn_in|ffn_out}.{weight|bias},
  layer.{i}.{ln1|ln2}.{gain|bias},
  pooler.{weight|bias}, mlm_head.{weight|bias}, classify_head.{weight|bias}
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden: int
    heads: int
    ffn_dim: int
    vocab: int
    max_seq: int
    has_pooler: bool = True
    head_kind: str = "mlm"  # mlm | classify | both
    num_labels: int = 2

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.vocab < 8:
            raise ConfigError("vocab must be >= 8")
        if self.max_seq < 4:
            raise ConfigError("max_seq must be >= 4")
        if self.head_kind not in ("mlm", "classify", "both"):
            raise ConfigError(f"unknown head kind {self.head_kind!r}")


def parameter_specs(config: ModelConfig) -> List[tuple]:
    """(name, shape, init scheme) for every parameter, in stable order."""
    h, f, v = config.hidden, config.ffn_dim, config.vocab
    specs = [
        ("embeddings.token", (v, h), "normal-0.02"),
        ("embeddings.position", (config.max_seq, h), "normal-0.02"),
        ("embeddings.ln.gain", (h,), "ones"),
        ("embeddings.ln.bias", (h,), "zeros"),
    ]
    for i in range(config.num_layers):
        p = f"layer.{i}"
        for part, shape in (("q", (h, h)), ("k", (h, h)), ("v", (h, h)),
                            ("attn_out", (h, h)), ("ffn_in", (h, f)), ("ffn_out", (f, h))):
            specs.append((f"{p}.{part}.weight", shape, "normal-0.02"))
            specs.append((f"{p}.{part}.bias", (shape[1],), "zeros"))
        for ln in ("ln1", "ln2"):
            specs.append((f"{p}.{ln}.gain", (h,), "ones"))
            specs.append((f"{p}.{ln}.bias", (h,), "zeros"))
    if config.has_pooler:
        specs.append(("pooler.weight", (h, h), "normal-0.02"))
        specs.append(("pooler.bias", (h,), "zeros"))
    if config.head_kind in ("mlm", "both"):
        specs.append(("mlm_head.weight", (h, v), "normal-0.02"))
        specs.append(("mlm_head.bias", (v,), "zeros"))
    if config.head_kind in ("classify", "both"):
        specs.append(("classify_head.weight", (h, config.num_labels), "normal-0.02"))
        specs.append(("classify_head.bias", (config.num_labels,), "zeros"))
    return specs


def prunable_parameter_names(config: ModelConfig) -> List[str]:
    """Encoder linear weights plus the pooler weight; never embeddings,
    biases, layer norms, or head weights."""
    names = []
    for i in range(config.num_layers):
        for part in ("q", "k", "v", "attn_out", "ffn_in", "ffn_out"):
            names.append(f"layer.{i}.{part}.weight")
    if config.has_pooler:
        names.append("pooler.weight")
    return names


@dataclass
class ForwardResult:
    logits: Tensor
    loss: Tensor
    degenerate: bool = False


class EncoderModel:
    def __init__(self, config: ModelConfig, parameters: Dict[str, Tensor]):
        self.config = config
        self.parameters = parameters

    def prunable_parameters(self) -> List[str]:
        return prunable_parameter_names(self.config)

    def clone(self) -> "EncoderModel":
        params = {n: Tensor(p.values.copy(), requires_grad=True) for n, p in self.parameters.items()}
        return EncoderModel(self.config, params)

    def astype(self, dtype) -> "EncoderModel":
        params = {n: Tensor(p.values.astype(dtype), requires_grad=True) for n, p in self.parameters.items()}
        return EncoderModel(self.config, params)

    def zero_grads(self):
        for p in self.parameters.values():
            p.zero_grad()

    # -- forward ----------------------------------------------------------

    def _linear(self, x: Tensor, prefix: str, quant=None) -> Tensor:
        w = self.parameters[prefix + ".weight"]
        b = self.parameters[prefix + ".bias"]
        if quant is not None:
            w = quant.quantize_weight(prefix + ".weight", w)
        out = T.add(T.matmul(x, w), b)
        if quant is not None and (prefix + ".weight") in quant.weight_names:
            out = quant.quantize_activation(prefix + ".out", out)
        return out

    def _apply_ln(self, x: Tensor, prefix: str) -> Tensor:
        normed = T.layer_norm_last_axis(x)
        return T.add(T.mul(normed, self.parameters[prefix + ".gain"]),
                     self.parameters[prefix + ".bias"])

    def encode(self, input_ids: np.ndarray, attention_mask: np.ndarray, quant=None) -> Tensor:
        input_ids = np.asarray(input_ids)
        cfg = self.config
        if input_ids.min() < 0 or input_ids.max() >= cfg.vocab:
            raise DataError("token id out of vocab range")
        batch, seq = input_ids.shape
        if seq > cfg.max_seq:
            raise DataError(f"sequence length {seq} exceeds max_seq {cfg.max_seq}")
        dtype = self.parameters["embeddings.token"].dtype
        tok = T.embedding_lookup(self.parameters["embeddings.token"], input_ids)
        pos = T.embedding_lookup(self.parameters["embeddings.position"],
                                 np.broadcast_to(np.arange(seq), (batch, seq)))
        x = self._apply_ln(T.add(tok, pos), "embeddings.ln")

        dh = cfg.hidden // cfg.heads
        neg = (1.0 - np.asarray(attention_mask)) * -1e9
        attn_bias = Tensor(neg[:, None, None, :].astype(dtype))

        for i in range(cfg.num_layers):
            p = f"layer.{i}"

            def split_heads(t):
                t = T.reshape(t, (batch, seq, cfg.heads, dh))
                return T.transpose(t, (0, 2, 1, 3))

            q = split_heads(self._linear(x, f"{p}.q", quant))
            k = split_heads(self._linear(x, f"{p}.k", quant))
            v = split_heads(self._linear(x, f"{p}.v", quant))
            scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
            probs = T.softmax_last_axis(T.add(scores, attn_bias))
            ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (batch, seq, cfg.hidden))
            x = self._apply_ln(T.add(x, self._linear(ctx, f"{p}.attn_out", quant)), f"{p}.ln1")
            hmid = T.gelu(self._linear(x, f"{p}.ffn_in", quant))
            x = self._apply_ln(T.add(x, self._linear(hmid, f"{p}.ffn_out", quant)), f"{p}.ln2")
        return x

    def forward_mlm(self, batch, quant=None) -> ForwardResult:
        if self.config.head_kind not in ("mlm", "both"):
            raise ConfigError("model has no MLM head")
        hidden = self.encode(batch.input_ids, batch.attention_mask, quant)
        logits = T.add(T.matmul(hidden, self.parameters["mlm_head.weight"]),
                       self.parameters["mlm_head.bias"])
        b, s = batch.input_ids.shape
        flat = T.reshape(logits, (b * s, self.config.vocab))
        loss = T.cross_entropy_with_targets(flat, batch.labels.reshape(-1))
        return ForwardResult(logits, loss, degenerate=loss.degenerate)

    def forward_classify(self, batch, quant=None) -> ForwardResult:
        if self.config.head_kind not in ("classify", "both"):
            raise ConfigError("model has no classification head")
        hidden = self.encode(batch.input_ids, batch.attention_mask, quant)
        cls = T.take_rows(hidden, 0, axis=1)
        if self.config.has_pooler:
            cls = T.gelu(self._linear(cls, "pooler", quant))
        logits = T.add(T.matmul(cls, self.parameters["classify_head.weight"]),
                       self.parameters["classify_head.bias"])
        loss = T.cross_entropy_with_targets(logits, batch.labels)
        return ForwardResult(logits, loss, degenerate=loss.degenerate)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> EncoderModel:
    """Deterministic init: weights N(0, 0.02^2), biases zero, LN gains one."""
    params: Dict[str, Tensor] = {}
    for idx, (name, shape, scheme) in enumerate(parameter_specs(config)):
        sub = int(np.random.SeedSequence((seed, idx)).generate_state(1)[0])
        params[name] = T.seeded_init(shape, scheme, sub, dtype=dtype)
        params[name].name = name
    return EncoderModel(config, params)
