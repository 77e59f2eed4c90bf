"""Adam with decoupled weight decay, aware of pruning masks."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .pruning import MaskSet, masked_grad
from .tensor import Tensor


class Adam:
    """Decoupled weight decay hits only 2-D weight matrices; masked
    positions receive neither gradient updates nor decay."""

    def __init__(self, parameters: Dict[str, Tensor], weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.parameters = parameters
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.values) for n, p in parameters.items()}
        self.v = {n: np.zeros_like(p.values) for n, p in parameters.items()}

    def zero_grad(self):
        for p in self.parameters.values():
            p.zero_grad()

    def step(self, lr: float, masks: Optional[MaskSet] = None):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.parameters.items():
            g = p.grad
            if g is None:
                continue
            mask = masks[name] if masks is not None and name in masks else None
            if mask is not None:
                g = masked_grad(g, mask)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and name.endswith(".weight") and p.values.ndim == 2:
                update = update + lr * self.weight_decay * p.values
            if mask is not None:
                # masked positions get no update of any kind, even from stale
                # momentum accumulated before the pattern froze
                update = update * mask
            p.values -= update.astype(p.values.dtype, copy=False)
