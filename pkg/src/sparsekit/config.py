"""Stage configuration: dataclass, file parser, and desk-scale defaults.

Config files are line oriented: [section] headers with key = value pairs.
Unknown sections or keys are errors.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict, replace
from typing import Optional

from .distill import DistillConfig
from .model import ConfigError, ModelConfig
from .pruning import SparsitySchedule
from .schedule import LrSchedule, RewindWindow

STAGES = ("teacher-prep", "student-prune", "transfer", "qat", "finetune-prune-baseline")


@dataclass(frozen=True)
class DataConfig:
    corpus_seed: int = 7
    num_sequences: int = 400
    num_examples: int = 1000
    num_labels: int = 3


@dataclass(frozen=True)
class StageConfig:
    stage: str
    model: ModelConfig
    steps: int
    batch_size: int
    seq_len: int
    seed: int
    lr: float
    weight_decay: float
    warmup_steps: int
    distill: DistillConfig
    pruning: Optional[SparsitySchedule] = None
    data: DataConfig = field(default_factory=DataConfig)
    kd_enabled: bool = True
    lrr_enabled: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.stage in ("student-prune", "finetune-prune-baseline") and self.pruning is None:
            raise ConfigError(f"stage {self.stage} requires a pruning section")
        if self.stage == "teacher-prep" and self.pruning is not None:
            raise ConfigError("teacher-prep takes no pruning section")
        if self.seq_len > self.model.max_seq:
            raise ConfigError("seq_len exceeds model max_seq")

    def lr_schedule(self) -> LrSchedule:
        rewind = None
        if self.lrr_enabled and self.pruning is not None:
            rewind = RewindWindow(self.pruning.start_step, self.pruning.interval,
                                  self.pruning.end_step)
        return LrSchedule(self.lr, self.warmup_steps, self.steps, rewind)

    def digest(self) -> bytes:
        return hashlib.sha256(repr(asdict(self)).encode("utf-8")).digest()


def default_config(stage: str, seed: int = 1, **overrides) -> StageConfig:
    """Desk-scale defaults: the reference step counts divided by 1000
    (100 steps total, prune window 0-50, mask freeze at 80, interval 1),
    batch 16, loss weights 0.5/0.5 at temperature 2."""
    model = ModelConfig(num_layers=2, hidden=32, heads=4, ffn_dim=64,
                        vocab=64, max_seq=32, has_pooler=True,
                        head_kind="mlm", num_labels=3)
    pruning = None
    distill = DistillConfig(temperature=2.0, lambda_pt=0.5, lambda_kd=0.5)
    if stage in ("student-prune", "finetune-prune-baseline"):
        pruning = SparsitySchedule(initial_sparsity=0.0, final_sparsity=0.9,
                                   start_step=0, policy_end_step=50,
                                   end_step=80, interval=1)
    steps, lr = 100, 0.01
    if stage in ("transfer", "qat", "finetune-prune-baseline"):
        distill = DistillConfig(temperature=2.0, lambda_pt=0.0, lambda_kd=1.0)
        model = replace(model, head_kind="classify")
        if stage == "qat":
            lr = 1e-4  # separate low-lr session on an already fine-tuned model
        else:
            steps = 200
    cfg = StageConfig(stage=stage, model=model, steps=steps, batch_size=16,
                      seq_len=16, seed=seed, lr=lr, weight_decay=0.01,
                      warmup_steps=1, distill=distill, pruning=pruning)
    return replace(cfg, **overrides) if overrides else cfg


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(v: str) -> bool:
    if v.lower() not in _BOOL:
        raise ConfigError(f"expected boolean, got {v!r}")
    return _BOOL[v.lower()]


_SCHEMA = {
    "run": {"stage": str, "steps": int, "batch_size": int, "seq_len": int,
            "seed": int, "log_every": int, "kd": _parse_bool, "lrr": _parse_bool},
    "model": {"num_layers": int, "hidden": int, "heads": int, "ffn_dim": int,
              "vocab": int, "max_seq": int, "has_pooler": _parse_bool,
              "head_kind": str, "num_labels": int},
    "optimizer": {"lr": float, "weight_decay": float},
    "schedule": {"warmup_steps": int},
    "distill": {"temperature": float, "lambda_pt": float, "lambda_kd": float},
    "pruning": {"initial_sparsity": float, "final_sparsity": float, "start_step": int,
                "policy_end_step": int, "end_step": int, "interval": int},
    "data": {"corpus_seed": int, "num_sequences": int, "num_examples": int,
             "num_labels": int},
}


def parse_config_text(text: str) -> StageConfig:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if current is None or "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value' inside a section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{current}]")
        try:
            sections[current][key] = _SCHEMA[current][key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")

    run = sections.get("run", {})
    if "stage" not in run:
        raise ConfigError("missing required key 'stage' in [run]")
    stage = run["stage"]
    base = default_config(stage, seed=run.get("seed", 1))

    model = replace(base.model, **sections.get("model", {}))
    distill = replace(base.distill, **sections.get("distill", {}))
    pruning = base.pruning
    if "pruning" in sections:
        defaults = pruning or SparsitySchedule(0.0, 0.9, 0, 50, 80, 1)
        pruning = replace(defaults, **sections["pruning"])
    data = replace(base.data, **sections.get("data", {}))
    opt = sections.get("optimizer", {})
    sched = sections.get("schedule", {})
    return StageConfig(
        stage=stage, model=model,
        steps=run.get("steps", base.steps),
        batch_size=run.get("batch_size", base.batch_size),
        seq_len=run.get("seq_len", base.seq_len),
        seed=run.get("seed", base.seed),
        lr=opt.get("lr", base.lr),
        weight_decay=opt.get("weight_decay", base.weight_decay),
        warmup_steps=sched.get("warmup_steps", base.warmup_steps),
        distill=distill, pruning=pruning, data=data,
        kd_enabled=run.get("kd", base.kd_enabled),
        lrr_enabled=run.get("lrr", base.lrr_enabled),
        log_every=run.get("log_every", base.log_every),
    )


def load_config(path) -> StageConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
