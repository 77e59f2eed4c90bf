"""Compression accounting and schedule CSV export."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

from .checkpoint import Checkpoint, DENSE_F32, Q8, SPARSE
from .model import prunable_parameter_names
from .pruning import SparsitySchedule, target_sparsity
from .schedule import LrSchedule, lr_base, lr_rewound


@dataclass
class ReportRow:
    name: str
    dense_bytes: int
    payload_bytes: int
    bitmap_bytes: int
    sparsity: float
    bits: int


@dataclass
class CompressionReport:
    rows: List[ReportRow]
    parameter_only_ratio: float
    on_disk_ratio: float
    nonzero_count: int

    def as_text(self) -> str:
        lines = [f"{'tensor':34s} {'dense_B':>10s} {'payload_B':>10s} {'bitmap_B':>9s} {'sparsity':>9s} {'bits':>5s}"]
        for r in self.rows:
            lines.append(f"{r.name:34s} {r.dense_bytes:10d} {r.payload_bytes:10d} "
                         f"{r.bitmap_bytes:9d} {r.sparsity:9.4f} {r.bits:5d}")
        lines.append(f"parameter-only compression ratio: {self.parameter_only_ratio:.4f}")
        lines.append(f"on-disk compression ratio:        {self.on_disk_ratio:.4f}")
        lines.append(f"nonzero encoder parameters:       {self.nonzero_count}")
        return "\n".join(lines)


def _tensor_stats(rec):
    n = rec.size
    if rec.storage == DENSE_F32:
        nnz = int((rec.dense != 0).sum())
        bits = 32
        scale_bytes = 0
    elif rec.storage == SPARSE:
        nnz = int(rec.payload_f32.size)
        bits = 32
        scale_bytes = 0
    else:
        nnz = int((rec.payload_i8 != 0).sum()) if rec.bitmap is None else int(rec.payload_i8.size)
        bits = 8
        scale_bytes = 8  # f32 scale + i32 zero point
    return n, nnz, bits, scale_bytes


def compression_report(ckpt: Checkpoint) -> CompressionReport:
    """Byte accounting over the encoder's prunable weights only."""
    rows = []
    dense_total = payload_total = bitmap_total = extra_total = 0
    nonzero = 0
    for name in prunable_parameter_names(ckpt.model_config):
        rec = ckpt.tensors[name]
        n, nnz, bits, scale_bytes = _tensor_stats(rec)
        dense_b = 4 * n
        payload_b = rec.payload_bytes()
        bitmap_b = rec.bitmap_bytes()
        rows.append(ReportRow(name, dense_b, payload_b, bitmap_b, 1.0 - nnz / n, bits))
        dense_total += dense_b
        payload_total += payload_b
        bitmap_total += bitmap_b
        extra_total += scale_bytes
        nonzero += nnz
    return CompressionReport(
        rows,
        parameter_only_ratio=dense_total / payload_total if payload_total else 1.0,
        on_disk_ratio=dense_total / (payload_total + bitmap_total + extra_total),
        nonzero_count=nonzero,
    )


def payload_size_ratio(a: Checkpoint, b: Checkpoint) -> float:
    """Encoder payload bytes of A divided by those of B."""
    pa = sum(a.tensors[n].payload_bytes() for n in prunable_parameter_names(a.model_config))
    pb = sum(b.tensors[n].payload_bytes() for n in prunable_parameter_names(b.model_config))
    return pa / pb


def schedule_export(lr_sched: LrSchedule, sp_sched: SparsitySchedule, path) -> None:
    """CSV of (t, lr_base, lr_rewound, target_sparsity) for t in [0, total]."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,lr_base,lr_rewound,target_sparsity\n")
        for t in range(lr_sched.total_steps + 1):
            fh.write(f"{t},{lr_base(lr_sched, t)!r},{lr_rewound(lr_sched, t)!r},"
                     f"{target_sparsity(sp_sched, t)!r}\n")
