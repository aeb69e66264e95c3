"""Per-sample gate states and their CSV / PGM exports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GateRecords

GATE_CSV_HEADER = ("sample_id", "kind", "i", "j_or_k", "value")
LEVELS = (2, 3, 4, 5)


@dataclass
class GateRecord:
    """Mean openness of every gate for one sample.

    ``isg_b`` maps (stage, block) to the coarse gate of that former block,
    ``isg_a`` maps stage to the fine-selection gate, ``csg_w`` is the 4x4
    path matrix with rows = source level and columns = target level.
    """

    sample_id: int | str
    isg_b: dict[tuple[int, int], float] = field(default_factory=dict)
    isg_a: dict[int, float] = field(default_factory=dict)
    csg_w: np.ndarray | None = None

    def rows(self) -> list[tuple]:
        out = [(self.sample_id, "isg_b", i, j, v) for (i, j), v in sorted(self.isg_b.items())]
        # j_or_k is 0 for the fine gate: it has no block or target index
        out += [(self.sample_id, "isg_a", i, 0, v) for i, v in sorted(self.isg_a.items())]
        if self.csg_w is not None:
            for a, i in enumerate(LEVELS):
                for b, k in enumerate(LEVELS):
                    out.append((self.sample_id, "csg_w", i, k, float(self.csg_w[a, b])))
        return out


def split_records(records: GateRecords, sample_ids) -> list[GateRecord]:
    out = []
    for n, sid in enumerate(sample_ids):
        rec = GateRecord(sid)
        if records.isg is not None:
            for s, stage in enumerate(LEVELS):
                for col, block in enumerate(records.isg.b_blocks[s]):
                    rec.isg_b[(stage, block)] = float(records.isg.b[s][n, col])
                if records.isg.a[s] is not None:
                    rec.isg_a[stage] = float(records.isg.a[s][n])
        if records.csg is not None:
            rec.csg_w = records.csg.w[n].copy()
        out.append(rec)
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def gate_rows_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GATE_CSV_HEADER)
    for row in rows:
        writer.writerow(_fmt(v) for v in row)
    return buf.getvalue()


def write_gate_csv(path: str | Path, records: list[GateRecord]) -> None:
    Path(path).write_text(gate_rows_csv(r for rec in records for r in rec.rows()))


def matrix_csv(mat: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source\\target"] + [str(k) for k in LEVELS])
    for i, row in zip(LEVELS, mat):
        writer.writerow([str(i)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def matrix_pgm(mat: np.ndarray) -> bytes:
    """Binary PGM (P5) with one pixel per path, pixel = round(255 * openness)."""
    h, w = mat.shape
    pixels = np.rint(255.0 * np.clip(mat, 0.0, 1.0)).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
