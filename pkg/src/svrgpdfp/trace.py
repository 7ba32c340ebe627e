"""Per-record solver history and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np

__all__ = ["TraceRow", "RunTrace", "CSV_COLUMNS", "format_float"]

CSV_COLUMNS = ("stage", "epochs", "seconds", "objective", "rel_err", "r_value", "psnr", "test_loss")


def format_float(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g")


@dataclass
class TraceRow:
    stage: int
    epochs: float
    seconds: float | None = None
    objective: float | None = None
    rel_err: float | None = None
    r_value: float | None = None
    psnr: float | None = None
    test_loss: float | None = None

    def as_list(self):
        return [str(self.stage)] + [format_float(getattr(self, c)) for c in CSV_COLUMNS[1:]]


@dataclass
class RunTrace:
    """Rows recorded by a solver run plus its final iterates.

    ``x`` / ``v`` are the algorithm's declared output (stage average for the
    SVRG variants, ergodic average for the general-convex variant).
    ``iterates`` / ``duals`` hold every inner iterate and ``blocks`` the
    sampled block indices when the run was asked to keep them.
    """

    solver: str
    rows: list[TraceRow] = field(default_factory=list)
    x: np.ndarray | None = None
    v: np.ndarray | None = None
    iterates: list[np.ndarray] = field(default_factory=list)
    duals: list[np.ndarray] = field(default_factory=list)
    blocks: list[int] = field(default_factory=list)
    stage_x: list[np.ndarray] = field(default_factory=list)
    stage_v: list[np.ndarray] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow(row.as_list())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def read_csv(path) -> list[TraceRow]:
    """Inverse of ``RunTrace.write_csv``."""
    names = [f.name for f in fields(TraceRow)]
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for name in names:
                raw = rec[name]
                if name == "stage":
                    kw[name] = int(raw)
                else:
                    kw[name] = float(raw) if raw != "" else None
            out.append(TraceRow(**kw))
    return out
