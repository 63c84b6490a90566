"""Bounded false-data-injection attacks on the physical layer."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .design import LayerDesign

KINDS = ("none", "offset_steering", "tabulated")


@dataclass(frozen=True)
class AttackModel:
    """Aggregated per-agent attack ``d(x, t)``.

    ``offset_steering`` cancels the consensus protocol and pulls every agent
    towards ``x_ad``; ``tabulated`` replays a time series with linear
    interpolation. ``bound_estimate`` is the declared bound, compared against
    the observed maximum norm after a run.
    """

    kind: str = "none"
    x_ad: float = 0.0
    bound_estimate: Optional[float] = None
    table_t: Optional[np.ndarray] = None
    table_d: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "tabulated":
            if self.table_t is None or self.table_d is None:
                raise ValueError("tabulated attack needs a table")
            t = np.asarray(self.table_t, dtype=float)
            d = np.atleast_2d(np.asarray(self.table_d, dtype=float))
            if t.ndim != 1 or d.shape[0] != t.shape[0] or len(t) < 1:
                raise ValueError("attack table needs one vector per time stamp")
            if np.any(np.diff(t) <= 0):
                raise ValueError("attack table times must be strictly increasing")
            object.__setattr__(self, "table_t", t)
            object.__setattr__(self, "table_d", d)
        if self.bound_estimate is not None and self.bound_estimate < 0:
            raise ValueError("bound_estimate must be non-negative")

    @property
    def active(self) -> bool:
        return self.kind != "none"

    @classmethod
    def from_config(cls, section: Optional[dict], base_dir: Optional[Path] = None) -> "AttackModel":
        section = section or {}
        kind = section.get("kind", "none")
        t = d = None
        if kind == "tabulated":
            path = Path(section["table"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            t, d = load_table(path)
        bound = section.get("d_bar")
        return cls(kind, float(section.get("x_ad", 0.0)), None if bound is None else float(bound), t, d)

    def to_config(self) -> dict:
        out = {"kind": self.kind, "x_ad": self.x_ad, "d_bar": self.bound_estimate}
        if self.kind == "tabulated":
            out["table_rows"] = np.column_stack([self.table_t, self.table_d]).tolist()
        return out


def load_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a time/vector CSV: first column time, remaining columns one per agent."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                continue  # header line
    if not rows:
        raise ValueError(f"attack table {path} is empty")
    arr = np.array(rows, dtype=float)
    return arr[:, 0], arr[:, 1:]


def evaluate(model: AttackModel, design: LayerDesign, x, x0: float, t: float) -> np.ndarray:
    """Attack vector for physical state ``x`` at time ``t``.

    Only the physical state, the leader value and the design are visible to
    the attacker.
    """
    x = np.asarray(x, dtype=float)
    if model.kind == "none":
        return np.zeros_like(x)
    if model.kind == "offset_steering":
        return -design.A @ x + model.x_ad - x - design.B * x0
    tt = model.table_t
    if t < tt[0] or t > tt[-1]:
        warnings.warn(f"attack table queried at t={t:g} outside [{tt[0]:g}, {tt[-1]:g}]; holding end value")
    return np.array([np.interp(t, tt, model.table_d[:, i]) for i in range(model.table_d.shape[1])])


def observed_bound(d_samples) -> float:
    """Largest Euclidean norm over logged attack vectors."""
    d = np.asarray(d_samples, dtype=float)
    if d.size == 0:
        raise ValueError("no attack samples logged")
    d = np.atleast_2d(d)
    return float(np.max(np.linalg.norm(d, axis=1)))
