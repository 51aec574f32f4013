"""Evaluation metrics: coefficient RMSE and the bias/variance/MSE decomposition."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SpecError


def rmse(estimates, truth) -> float:
    x = np.asarray(estimates, dtype=float).reshape(-1)
    y = np.asarray(truth, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise SpecError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.size == 0:
        raise SpecError("rmse of empty vectors")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def bias_variance_mse(samples, truth):
    """Summed squared bias, summed population variance and their sum.

    ``samples`` is (s, k): s draws of k coefficients. A single row is allowed
    and has zero variance (point estimates such as baselines).
    """
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    t = np.asarray(truth, dtype=float).reshape(-1)
    if S.shape[1] != t.shape[0]:
        raise SpecError(f"samples have {S.shape[1]} coefficients, truth has {t.shape[0]}")
    bias2 = float(((S.mean(axis=0) - t) ** 2).sum())
    variance = float(S.var(axis=0).sum())
    return bias2, variance, bias2 + variance


@dataclass
class EvalRow:
    label: str
    check: Optional[bool]
    bias2: float
    variance: float
    mse: float
    rmse: Optional[float] = None


@dataclass
class EvalTable:
    rows: list
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("method", "check", "bias2_x100", "variance_x100", "mse_x100", "rmse_x100")

    def _cells(self, row):
        check = "" if row.check is None else ("pass" if row.check else "fail")
        rm = "" if row.rmse is None else f"{100 * row.rmse:.2f}"
        return [row.label, check, f"{100 * row.bias2:.2f}", f"{100 * row.variance:.2f}",
                f"{100 * row.mse:.2f}", rm]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(self._cells(r))
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["Method", "Check", "Bias^2 x1e-2", "Variance x1e-2", "MSE x1e-2", "RMSE x1e-2"]
        body = [self._cells(r) for r in self.rows]
        widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in body]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": [r.__dict__ for r in self.rows], "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def make_table(runs, truth, subset=None, metadata=None) -> EvalTable:
    """One row per run, in the order given.

    Each run is a mapping with ``label``, ``samples`` (s x m coefficient
    draws, or a single estimate) and optionally ``check``.
    """
    t = np.asarray(truth, dtype=float).reshape(-1)
    idx = np.arange(t.size) if subset is None else np.asarray(subset)
    rows = []
    for run in runs:
        S = np.atleast_2d(np.asarray(run["samples"], dtype=float))[:, idx]
        b2, var, mse = bias_variance_mse(S, t[idx])
        rows.append(EvalRow(run["label"], run.get("check"), b2, var, mse,
                            rmse(S.mean(axis=0), t[idx])))
    return EvalTable(rows, dict(metadata or {}))


def average_tables(tables, metadata=None) -> EvalTable:
    """Row-wise mean over seeds of tables that share labels; check = pass share > 0.5."""
    if not tables:
        raise SpecError("no tables to average")
    rows = []
    for k, first in enumerate(tables[0].rows):
        col = [t.rows[k] for t in tables]
        if any(r.label != first.label for r in col):
            raise SpecError("tables disagree on row labels")
        checks = [r.check for r in col if r.check is not None]
        b2 = float(np.mean([r.bias2 for r in col]))
        var = float(np.mean([r.variance for r in col]))
        rm = [r.rmse for r in col if r.rmse is not None]
        rows.append(EvalRow(first.label, bool(np.mean(checks) > 0.5) if checks else None, b2, var, b2 + var,
                            float(np.mean(rm)) if rm else None))
    return EvalTable(rows, dict(metadata or {}, seeds=len(tables)))
