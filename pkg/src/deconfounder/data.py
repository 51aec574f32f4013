"""Datasets of assigned causes and outcomes: ingestion, scaling, holdout masks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataParseError, DataValidationError, SchemaError, SpecError
from .rng import RngLike, as_stream

REAL = "real"
BINARY = "binary"
COUNT = "count"
KINDS = (REAL, BINARY, COUNT)
AUTO = "auto"


def _frozen_array(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def infer_kind(column: np.ndarray) -> str:
    col = np.asarray(column, dtype=float)
    if np.all(col == np.round(col)) and np.all(col >= 0):
        return BINARY if np.all((col == 0) | (col == 1)) else COUNT
    return REAL


def _check_kind(values: np.ndarray, kind: str, name: str) -> None:
    if kind not in KINDS:
        raise DataValidationError(f"column {name!r}: unknown kind {kind!r}")
    if kind == COUNT:
        if np.any(values < 0) or np.any(values != np.round(values)):
            raise DataValidationError(
                f"column {name!r}: count columns must hold non-negative integers")
    elif kind == BINARY:
        if np.any((values != 0) & (values != 1)):
            raise DataValidationError(f"column {name!r}: binary columns must hold 0/1")


@dataclass(frozen=True)
class Dataset:
    """Immutable container for causes (n x m), outcome (n,) and optional covariates."""

    causes: np.ndarray
    outcome: np.ndarray
    cause_kinds: tuple = ()
    cause_names: tuple = ()
    covariates: Optional[np.ndarray] = None
    covariate_names: tuple = ()
    outcome_name: str = "y"

    def __post_init__(self):
        causes = _frozen_array(self.causes)
        if causes.ndim != 2 or causes.shape[1] < 1:
            raise DataValidationError("causes must be an n x m matrix with m >= 1")
        n, m = causes.shape
        outcome = _frozen_array(self.outcome).reshape(-1)
        if outcome.shape[0] != n:
            raise DataValidationError(
                f"outcome has length {outcome.shape[0]} but there are {n} rows")
        if not np.all(np.isfinite(causes)) or not np.all(np.isfinite(outcome)):
            raise DataValidationError("NaN or Inf entries are not allowed")
        names = tuple(self.cause_names) or tuple(f"a{j + 1}" for j in range(m))
        if len(names) != m:
            raise DataValidationError("cause_names must have one entry per column")
        kinds = tuple(self.cause_kinds) or tuple(infer_kind(causes[:, j]) for j in range(m))
        if len(kinds) != m:
            raise DataValidationError("cause_kinds must have one entry per column")
        for j in range(m):
            _check_kind(causes[:, j], kinds[j], names[j])
        cov = self.covariates
        cov_names = tuple(self.covariate_names)
        if cov is not None:
            cov = _frozen_array(cov)
            if cov.ndim == 1:
                cov = _frozen_array(cov.reshape(-1, 1))
            if cov.shape[0] != n:
                raise DataValidationError("covariates must have one row per individual")
            if not np.all(np.isfinite(cov)):
                raise DataValidationError("NaN or Inf entries are not allowed")
            if cov.shape[1] == 0:
                cov = None
            else:
                cov_names = cov_names or tuple(f"x{k + 1}" for k in range(cov.shape[1]))
                if len(cov_names) != cov.shape[1]:
                    raise DataValidationError("covariate_names length mismatch")
        else:
            cov_names = ()
        object.__setattr__(self, "causes", causes)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "cause_names", names)
        object.__setattr__(self, "cause_kinds", kinds)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", cov_names)

    @property
    def n(self) -> int:
        return self.causes.shape[0]

    @property
    def m(self) -> int:
        return self.causes.shape[1]

    def with_outcome(self, outcome) -> "Dataset":
        return replace(self, outcome=outcome)

    def select_causes(self, columns: Sequence[int]) -> "Dataset":
        columns = list(columns)
        return replace(
            self,
            causes=self.causes[:, columns],
            cause_kinds=tuple(self.cause_kinds[j] for j in columns),
            cause_names=tuple(self.cause_names[j] for j in columns),
        )

    def subset_rows(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            causes=self.causes[rows],
            outcome=self.outcome[rows],
            covariates=None if self.covariates is None else self.covariates[rows],
        )


# ---------------------------------------------------------------------------
# schema + CSV


@dataclass
class Schema:
    """Column roles: one outcome, at least one cause, optional covariates."""

    outcome: str
    causes: list
    covariates: list = field(default_factory=list)
    kinds: dict = field(default_factory=dict)

    def validate(self, header: Sequence[str]) -> None:
        if not self.causes:
            raise SchemaError("schema must name at least one cause column")
        wanted = [self.outcome, *self.causes, *self.covariates]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"columns missing from CSV header: {', '.join(missing)}")
        if len(set(wanted)) != len(wanted):
            raise SchemaError("a column is assigned more than one role")
        for name, kind in self.kinds.items():
            if kind not in KINDS and kind != AUTO:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")

    @classmethod
    def default_for(cls, header: Sequence[str], outcome: str = "y") -> "Schema":
        if outcome not in header:
            raise SchemaError(f"no schema given and no {outcome!r} column in the header")
        return cls(outcome=outcome, causes=[c for c in header if c != outcome])


def parse_schema(text: str) -> Schema:
    """Parse ``column = role`` lines; role is outcome, covariate, ignore or cause[:kind]."""
    outcome = None
    causes, covariates, kinds = [], [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"schema line {lineno}: expected 'column = role'")
        name, role = (s.strip() for s in line.split("=", 1))
        role, _, kind = role.partition(":")
        role = role.strip().lower()
        kind = kind.strip().lower()
        if role == "outcome":
            if outcome is not None:
                raise SchemaError("schema names more than one outcome column")
            outcome = name
        elif role == "cause":
            causes.append(name)
            kinds[name] = kind or AUTO
        elif role == "covariate":
            covariates.append(name)
        elif role != "ignore":
            raise SchemaError(f"schema line {lineno}: unknown role {role!r}")
    if outcome is None:
        raise SchemaError("schema does not name an outcome column")
    return Schema(outcome, causes, covariates, kinds)


def load_schema(path) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def schema_text(schema: Schema) -> str:
    lines = [f"{schema.outcome} = outcome"]
    for c in schema.causes:
        kind = schema.kinds.get(c, AUTO)
        lines.append(f"{c} = cause" + ("" if kind == AUTO else f":{kind}"))
    lines += [f"{c} = covariate" for c in schema.covariates]
    return "\n".join(lines) + "\n"


def schema_of(d: Dataset) -> Schema:
    return Schema(d.outcome_name, list(d.cause_names), list(d.covariate_names),
                  dict(zip(d.cause_names, d.cause_kinds)))


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number",
            row=row, column=column) from None
    if not math.isfinite(value):
        raise DataParseError(f"row {row}, column {column!r}: non-finite value",
                             row=row, column=column)
    return value


def load_dataset(path, schema: Optional[Schema] = None) -> Dataset:
    """Read a UTF-8 comma-separated file with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if schema is None:
            schema = Schema.default_for(header)
        schema.validate(header)
        col_index = {name: k for k, name in enumerate(header)}
        wanted = [schema.outcome, *schema.causes, *schema.covariates]
        rows = []
        for lineno, record in enumerate(reader, 2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataParseError(
                    f"row {lineno}: expected {len(header)} fields, found {len(record)}",
                    row=lineno)
            rows.append([_parse_float(record[col_index[c]].strip(), lineno, c) for c in wanted])
    values = np.array(rows, dtype=float).reshape(len(rows), len(wanted))
    y = values[:, 0]
    m = len(schema.causes)
    causes = values[:, 1:1 + m]
    cov = values[:, 1 + m:] if schema.covariates else None
    kinds = []
    for j, name in enumerate(schema.causes):
        kind = schema.kinds.get(name, AUTO)
        kinds.append(infer_kind(causes[:, j]) if kind == AUTO else kind)
    return Dataset(causes, y, tuple(kinds), tuple(schema.causes), cov,
                   tuple(schema.covariates), schema.outcome)


def _fmt(value: float, integral: bool) -> str:
    return str(int(value)) if integral else repr(float(value))


def save_dataset(d: Dataset, path, schema_path=None) -> None:
    """Write ``d`` as CSV; floats use shortest round-trip formatting."""
    header = [*d.cause_names, *d.covariate_names, d.outcome_name]
    integral = [k != REAL for k in d.cause_kinds] + [False] * len(d.covariate_names) + [False]
    blocks = [d.causes] + ([d.covariates] if d.covariates is not None else []) + [d.outcome[:, None]]
    table = np.hstack(blocks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in table:
            writer.writerow([_fmt(v, flag) for v, flag in zip(row, integral)])
    if schema_path is not None:
        Path(schema_path).write_text(schema_text(schema_of(d)), encoding="utf-8")


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class ScalingRecord:
    """Per-block column means and standard deviations; ``ddof`` is the sd convention."""

    means: dict
    sds: dict
    ddof: int

    def invert(self, d: Dataset) -> Dataset:
        changes = {}
        for block, mean in self.means.items():
            sd = self.sds[block]
            if block == "causes":
                changes["causes"] = d.causes * sd + mean
            elif block == "covariates":
                changes["covariates"] = d.covariates * sd + mean
            else:
                changes["outcome"] = d.outcome * sd[0] + mean[0]
        return replace(d, **changes)


def _scale(block: np.ndarray, names, ddof: int):
    mean = block.mean(axis=0)
    sd = block.std(axis=0, ddof=ddof)
    for j, s in enumerate(sd):
        if not s > 0:
            raise DataValidationError(f"column {names[j]!r} has zero variance")
    return (block - mean) / sd, mean, sd


def standardize(d: Dataset, which=("causes",), ddof: int = 0, coerce: bool = False):
    """Center and scale the selected blocks to mean 0, sd 1.

    ``ddof=0`` (population sd) is the default convention and is stored in the
    returned :class:`ScalingRecord`. Non-real cause columns are refused unless
    ``coerce`` is set, in which case they become real-kind.
    """
    if isinstance(which, str):
        which = (which,)
    means, sds, changes = {}, {}, {}
    for block in which:
        if block == "causes":
            bad = [nm for nm, k in zip(d.cause_names, d.cause_kinds) if k != REAL]
            if bad and not coerce:
                raise DataValidationError(
                    f"refusing to standardize non-real cause columns: {', '.join(bad)}")
            z, mu, sd = _scale(d.causes, d.cause_names, ddof)
            changes["causes"] = z
            changes["cause_kinds"] = (REAL,) * d.m
        elif block == "covariates":
            if d.covariates is None:
                continue
            z, mu, sd = _scale(d.covariates, d.covariate_names, ddof)
            changes["covariates"] = z
        elif block == "outcome":
            z, mu, sd = _scale(d.outcome[:, None], (d.outcome_name,), ddof)
            changes["outcome"] = z[:, 0]
        else:
            raise ValueError(f"unknown block {block!r}")
        means[block], sds[block] = mu, sd
    return replace(d, **changes), ScalingRecord(means, sds, ddof)


# ---------------------------------------------------------------------------
# holdout


@dataclass(frozen=True)
class HoldoutMask:
    """``mask[i, j]`` is True when cause j of individual i is held out."""

    mask: np.ndarray
    fraction: float
    seed: int

    @property
    def observed(self) -> np.ndarray:
        return ~self.mask

    def held_fraction(self) -> float:
        return float(self.mask.mean())


def split_holdout(causes, fraction: float, rng: RngLike = None) -> HoldoutMask:
    """Hold out each entry independently with probability ``fraction``.

    A row that would be entirely held out gets one uniformly chosen entry
    put back, so every individual keeps at least one observed cause.
    """
    a = causes.causes if isinstance(causes, Dataset) else np.asarray(causes)
    n, m = a.shape
    if not 0.0 < fraction < 1.0:
        raise SpecError("holdout fraction must lie in (0, 1)")
    if fraction * m < 1.0:
        raise SpecError(f"fraction * m = {fraction * m:.3g} < 1; hold out more or add causes")
    stream = as_stream(rng)
    gen = stream.generator()
    mask = gen.random((n, m)) < fraction
    full = np.flatnonzero(mask.all(axis=1))
    if full.size:
        keep = gen.integers(0, m, size=full.size)
        mask[full, keep] = False
    mask.setflags(write=False)
    return HoldoutMask(mask, float(fraction), stream.seed)
