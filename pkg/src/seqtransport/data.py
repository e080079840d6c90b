"""Typed tabular data: a frame plus column kinds, categorical levels and roles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import EmptyGroup, MissingColumn, NonBinaryTreatment, ParseError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
UNIT = "unit"


@dataclass
class Dataset:
    """Units in rows; categorical columns hold level strings.

    ``frame`` is indexed by unit id. ``levels`` lists the levels of each
    categorical column in code order (code ``k`` is ``levels[col][k]``).
    """

    frame: pd.DataFrame
    treatment: str
    outcome: str | None = None
    kinds: dict[str, str] = field(default_factory=dict)
    levels: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        for col in [self.treatment] + ([self.outcome] if self.outcome else []):
            if col not in self.frame.columns:
                raise MissingColumn(f"column {col!r} not found")
        for col in self.frame.columns:
            if col == self.treatment:
                continue
            if col not in self.kinds:
                self.kinds[col] = NUMERIC if pd.api.types.is_numeric_dtype(self.frame[col]) else CATEGORICAL
            if self.kinds[col] == CATEGORICAL and col not in self.levels:
                self.levels[col] = sorted(self.frame[col].astype(str).unique().tolist())

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def unit_ids(self) -> np.ndarray:
        return self.frame.index.to_numpy()

    @property
    def treatment_values(self) -> np.ndarray:
        return self.frame[self.treatment].to_numpy().astype(int)

    def group(self, a: int) -> pd.DataFrame:
        sub = self.frame[self.treatment_values == a]
        if sub.empty:
            raise EmptyGroup(f"treatment group {a} has no units")
        return sub

    def group_sizes(self) -> tuple[int, int]:
        t = self.treatment_values
        return int((t == 0).sum()), int((t == 1).sum())

    def codes(self, column: str, frame: pd.DataFrame | None = None) -> np.ndarray:
        """Integer level codes of a categorical column."""
        values = (self.frame if frame is None else frame)[column].astype(str)
        lookup = {lvl: k for k, lvl in enumerate(self.levels[column])}
        try:
            return values.map(lookup).astype(int).to_numpy()
        except (ValueError, TypeError):
            bad = sorted(set(values) - set(lookup))
            raise ValueError(f"column {column!r} has undeclared levels {bad}") from None

    def with_frame(self, frame: pd.DataFrame) -> "Dataset":
        return Dataset(frame, self.treatment, self.outcome, dict(self.kinds), {k: list(v) for k, v in self.levels.items()})


def _coerce_treatment(raw: pd.Series, column: str, treated_value: str | None = None) -> np.ndarray:
    if treated_value is not None:
        values = raw.astype(str).str.strip()
        others = sorted(set(values) - {treated_value})
        if len(others) > 1:
            raise NonBinaryTreatment(
                f"treatment column {column!r} has values {others} besides the treated value {treated_value!r}"
            )
        return (values == treated_value).to_numpy().astype(int)
    mapping = {"0": 0, "1": 1, "0.0": 0, "1.0": 1, "false": 0, "true": 1}
    out = np.empty(len(raw), dtype=int)
    for i, value in enumerate(raw.astype(str).str.strip().str.lower()):
        if value not in mapping:
            raise NonBinaryTreatment(f"treatment column {column!r} has value {value!r} at row {i + 1}")
        out[i] = mapping[value]
    return out


def ingest_csv(
    path: str | Path,
    treatment: str,
    outcome: str | None = None,
    kinds: Mapping[str, str] | None = None,
    levels: Mapping[str, list[str]] | None = None,
    id_column: str | None = None,
    required: list[str] | None = None,
    treated_value: str | None = None,
) -> Dataset:
    """Read a CSV into a :class:`Dataset`.

    Columns are typed from ``kinds`` when given, otherwise numeric when every
    cell parses as a number. The treatment column must hold two values that
    read as 0/1 (or false/true); with ``treated_value`` a two-valued column
    is coded 1 where it equals that value and 0 elsewhere. ``required``
    lists extra columns that must be present.
    """
    kinds = dict(kinds or {})
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path} is empty") from exc

    for col in [treatment] + ([outcome] if outcome else []) + list(required or []) + ([id_column] if id_column else []):
        if col not in raw.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")

    index = pd.RangeIndex(len(raw), name=UNIT)
    if id_column is not None:
        index = pd.Index(_parse_ids(raw[id_column]), name=UNIT)
        raw = raw.drop(columns=[id_column])
    elif UNIT in raw.columns:
        index = pd.Index(_parse_ids(raw[UNIT]), name=UNIT)
        raw = raw.drop(columns=[UNIT])

    columns: dict[str, object] = {}
    for col in raw.columns:
        if col == treatment:
            columns[col] = _coerce_treatment(raw[col], col, treated_value)
            continue
        kind = kinds.get(col)
        parsed = _parse_floats(raw[col])
        if kind is None:
            kind = NUMERIC if len(raw) and not np.isnan(parsed).any() else CATEGORICAL
            kinds[col] = kind
        if kind == NUMERIC:
            bad = np.flatnonzero(np.isnan(parsed))
            if bad.size:
                row = int(bad[0])
                raise ParseError(
                    f"row {row + 1}, column {col!r}: cannot parse {raw[col].iloc[row]!r} as a number",
                    row=row + 1,
                    column=col,
                )
            columns[col] = parsed
        elif kind == CATEGORICAL:
            columns[col] = raw[col].to_numpy(dtype=object)
        else:
            raise ValueError(f"unknown column kind {kind!r} for {col!r}")
    frame = pd.DataFrame(columns, index=index)
    merged_levels = {k: list(v) for k, v in (levels or {}).items() if k in frame.columns}
    for col, kind in kinds.items():
        if kind == CATEGORICAL and col in merged_levels:
            unknown = set(frame[col]) - set(merged_levels[col])
            if unknown:
                raise ParseError(f"column {col!r} has undeclared levels {sorted(unknown)}", column=col)
    return Dataset(frame, treatment, outcome, {k: v for k, v in kinds.items() if k in frame.columns and k != treatment}, merged_levels)


def _parse_floats(values: pd.Series) -> np.ndarray:
    """Correctly rounded float parse; unparseable or non-finite cells become NaN."""
    out = np.empty(len(values))
    for i, text in enumerate(values):
        try:
            out[i] = float(text)
        except ValueError:
            out[i] = np.nan
    out[~np.isfinite(out)] = np.nan
    return out


def _parse_ids(values: pd.Series):
    parsed = pd.to_numeric(values, errors="coerce")
    if not parsed.isna().any() and np.all(parsed == np.round(parsed)):
        return parsed.astype(np.int64).to_numpy()
    return values.to_numpy(dtype=object)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_frame(frame: pd.DataFrame, path: str | Path, index_label: str = UNIT) -> None:
    """CSV with a header row and floats at 17 significant digits."""
    frame.to_csv(path, index=True, index_label=index_label, float_format="%.17g",
                 quoting=csv.QUOTE_MINIMAL, lineterminator="\n")


def emit_csv(data: Dataset, path: str | Path) -> None:
    write_frame(data.frame, path)
