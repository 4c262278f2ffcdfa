"""Trial dataset container, CSV ingestion and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"


class DataError(ValueError):
    """Raised when trial data cannot be used for analysis."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrialDataset:
    """Ordinal outcomes, binary treatment and baseline covariates.

    ``y`` holds levels ``1..n_levels`` with larger values more favorable once
    :func:`recode_direction` has been applied. Arrays are read-only.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    n_levels: int
    labels: tuple | None = None
    covariate_names: tuple = ()
    reversed: bool = False

    def __post_init__(self):
        y = _frozen(self.y, np.int64)
        z = _frozen(self.z, np.int64)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] == 0 and y.shape[0] > 0:
            x = np.empty((y.shape[0], 0))
        x = _frozen(x, float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        n = y.shape[0]
        if z.shape != (n,) or x.shape[0] != n:
            raise DataError("y, z and x must have the same number of rows")
        if n < 4:
            raise DataError(f"need at least 4 subjects, got {n}")
        if self.n_levels < 2:
            raise DataError("fewer than 2 outcome levels")
        if y.min() < 1 or y.max() > self.n_levels:
            raise DataError(f"outcome levels must lie in 1..{self.n_levels}")
        if not np.isin(z, (0, 1)).all():
            raise DataError("non-binary treatment")
        if not np.isfinite(x).all():
            raise DataError("covariates contain missing or non-finite values")
        n1 = int(z.sum())
        if n1 == 0:
            raise DataError("treated arm empty")
        if n1 == n:
            raise DataError("control arm empty")
        if not self.covariate_names:
            names = tuple(f"x{k + 1}" for k in range(x.shape[1]))
            object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass
class ValidationReport:
    arm_counts: tuple
    level_counts_by_arm: np.ndarray  # L x 2, columns (treated, control)
    warnings: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def parse_levels(spec: str) -> list[str]:
    """Parse an ordering such as ``"worst<bad<good"`` into a list, lowest first."""
    levels = [s.strip() for s in spec.split("<")]
    if len(levels) < 2 or any(not s for s in levels):
        raise DataError(f"bad level ordering {spec!r}")
    if len(set(levels)) != len(levels):
        raise DataError(f"duplicate level in ordering {spec!r}")
    return levels


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    covariate_cols: Sequence[str] = (),
    levels: Sequence[str] | str | None = None,
    n_levels: int | None = None,
) -> TrialDataset:
    """Read a trial dataset from a comma-separated file with a header row.

    Parameters
    ----------
    path : path-like
        CSV file (UTF-8).
    outcome_col, treatment_col : str
        Column names of the ordinal outcome and the 0/1 treatment indicator.
    covariate_cols : sequence of str
        Baseline covariate columns, used as given.
    levels : sequence of str or str, optional
        Explicit ordering of string outcome values, lowest first. A string is
        parsed with :func:`parse_levels`.
    n_levels : int, optional
        Declared number of levels for integer outcomes coded ``1..n_levels``.
        When omitted, the observed distinct values are mapped to ``1..L``
        preserving their order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    wanted = [outcome_col, treatment_col, *covariate_cols]
    missing = [c for c in wanted if c not in df.columns]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    df = df[wanted]
    na_tokens = {"", "na", "nan", "null", "none"}
    bad = df.apply(lambda col: col.str.strip().str.lower().isin(na_tokens))
    if bad.to_numpy().any():
        r, c = np.argwhere(bad.to_numpy())[0]
        raise DataError(f"missing value in column {wanted[c]!r} at data row {r + 1}")

    raw_y = df[outcome_col].str.strip()
    labels = None
    if levels is not None:
        order = parse_levels(levels) if isinstance(levels, str) else list(levels)
        lookup = {s: k + 1 for k, s in enumerate(order)}
        unknown = sorted(set(raw_y) - set(lookup))
        if unknown:
            raise DataError(f"outcome values not in declared levels: {unknown}")
        y = raw_y.map(lookup).to_numpy()
        L = len(order)
        labels = tuple(order)
    else:
        try:
            yv = pd.to_numeric(raw_y).to_numpy()
        except ValueError:
            raise DataError("non-numeric outcome; supply an explicit level ordering") from None
        if n_levels is not None:
            if not np.all(yv == np.round(yv)):
                raise DataError("declared n_levels requires integer outcomes")
            y = yv.astype(np.int64)
            L = int(n_levels)
        else:
            uniq = np.unique(yv)
            y = np.searchsorted(uniq, yv) + 1
            L = len(uniq)
            labels = tuple(str(u) for u in uniq)
    if L < 2:
        raise DataError("fewer than 2 outcome levels")

    try:
        zv = pd.to_numeric(df[treatment_col].str.strip()).to_numpy()
    except ValueError:
        raise DataError("non-binary treatment") from None
    if not np.isin(zv, (0, 1)).all():
        raise DataError("non-binary treatment")

    try:
        x = df[list(covariate_cols)].apply(lambda c: c.str.strip()).astype(float).to_numpy()
    except ValueError as exc:
        raise DataError(f"non-numeric covariate: {exc}") from None
    x = x.reshape(len(df), len(covariate_cols))
    return TrialDataset(
        y=y, z=zv.astype(np.int64), x=x, n_levels=L, labels=labels,
        covariate_names=tuple(covariate_cols),
    )


def write_csv(ds: TrialDataset, path, outcome_col="y", treatment_col="z") -> None:
    """Write ``ds`` in the layout accepted by :func:`load_csv`."""
    cols = {outcome_col: ds.y, treatment_col: ds.z}
    for k, name in enumerate(ds.covariate_names):
        cols[name] = ds.x[:, k]
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


def recode_direction(ds: TrialDataset, direction: str) -> TrialDataset:
    """Return a dataset whose outcome is on the higher-is-better scale.

    ``lower_better`` reflects levels ``y -> L + 1 - y`` and toggles the
    ``reversed`` flag, so applying it twice restores the original.
    """
    if direction == HIGHER_BETTER:
        return ds
    if direction != LOWER_BETTER:
        raise ValueError(f"unknown direction {direction!r}")
    labels = tuple(reversed(ds.labels)) if ds.labels is not None else None
    return dataclasses.replace(
        ds, y=ds.n_levels + 1 - ds.y, labels=labels, reversed=not ds.reversed
    )


def validate(ds) -> ValidationReport:
    """Summarise arm sizes and level-by-arm counts; never raises."""
    y = np.asarray(ds.y)
    z = np.asarray(ds.z)
    L = int(ds.n_levels)
    n1 = int((z == 1).sum())
    n0 = int((z == 0).sum())
    counts = np.zeros((L, 2), dtype=np.int64)
    for col, arm in enumerate((1, 0)):
        yy = y[z == arm]
        yy = yy[(yy >= 1) & (yy <= L)]
        counts[:, col] = np.bincount(yy - 1, minlength=L)[:L]
    report = ValidationReport(arm_counts=(n1, n0), level_counts_by_arm=counts)
    if n1 == 0:
        report.errors.append("treated arm empty")
    if n0 == 0:
        report.errors.append("control arm empty")
    if n1 + n0 != len(z):
        report.errors.append("non-binary treatment values present")
    for level in range(L):
        t, c = counts[level]
        if t == 0 and c == 0:
            report.warnings.append(f"level {level + 1} has no subjects")
        elif t == 0 or c == 0:
            arm = "control" if c == 0 else "treated"
            report.warnings.append(
                f"level {level + 1} absent from {arm} arm; ordinal fit may be unstable"
            )
    return report
