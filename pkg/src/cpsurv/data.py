"""Right-censored observations with left-continuous covariate paths."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input data cannot be ingested."""


@dataclass(frozen=True, eq=False)
class CovariatePath:
    """Piecewise-constant, left-continuous covariate path.

    ``values[k]`` is the value on ``(breakpoints[k], breakpoints[k+1]]``;
    the first piece also covers ``t = 0``.  The last value is carried
    forward indefinitely.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(len(bp), -1) if len(bp) > 1 else vals.reshape(1, -1)
        if bp.size == 0 or bp[0] != 0.0:
            raise DataError("covariate path breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise DataError("covariate path breakpoints must be strictly ascending")
        if vals.shape[0] != bp.size:
            raise DataError("one covariate vector is needed per path piece")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value) -> "CovariatePath":
        return cls(np.zeros(1), np.asarray(value, dtype=float).reshape(1, -1))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def is_constant(self) -> bool:
        return self.values.shape[0] == 1 or bool(np.all(self.values == self.values[0]))

    def value(self, t):
        """Covariate value(s) at time(s) ``t``; shape ``(d,)`` or ``(len(t), d)``."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t_arr, side="left") - 1
        idx = np.clip(idx, 0, None)
        return self.values[idx]

    def total_variation(self, tau: float) -> float:
        """Sum of piece-to-piece jump sizes (L1) within ``[0, tau]``."""
        inside = np.searchsorted(self.breakpoints, tau, side="left")
        vals = self.values[: max(inside, 1)]
        return float(np.abs(np.diff(vals, axis=0)).sum())

    def __eq__(self, other):
        if not isinstance(other, CovariatePath):
            return NotImplemented
        return (np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class Subject:
    v: float
    delta: int
    y: float
    z: CovariatePath
    id: str = ""

    def __eq__(self, other):
        if not isinstance(other, Subject):
            return NotImplemented
        return (self.v == other.v and self.delta == other.delta and self.y == other.y
                and self.z == other.z and self.id == other.id)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sample of subjects observed on ``[0, tau]``.

    The last ``q`` covariate components form ``Z2``, the part whose effect
    changes across the threshold.
    """

    subjects: tuple
    tau: float
    p: int
    q: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if self.q < 1 or self.p < 0:
            raise DataError("need q >= 1 and p >= 0")
        if not subjects:
            raise DataError("dataset has no subjects")
        d = self.p + self.q
        for s in subjects:
            if s.z.dim != d:
                raise DataError(f"subject {s.id!r} has {s.z.dim} covariates, expected {d}")
            if s.delta not in (0, 1):
                raise DataError(f"subject {s.id!r}: status must be 0 or 1")
            if not (0 < s.v <= self.tau):
                raise DataError(f"subject {s.id!r}: time must lie in (0, tau]")

    @classmethod
    def from_arrays(cls, time, status, y, z, *, q: int = 1, tau: float | None = None,
                    ids: Sequence[str] | None = None) -> "Dataset":
        """Build a dataset with time-constant covariates from plain arrays."""
        time = np.asarray(time, dtype=float)
        status = np.asarray(status, dtype=int)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if tau is None:
            tau = float(time.max())
        if ids is None:
            ids = [str(i + 1) for i in range(len(time))]
        subjects = [Subject(float(time[i]), int(status[i]), float(y[i]),
                            CovariatePath.constant(z[i]), str(ids[i]))
                    for i in range(len(time))]
        return cls(tuple(subjects), float(tau), z.shape[1] - q, q)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def d(self) -> int:
        return self.p + self.q

    @cached_property
    def v(self) -> np.ndarray:
        return np.array([s.v for s in self.subjects])

    @cached_property
    def delta(self) -> np.ndarray:
        return np.array([s.delta for s in self.subjects], dtype=int)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.subjects])

    @cached_property
    def time_constant(self) -> bool:
        return all(s.z.is_constant for s in self.subjects)

    @cached_property
    def z0(self) -> np.ndarray:
        """Covariate values at time 0, shape ``(n, d)``."""
        return np.array([s.z.values[0] for s in self.subjects])

    def z_at(self, times) -> np.ndarray:
        """Covariates of every subject at every time: shape ``(n, len(times), d)``."""
        times = np.asarray(times, dtype=float)
        return np.stack([s.z.value(times) for s in self.subjects])

    def z_at_v(self) -> np.ndarray:
        return np.array([s.z.value(s.v) for s in self.subjects])

    def with_subjects(self, idx) -> "Dataset":
        return Dataset(tuple(self.subjects[i] for i in idx), self.tau, self.p, self.q)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.tau == other.tau and self.p == other.p and self.q == other.q
                and self.subjects == other.subjects)


def event_grid(ds: Dataset) -> np.ndarray:
    """Sorted distinct times of uncensored events."""
    times = ds.v[ds.delta == 1]
    if times.size == 0:
        raise DataError("no uncensored events in dataset")
    return np.unique(times)


def default_bounds(y, inner_frac: float = 0.8) -> tuple[float, float]:
    """Threshold search range covering the inner ``inner_frac`` of ``y``."""
    lo = (1.0 - inner_frac) / 2.0
    a, b = np.quantile(np.asarray(y, dtype=float), [lo, 1.0 - lo])
    return float(a), float(b)


@dataclass
class ValidationReport:
    warnings: list
    total_variation: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate(ds: Dataset, a: float, b: float) -> ValidationReport:
    """Check the assumptions that can be checked from the data alone."""
    if not a < b:
        raise ValueError("need a < b")
    warnings = []
    if not np.any(ds.y < a):
        warnings.append("no observations below a")
    if not np.any(ds.y > b):
        warnings.append("no observations above b")
    if not np.any(ds.delta == 1):
        warnings.append("no uncensored events; A is unidentifiable")
    if np.any(ds.v <= 0) or np.any(ds.v > ds.tau):
        warnings.append("observation times outside (0, tau]")
    tv = np.array([s.z.total_variation(ds.tau) for s in ds.subjects])
    return ValidationReport(warnings, tv)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    return header, rows


def _zcols(header, path):
    zc = [h for h in header if h.startswith("z") and h[1:].isdigit()]
    zc.sort(key=lambda h: int(h[1:]))
    if not zc or zc != [f"z{k}" for k in range(1, len(zc) + 1)]:
        raise DataError(f"{path}: need covariate columns z1..zd")
    return zc


def _number(text, path, lineno, col):
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"{path} row {lineno}: non-numeric value {text!r} in column {col}") from None
    if not math.isfinite(val):
        raise DataError(f"{path} row {lineno}: non-finite value in column {col}")
    return val


def load_dataset(subjects_path, covariates_path=None, *, q: int = 1,
                 tau: float | None = None) -> Dataset:
    """Read a subjects CSV and an optional long-format covariate CSV.

    Parameters
    ----------
    subjects_path : path
        Header ``id,time,status,y,z1,...,zd``.  The ``z`` columns give the
        covariate value from time 0.
    covariates_path : path, optional
        Header ``id,start,z1,...,zd``; each row starts a new piece of the
        subject's path at ``start`` (value applies on ``(start, next]``).
    q : int
        Number of trailing covariates whose effect changes at the threshold.
    tau : float, optional
        Study horizon; defaults to the largest observed time.
    """
    path = Path(subjects_path)
    header, rows = _read_rows(path)
    for col in ("id", "time", "status", "y"):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    zc = _zcols(header, path)
    pos = {h: i for i, h in enumerate(header)}
    recs = {}
    order = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataError(f"{path} row {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[pos["id"]].strip()
        if sid in recs:
            raise DataError(f"{path} row {lineno}: duplicate id {sid!r}")
        time = _number(row[pos["time"]], path, lineno, "time")
        status = _number(row[pos["status"]], path, lineno, "status")
        if status not in (0.0, 1.0):
            raise DataError(f"{path} row {lineno}: status must be 0 or 1")
        if time <= 0:
            raise DataError(f"{path} row {lineno}: time must be positive")
        yv = _number(row[pos["y"]], path, lineno, "y")
        z = [_number(row[pos[c]], path, lineno, c) for c in zc]
        recs[sid] = (time, int(status), yv, {0.0: z})
        order.append(sid)

    if covariates_path is not None:
        cpath = Path(covariates_path)
        cheader, crows = _read_rows(cpath)
        for col in ("id", "start"):
            if col not in cheader:
                raise DataError(f"{cpath}: missing column {col!r}")
        czc = _zcols(cheader, cpath)
        if len(czc) != len(zc):
            raise DataError(f"{cpath}: covariate count differs from subjects file")
        cpos = {h: i for i, h in enumerate(cheader)}
        seen = set()
        for lineno, row in crows:
            if len(row) != len(cheader):
                raise DataError(f"{cpath} row {lineno}: expected {len(cheader)} fields")
            sid = row[cpos["id"]].strip()
            if sid not in recs:
                raise DataError(f"{cpath} row {lineno}: unknown id {sid!r}")
            start = _number(row[cpos["start"]], cpath, lineno, "start")
            if start < 0:
                raise DataError(f"{cpath} row {lineno}: start must be nonnegative")
            if (sid, start) in seen:
                raise DataError(f"{cpath} row {lineno}: duplicate (id, start) = ({sid}, {start:g})")
            seen.add((sid, start))
            recs[sid][3][start] = [_number(row[cpos[c]], cpath, lineno, c) for c in czc]

    if tau is None:
        tau = max(r[0] for r in recs.values())
    subjects = []
    for sid in order:
        time, status, yv, pieces = recs[sid]
        starts = sorted(pieces)
        path_ = CovariatePath(np.array(starts), np.array([pieces[s] for s in starts]))
        subjects.append(Subject(time, status, yv, path_, sid))
    return Dataset(tuple(subjects), float(tau), len(zc) - q, q)


def write_dataset(ds: Dataset, subjects_path, covariates_path=None) -> None:
    """Write ``ds`` in the format read by :func:`load_dataset`.

    Time-varying paths need ``covariates_path``; it is written only when
    some path has more than one piece.
    """
    zc = [f"z{k}" for k in range(1, ds.d + 1)]
    with open(subjects_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "status", "y", *zc])
        for i, s in enumerate(ds.subjects):
            sid = s.id or str(i + 1)
            w.writerow([sid, repr(s.v), s.delta, repr(s.y), *[repr(float(x)) for x in s.z.values[0]]])
    multi = [s for s in ds.subjects if s.z.breakpoints.size > 1]
    if multi:
        if covariates_path is None:
            raise DataError("time-varying covariates need a covariate file path")
        with open(covariates_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "start", *zc])
            for i, s in enumerate(ds.subjects):
                sid = s.id or str(i + 1)
                for start, vals in zip(s.z.breakpoints[1:], s.z.values[1:]):
                    w.writerow([sid, repr(float(start)), *[repr(float(x)) for x in vals]])
