"""Histogram value types and the density <-> cumulative transforms.

All arrays are float64.  Bins are ordered and unit-spaced; optional labels
are carried along for display only and never enter any computation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SUM_TOL = 1e-9
MONO_TOL = 1e-12


class HistogramError(ValueError):
    pass


class AllZero(HistogramError):
    pass


class NegativeMass(HistogramError):
    pass


class DimensionMismatch(HistogramError):
    pass


class InvalidHistogram(HistogramError):
    pass


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidHistogram(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidHistogram("histogram contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DensityHistogram:
    """Normalized per-bin masses."""

    values: np.ndarray
    labels: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        arr = _frozen_vector(self.values)
        if arr.min() < -MONO_TOL or arr.max() > 1 + MONO_TOL:
            raise InvalidHistogram("density values must lie in [0, 1]")
        if abs(arr.sum() - 1.0) > SUM_TOL:
            raise InvalidHistogram(f"density values sum to {arr.sum()!r}, not 1")
        if self.labels is not None and len(self.labels) != arr.size:
            raise DimensionMismatch("labels and values differ in length")
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, DensityHistogram) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CumulativeHistogram:
    """Running sums of a density histogram (a discrete CDF over bins)."""

    values: np.ndarray
    labels: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        arr = _frozen_vector(self.values)
        if np.any(np.diff(arr) < -MONO_TOL):
            raise InvalidHistogram("cumulative values must be non-decreasing")
        if arr[0] < -MONO_TOL:
            raise InvalidHistogram("cumulative values must be non-negative")
        if abs(arr[-1] - 1.0) > SUM_TOL:
            raise InvalidHistogram(f"last cumulative value is {arr[-1]!r}, not 1")
        if self.labels is not None and len(self.labels) != arr.size:
            raise DimensionMismatch("labels and values differ in length")
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, CumulativeHistogram) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class QuantileLevel:
    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not 0.0 < tau < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {tau!r}")
        object.__setattr__(self, "tau", tau)

    def __float__(self):
        return self.tau


def cumsum(h: DensityHistogram) -> CumulativeHistogram:
    return CumulativeHistogram(np.cumsum(h.values), labels=h.labels)


def diff(M: CumulativeHistogram) -> DensityHistogram:
    out = np.diff(M.values, prepend=0.0)
    # round-off from the running sum can leave values a hair outside [0, 1]
    return DensityHistogram(np.clip(out, 0.0, 1.0), labels=M.labels)


def normalize(raw: Iterable[float], labels: Optional[Sequence] = None) -> DensityHistogram:
    arr = np.asarray(list(raw) if not isinstance(raw, np.ndarray) else raw, dtype=np.float64)
    if np.any(arr < 0):
        raise NegativeMass("histogram entries must be non-negative")
    total = arr.sum()
    if total == 0:
        raise AllZero("cannot normalize a histogram with zero total mass")
    return DensityHistogram(arr / total, labels=tuple(labels) if labels is not None else None)


def values_of(h) -> np.ndarray:
    """Plain float64 array view of a histogram object or array-like."""
    if isinstance(h, (DensityHistogram, CumulativeHistogram)):
        return h.values
    return np.asarray(h, dtype=np.float64)


def tau_of(tau) -> np.ndarray:
    if isinstance(tau, QuantileLevel):
        return np.float64(tau.tau)
    return np.asarray(tau, dtype=np.float64)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_histogram_csv(path) -> tuple[np.ndarray, Optional[list[str]]]:
    """Read one histogram per row.  Returns ``(values, header)``.

    A header row is recognised by a non-numeric first token.
    """
    rows = []
    header = None
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0 and not _is_number(row[0].strip()):
                header = [c.strip() for c in row]
                continue
            rows.append([float(c) for c in row])
    if not rows:
        return np.zeros((0, len(header) if header else 0)), header
    widths = {len(r) for r in rows}
    if len(widths) != 1 or (header is not None and widths != {len(header)}):
        raise DimensionMismatch(f"{path}: rows have inconsistent bin counts {sorted(widths)}")
    return np.array(rows, dtype=np.float64), header


def write_histogram_csv(path, histograms, header: bool = True) -> None:
    arr = np.atleast_2d(np.asarray([values_of(h) for h in histograms], dtype=np.float64))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"bin_{j + 1}" for j in range(arr.shape[1])])
        for row in arr:
            w.writerow([repr(float(v)) for v in row])
