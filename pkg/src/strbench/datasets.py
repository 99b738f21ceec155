"""LibSVM-format ingestion and synthetic binary-classification datasets.

A :class:`Dataset` is an immutable bag of sparse rows with labels in
``{-1, +1}``.  File indices are one-based on disk and zero-based in memory.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

Row = tuple[tuple[int, float], ...]

# Synthetic rows are resampled until the (unit) hyperplane margin clears this
# floor, so separable instances stay perceptron-learnable in bounded time.
_MARGIN_FLOOR = 0.05


class LibsvmParseError(ValueError):
    """Malformed LibSVM text (bad token, bad index, bad label)."""


class DimensionError(ValueError):
    """An explicit feature dimension conflicts with observed indices."""


@dataclass(frozen=True)
class Dataset:
    """Sparse labeled sample matrix.

    Invariants: feature indices are zero-based, strictly increasing within a
    row and smaller than ``d``; labels are exactly -1 or +1; all stored
    values are finite; ``len(rows) == len(labels) == n``.
    """

    n: int
    d: int
    rows: tuple[Row, ...]
    labels: tuple[int, ...]
    source: str = ""

    def __post_init__(self):
        if len(self.rows) != self.n or len(self.labels) != self.n:
            raise ValueError("rows/labels length must equal n")
        if self.d < 0 or self.n < 0:
            raise ValueError("n and d must be non-negative")
        for row in self.rows:
            prev = -1
            for idx, val in row:
                if not prev < idx < self.d:
                    raise ValueError(
                        f"feature index {idx} out of range or not increasing (d={self.d})"
                    )
                if not math.isfinite(val):
                    raise ValueError("non-finite feature value")
                prev = idx
        for lab in self.labels:
            if lab not in (-1, 1):
                raise ValueError(f"label {lab!r} is not -1 or +1")

    def to_dense(self) -> np.ndarray:
        """Dense (n, d) float64 feature matrix."""
        X = np.zeros((self.n, self.d))
        for i, row in enumerate(self.rows):
            for j, v in row:
                X[i, j] = v
        return X

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=float)


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8", errors="replace")
    if isinstance(source, str):
        return io.StringIO(source)
    return source  # file-like or any iterable of lines


def parse_libsvm(source, d_override: int | None = None, name: str = "") -> Dataset:
    """Parse LibSVM text (``<label> <idx>:<val> ...``) into a :class:`Dataset`.

    Labels are binarized by sign (value > 0 maps to +1, otherwise -1).
    One-based file indices become zero-based.  Blank lines and lines whose
    first non-space character is ``#`` are skipped; LF and CRLF both work.

    Raises :class:`LibsvmParseError` with the offending line number on any
    malformed token, and :class:`DimensionError` if ``d_override`` is smaller
    than ``1 + max index``.
    """
    if d_override is not None and d_override <= 0:
        raise DimensionError("d_override must be a positive integer")
    rows: list[Row] = []
    labels: list[int] = []
    max_idx = -1
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        try:
            lab_val = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(f"line {lineno}: bad label {tokens[0]!r}") from None
        if not math.isfinite(lab_val):
            raise LibsvmParseError(f"line {lineno}: non-finite label")
        labels.append(1 if lab_val > 0 else -1)
        row: list[tuple[int, float]] = []
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(f"line {lineno}: bad feature token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(f"line {lineno}: bad feature token {tok!r}") from None
            if idx <= 0:
                raise LibsvmParseError(f"line {lineno}: index {idx} must be >= 1")
            if idx <= prev:
                raise LibsvmParseError(f"line {lineno}: indices must be strictly increasing")
            if not math.isfinite(val):
                raise LibsvmParseError(f"line {lineno}: non-finite value in {tok!r}")
            row.append((idx - 1, val))
            prev = idx
        rows.append(tuple(row))
        if row:
            max_idx = max(max_idx, row[-1][0])
    if d_override is None:
        d = max_idx + 1
    else:
        if d_override < max_idx + 1:
            raise DimensionError(
                f"d_override={d_override} smaller than required {max_idx + 1}"
            )
        d = d_override
    return Dataset(
        n=len(rows), d=d, rows=tuple(rows), labels=tuple(labels), source=name or "<stream>"
    )


def load_libsvm(path, d_override: int | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_libsvm(fh, d_override=d_override, name=str(path))


def to_libsvm(dataset: Dataset) -> str:
    """Serialize back to LibSVM text; round-trips through :func:`parse_libsvm`."""
    lines = []
    for row, lab in zip(dataset.rows, dataset.labels):
        parts = ["+1" if lab > 0 else "-1"]
        parts.extend(f"{idx + 1}:{val!r}" for idx, val in row)
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def generate_synthetic(n: int, d: int, seed: int, separable: bool = False) -> Dataset:
    """Deterministic synthetic dataset: unit-norm Gaussian rows, labels from a
    random hyperplane, 10% label flips unless ``separable``.

    Rows with relative margin below ``0.05/sqrt(d)`` are redrawn so that the
    separable variant is strictly separable with a usable margin.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    margin = _MARGIN_FLOOR / math.sqrt(d)
    X = np.empty((n, d))
    for i in range(n):
        while True:
            x = rng.standard_normal(d)
            nrm = np.linalg.norm(x)
            if nrm == 0.0:
                continue
            x /= nrm
            if abs(float(w @ x)) >= margin:
                break
        X[i] = x
    y = np.where(X @ w > 0, 1, -1)
    if not separable:
        flips = rng.random(n) < 0.1
        y = np.where(flips, -y, y)
    rows = tuple(tuple((j, float(X[i, j])) for j in range(d)) for i in range(n))
    labels = tuple(int(v) for v in y)
    return Dataset(
        n=n,
        d=d,
        rows=rows,
        labels=labels,
        source=f"synthetic(n={n},d={d},seed={seed},separable={separable})",
    )
