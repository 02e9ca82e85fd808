"""Linear forward operators with adjoints.

Two realizations are supported: a diagonal (spectral) operator given by its
singular values, and a dense matrix. Both are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "OperatorError",
    "DiagonalOperator",
    "DenseOperator",
    "apply",
    "apply_adjoint",
    "normalize",
    "power_norm",
    "load_mtx",
    "load_vector_csv",
    "load_diagonal_csv",
    "write_vector_csv",
]


class OperatorError(ValueError):
    """Invalid operator construction or dimension mismatch."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    """Operator ``(Ax)_i = sigma_i x_i`` with nonincreasing positive ``sigma``."""

    singular_values: np.ndarray
    kind: str = field(default="diagonal", init=False)

    def __post_init__(self):
        s = _frozen(self.singular_values)
        if s.ndim != 1 or s.size == 0:
            raise OperatorError("singular values must be a nonempty 1-d array")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise OperatorError("singular values must be finite and strictly positive")
        if np.any(np.diff(s) > 0):
            raise OperatorError("singular values must be sorted nonincreasing")
        object.__setattr__(self, "singular_values", s)

    @property
    def dims(self) -> tuple[int, int]:
        n = self.singular_values.size
        return (n, n)

    @property
    def norm(self) -> float:
        return float(self.singular_values[0])

    def apply(self, x):
        x = _check_len(x, self.dims[1])
        return self.singular_values * x

    def apply_adjoint(self, y):
        y = _check_len(y, self.dims[0])
        return self.singular_values * y

    def to_dense(self) -> DenseOperator:
        return DenseOperator(np.diag(self.singular_values))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense ``m x n`` matrix operator.

    ``norm_estimate`` is the spectral norm, estimated by power iteration when
    not supplied.
    """

    matrix: np.ndarray
    norm_estimate: float | None = None
    kind: str = field(default="dense", init=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.size == 0:
            raise OperatorError("matrix must be a nonempty 2-d array")
        if not np.all(np.isfinite(a)):
            raise OperatorError("matrix entries must be finite")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        if self.norm_estimate is None:
            object.__setattr__(self, "norm_estimate", power_norm(a))

    @property
    def dims(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def norm(self) -> float:
        return float(self.norm_estimate)

    def apply(self, x):
        x = _check_len(x, self.dims[1])
        return self.matrix @ x

    def apply_adjoint(self, y):
        y = _check_len(y, self.dims[0])
        return self.matrix.T @ y


def _check_len(v, n):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise OperatorError(f"expected vector of length {n}, got shape {v.shape}")
    return v


def apply(op, x):
    """Return ``A x``."""
    return op.apply(x)


def apply_adjoint(op, y):
    """Return ``A^* y``."""
    return op.apply_adjoint(y)


def power_norm(matrix, maxit=500, rtol=1e-8):
    """Spectral norm of ``matrix`` by power iteration on ``A^T A``.

    The start vector is the normalized all-ones vector, so the estimate is
    deterministic.
    """
    a = np.asarray(matrix, dtype=float)
    v = np.ones(a.shape[1]) / np.sqrt(a.shape[1])
    est = 0.0
    for _ in range(maxit):
        w = a.T @ (a @ v)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            # start vector in the null space; fall back to a full SVD
            return float(np.linalg.norm(a, 2))
        v = w / wn
        new = np.sqrt(wn)
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    # Rayleigh quotient of the final iterate is a lower bound on the true norm
    return float(np.linalg.norm(a @ v))


def normalize(op):
    """Return a copy of ``op`` scaled to unit spectral norm."""
    if op.kind == "diagonal":
        s = op.singular_values
        return DiagonalOperator(s / s[0])
    if not np.any(op.matrix):
        raise OperatorError("cannot normalize the zero operator")
    nrm = op.norm
    if nrm <= 0:
        raise OperatorError("cannot normalize the zero operator")
    scaled = op.matrix / nrm
    return DenseOperator(scaled, norm_estimate=min(1.0, power_norm(scaled)))


def load_mtx(path) -> DenseOperator:
    """Read a Matrix Market file (coordinate or array) as a dense operator."""
    from scipy.io import mmread

    m = mmread(str(path))
    if hasattr(m, "toarray"):
        m = m.toarray()
    m = np.asarray(m)
    if np.iscomplexobj(m):
        raise OperatorError("complex-valued matrices are not supported")
    return DenseOperator(m.astype(float))


def load_vector_csv(path) -> np.ndarray:
    """Read a one-column CSV of numbers; a non-numeric header line is skipped."""
    values = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue
                raise
    return np.array(values, dtype=float)


def write_vector_csv(path, v) -> None:
    Path(path).write_text("".join(f"{x:.17g}\n" for x in np.asarray(v, dtype=float)))


def load_diagonal_csv(path) -> DiagonalOperator:
    return DiagonalOperator(load_vector_csv(path))
