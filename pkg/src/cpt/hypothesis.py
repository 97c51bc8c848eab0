"""Reduction of a linear hypothesis ``R^T beta = 0`` to a leading-coefficient null."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class HypothesisError(ValueError):
    """Raised for malformed or degenerate hypothesis specifications."""


@dataclass(frozen=True)
class ContrastSpec:
    """Either a set of tested column indices or a ``p x r`` contrast matrix.

    Exactly one of ``indices`` (0-based) and ``contrast`` must be given.
    """

    indices: tuple[int, ...] | None = None
    contrast: np.ndarray | None = None

    def __post_init__(self):
        if (self.indices is None) == (self.contrast is None):
            raise HypothesisError("give exactly one of indices or contrast")
        if self.indices is not None:
            idx = tuple(int(i) for i in self.indices)
            if len(idx) == 0:
                raise HypothesisError("empty index set")
            if len(set(idx)) != len(idx):
                raise HypothesisError("duplicate indices")
            object.__setattr__(self, "indices", idx)
        else:
            R = np.atleast_2d(np.asarray(self.contrast, dtype=float))
            if R.shape[0] == 1 and R.shape[1] > 1 and np.ndim(self.contrast) == 1:
                R = R.T
            object.__setattr__(self, "contrast", R)

    @classmethod
    def coefficient(cls, index: int) -> "ContrastSpec":
        return cls(indices=(index,))

    @property
    def r(self) -> int:
        if self.indices is not None:
            return len(self.indices)
        return self.contrast.shape[1]


@dataclass(frozen=True)
class ReducedProblem:
    """Design with the tested directions moved to the first ``r`` columns.

    ``X_tilde = (X @ basis_u, X @ basis_v)``; testing the first ``r``
    coefficients of ``X_tilde`` is the original hypothesis.
    """

    X_tilde: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray
    spec: ContrastSpec = field(repr=False)

    @property
    def r(self) -> int:
        return self.basis_u.shape[1]


def _canonical_signs(Q: np.ndarray, tol: float) -> np.ndarray:
    # first entry of non-negligible magnitude made positive, per column
    Q = Q.copy()
    for k in range(Q.shape[1]):
        col = Q[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            Q[:, k] = -col
    return Q


def reduce(X: np.ndarray, spec: ContrastSpec) -> ReducedProblem:
    """Change basis so that ``spec`` becomes ``beta_1 = ... = beta_r = 0``.

    Index specs are a pure column reordering (tested columns first, in the
    given order, then the remaining columns in their original order). Contrast
    specs use an SVD of ``R`` for both the column span and its complement.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise HypothesisError("X must be a non-empty 2-d array")
    p = X.shape[1]
    r = spec.r
    if r > p:
        raise HypothesisError(f"too many constraints: r={r} > p={p}")

    if spec.indices is not None:
        if min(spec.indices) < 0 or max(spec.indices) >= p:
            raise HypothesisError(f"index out of range for p={p}")
        rest = [j for j in range(p) if j not in spec.indices]
        order = list(spec.indices) + rest
        eye = np.eye(p)
        U = eye[:, list(spec.indices)]
        V = eye[:, rest]
        return ReducedProblem(X[:, order], U, V, spec)

    R = spec.contrast
    if R.shape[0] != p:
        raise HypothesisError(f"contrast has {R.shape[0]} rows, X has {p} columns")
    W, s, _ = np.linalg.svd(R, full_matrices=True)
    tol = max(R.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < r:
        raise HypothesisError(f"contrast not full rank (rank {rank} < r={r})")
    U = _canonical_signs(W[:, :r], 1e-12)
    V = _canonical_signs(W[:, r:], 1e-12)
    return ReducedProblem(np.hstack([X @ U, X @ V]), U, V, spec)


def indices_spec(indices: Sequence[int]) -> ContrastSpec:
    return ContrastSpec(indices=tuple(indices))
