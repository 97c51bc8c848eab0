"""Coefficient vectors for cyclic-shift-invariant linear statistics.

Given a design ``X`` whose first ``r`` columns carry the tested coefficients,
the routines here build ``eta_0, ..., eta_m`` such that

* ``X[:, r:].T @ eta_j`` is the same for every ``j`` (nuisance matching),
* ``eta_j`` is a block rotation of a single base vector ``eta_star``,
* ``X[:, :r].T @ eta_0`` differs from the common value of
  ``X[:, :r].T @ eta_j`` (``j >= 1``) by a gap ``delta`` that is as large
  as possible.

Shift operators are stored as index maps. ``eta_j = eta_star[shift_operator(plan, j)]``
and the transposed action on the rows of ``X`` is a gather with the inverse map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

EPS = np.finfo(float).eps

#: relative tolerance for the nuisance-matching and gap conditions
CONDITION_TOL = 1e-8

#: objective below this fraction of the signal scale is treated as zero
VANISHING_TOL = 1e-12


class ConstructionError(ValueError):
    """A precondition of the construction is violated."""


class VanishingSignalWarning(UserWarning):
    """The optimal signal gap is zero; the test stays valid but has no power."""


@dataclass(frozen=True)
class ShiftPlan:
    """Block layout for ``m + 1`` statistics over ``n`` observations.

    The first ``(m + 1) * t`` coordinates are rotated in blocks of length
    ``t``; the last ``s`` coordinates are fixed.
    """

    n: int
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ConstructionError(f"m must be >= 1, got {self.m}")
        if self.n < self.m + 1:
            raise ConstructionError(
                f"validity condition violated: n={self.n} < m+1={self.m + 1}, "
                f"no nontrivial shifts exist (t = 0)"
            )

    @property
    def t(self) -> int:
        return self.n // (self.m + 1)

    @property
    def s(self) -> int:
        return self.n - (self.m + 1) * self.t

    @property
    def cycle_length(self) -> int:
        return (self.m + 1) * self.t


def shift_operator(plan: ShiftPlan, j: int) -> np.ndarray:
    """Index map of the ``j``-th shift: ``eta_j = eta_star[map]``.

    The first ``(m + 1) t`` entries are left-shifted by ``t * j`` positions;
    the trailing ``s`` entries are fixed points.
    """
    if not 0 <= j <= plan.m:
        raise ConstructionError(f"shift index j={j} outside [0, {plan.m}]")
    N = plan.cycle_length
    idx = np.arange(plan.n)
    idx[:N] = (idx[:N] + plan.t * j) % N
    return idx


def _transpose_map(plan: ShiftPlan, j: int) -> np.ndarray:
    # rows of Pi_j^T X, i.e. (Pi_j^T X)[l] = X[map[l]]
    N = plan.cycle_length
    idx = np.arange(plan.n)
    idx[:N] = (idx[:N] - plan.t * j) % N
    return idx


def shifted_etas(eta_star: np.ndarray, plan: ShiftPlan) -> np.ndarray:
    """Stack ``eta_0, ..., eta_m`` as rows of an ``(m + 1) x n`` array."""
    return np.stack([eta_star[shift_operator(plan, j)] for j in range(plan.m + 1)])


def build_B(X: np.ndarray, plan: ShiftPlan) -> np.ndarray:
    """``((I - Pi_m)^T X, (Pi_1 - Pi_m)^T X, ..., (Pi_{m-1} - Pi_m)^T X)``.

    Returns an ``n x (m p)`` array; block ``k`` occupies columns
    ``k p : (k + 1) p``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != plan.n:
        raise ConstructionError(f"X must have {plan.n} rows, got shape {X.shape}")
    last = X[_transpose_map(plan, plan.m)]
    return np.hstack([X[_transpose_map(plan, k)] - last for k in range(plan.m)])


def _residualize(target: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Residual of minimum-norm least squares of ``target`` on ``others``."""
    if others.shape[1] == 0:
        return target.copy()
    cond = max(others.shape) * EPS
    coef = sla.lstsq(others, target, cond=cond, lapack_driver="gelsy",
                     check_finite=False)[0]
    return target - others @ coef


@dataclass(frozen=True)
class EtaSystem:
    """Solved coefficient system.

    ``objective`` is the gap ``||eta_tilde||`` for the linear criterion
    (``r = 1``) or ``lambda_max`` of the weighted quadratic criterion.
    """

    eta_star: np.ndarray
    etas: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    objective: float
    plan: ShiftPlan
    r: int
    criterion: str = "linear"
    vanishing: bool = False
    weight: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.plan.m

    @property
    def n(self) -> int:
        return self.plan.n


def solve_validity_only(X_minus_r: np.ndarray, plan: ShiftPlan):
    """Base vector whose shifts all give the same nuisance inner products.

    Returns ``(eta_star, gamma)`` with ``X_minus_r.T @ eta_j == gamma`` for
    every ``j``. Requires ``n / (p - r) > m``.
    """
    Z = np.asarray(X_minus_r, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, q = Z.shape
    if n != plan.n:
        raise ConstructionError(f"X has {n} rows, plan expects {plan.n}")
    if q == 0:
        eta = np.zeros(n)
        eta[0] = 1.0
        return eta, np.zeros(0)
    if n <= plan.m * q:
        raise ConstructionError(
            f"validity condition violated: n/(p-r) = {n}/{q} must exceed m = {plan.m}"
        )
    B = build_B(Z, plan)
    U, s, _ = np.linalg.svd(B, full_matrices=True)
    tol = max(B.shape) * EPS * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > tol))
    null = U[:, rank:]
    if null.shape[1] == 0:
        raise ConstructionError("degenerate system: empty null space")
    # deterministic pick: projection of e_1, else the first null direction
    eta = null @ null[0]
    norm = np.linalg.norm(eta)
    if norm < 1e-8:
        eta = null[:, 0].copy()
        norm = np.linalg.norm(eta)
    eta = eta / norm
    gamma = Z.T @ eta
    return eta, gamma


def signal_capacity(plan: ShiftPlan, p: int, r: int) -> int:
    """Generic dimension left for the gap: ``m min(t, p) - (m p - r)``.

    ``B(X)`` has rank at most ``m min(t, p)`` (each nonzero frequency of the
    block rotation carries at most ``min(t, p)`` directions) and ``m p - r``
    of its columns are constraints, so the gap vanishes when this is <= 0.
    """
    return plan.m * min(plan.t, p) - (plan.m * p - r)


def _fallback_system(X, plan, r, objective, criterion, weight):
    msg = "vanishing signal: optimal gap is zero, test has trivial power"
    if signal_capacity(plan, X.shape[1], r) <= 0:
        msg += (f" (blocks hold t={plan.t} rows for p={X.shape[1]} columns;"
                f" a nonzero gap needs m*min(t, p) > m*p - r)")
    warnings.warn(msg, VanishingSignalWarning, stacklevel=3)
    eta_star, _ = solve_validity_only(X[:, r:], plan)
    etas = shifted_etas(eta_star, plan)
    gamma = X.T @ etas[1]
    delta = X[:, :r].T @ (etas[0] - etas[1])
    return EtaSystem(eta_star, etas, gamma, delta, objective, plan, r,
                     criterion=criterion, vanishing=True, weight=weight)


def solve_eta_r1(X: np.ndarray, plan: ShiftPlan, check: bool = True) -> EtaSystem:
    """Closed-form maximiser of the gap ``delta`` for a single tested column.

    ``eta_tilde`` is the residual of the first column of ``B(X)`` after
    minimum-norm least squares on the remaining columns; the base vector is
    ``eta_tilde / ||eta_tilde||`` and the objective is ``||eta_tilde||``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < p * plan.m:
        raise ConstructionError(
            f"power condition violated: n ≥ pm required, got n={n}, p={p}, m={plan.m}"
        )
    B = build_B(X, plan)
    b1 = B[:, 0]
    eta_tilde = _residualize(b1, B[:, 1:])
    obj = float(np.linalg.norm(eta_tilde))
    if obj <= VANISHING_TOL * max(np.linalg.norm(b1), np.finfo(float).tiny):
        return _fallback_system(X, plan, 1, 0.0, "linear", None)
    eta_star = eta_tilde / obj
    etas = shifted_etas(eta_star, plan)
    gamma = X.T @ etas[1]
    system = EtaSystem(eta_star, etas, gamma, np.array([obj]), obj, plan, 1)
    if check:
        check_conditions(X, system)
    return system


def _validate_weight(M, r: int) -> np.ndarray:
    M = np.eye(r) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (r, r):
        raise ConstructionError(f"weight matrix must be {r}x{r}, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12):
        raise ConstructionError("weight matrix not symmetric")
    if r and np.linalg.eigvalsh(M).min() < -1e-12:
        raise ConstructionError("weight matrix not positive semidefinite")
    return 0.5 * (M + M.T)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def solve_eta_general(X: np.ndarray, plan: ShiftPlan, r: int, M=None,
                      check: bool = True) -> EtaSystem:
    """Quadratic-criterion solution for ``r >= 1`` tested columns.

    Maximises ``delta^T M delta`` over unit-norm ``eta``; the optimum is the
    top eigenpair of ``C M C^T`` with ``C`` the first ``r`` columns of ``B(X)``
    residualised on the rest. The ``n x n`` matrix is never formed: its
    nonzero spectrum is that of ``M^{1/2} C^T C M^{1/2}``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if not 1 <= r <= p:
        raise ConstructionError(f"r={r} outside [1, {p}]")
    M = _validate_weight(M, r)
    if n < p * plan.m - r + 1:
        raise ConstructionError(
            f"power condition violated: n ≥ pm - r + 1 required, "
            f"got n={n}, p={p}, m={plan.m}, r={r}"
        )
    B = build_B(X, plan)
    C = _residualize(B[:, :r], B[:, r:])
    Ms = _psd_sqrt(M)
    K = Ms @ (C.T @ C) @ Ms
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    lam = float(max(w[-1], 0.0))
    # compare with the unconstrained optimum, as the r = 1 rule compares
    # ||eta_tilde|| with ||B_1||; lambda is quadratic, hence the square root
    Br = B[:, :r] @ Ms
    scale = float(np.linalg.norm(Br, 2))
    if lam == 0.0 or np.sqrt(lam) <= VANISHING_TOL * max(scale, np.finfo(float).tiny):
        return _fallback_system(X, plan, r, 0.0, "quadratic", M)
    u = C @ (Ms @ V[:, -1])
    eta_star = u / np.linalg.norm(u)
    # sign: make the first gap component non-negative
    d = B[:, :r].T @ eta_star
    if d[np.argmax(np.abs(d))] < 0:
        eta_star = -eta_star
    etas = shifted_etas(eta_star, plan)
    gamma = X.T @ etas[1]
    delta = B[:, :r].T @ eta_star
    system = EtaSystem(eta_star, etas, gamma, delta, lam, plan, r,
                       criterion="quadratic", weight=M)
    if check:
        check_conditions(X, system)
    return system


def solve_eta(X: np.ndarray, plan: ShiftPlan, r: int = 1, M=None) -> EtaSystem:
    """Dispatch: closed form for a single column without weights, eigen otherwise."""
    if r == 1 and M is None:
        return solve_eta_r1(X, plan)
    return solve_eta_general(X, plan, r, M)


def condition_residuals(X: np.ndarray, system: EtaSystem) -> tuple[float, float]:
    """Max violation of nuisance matching and of the gap condition."""
    r = system.r
    G = X.T @ system.etas.T  # p x (m+1)
    nuis = G[r:]
    c1 = float(np.max(np.abs(nuis - system.gamma[r:, None]))) if nuis.size else 0.0
    tested = G[:r]
    gap = tested[:, 0] - tested[:, 1]
    c3 = float(np.max(np.abs(gap - system.delta)))
    if system.m > 1:
        c3 = max(c3, float(np.max(np.abs(tested[:, 1:] - tested[:, [1]]))))
    return c1, c3


def check_conditions(X: np.ndarray, system: EtaSystem, tol: float = CONDITION_TOL):
    """Raise if the solved system violates nuisance matching or the gap condition."""
    c1, c3 = condition_residuals(X, system)
    bound = tol * max(np.linalg.norm(X, np.inf), 1.0) * np.linalg.norm(system.eta_star)
    if c1 > bound:
        raise ConstructionError(f"nuisance matching failed: residual {c1:.3e} > {bound:.3e}")
    if c3 > bound:
        raise ConstructionError(f"gap condition failed: residual {c3:.3e} > {bound:.3e}")


def objective(X: np.ndarray, plan: ShiftPlan, r: int = 1, M=None) -> float:
    """Optimal objective of :func:`solve_eta` without building ``eta``.

    The shifts act as a cyclic group on row blocks, so after a discrete
    Fourier transform across blocks the constraints separate by frequency
    into ``p x p`` Hermitian systems. Falls back to the projection route when
    any frequency block is ill-conditioned or the precondition fails.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    quadratic = not (r == 1 and M is None)
    if quadratic:
        M = _validate_weight(M, r)
        if n < p * plan.m - r + 1:
            raise ConstructionError(
                f"power condition violated: n ≥ pm - r + 1 required, "
                f"got n={n}, p={p}, m={plan.m}, r={r}"
            )
    elif n < p * plan.m:
        raise ConstructionError(
            f"power condition violated: n ≥ pm required, got n={n}, p={p}, m={plan.m}"
        )
    K, t = plan.m + 1, plan.t
    if t < p:
        return _objective_projection(X, plan, r, M, quadratic)
    F = np.fft.rfft(X[: K * t].reshape(K, t, p), axis=0)[1:]
    H = np.conj(F.transpose(0, 2, 1)) @ F
    lam, U = np.linalg.eigh(H)
    if np.any(lam[:, 0] <= 1e-8 * lam[:, -1]) or np.any(lam[:, -1] <= 0):
        return _objective_projection(X, plan, r, M, quadratic)
    Ur = U[:, :r, :]
    G = (Ur / lam[:, None, :]) @ np.conj(Ur.transpose(0, 2, 1))
    weights = np.full(len(G), 2.0)
    if K % 2 == 0:
        weights[-1] = 1.0
    Q = np.tensordot(weights, G.real, axes=1) / K
    if not quadratic:
        return float(np.sqrt(1.0 / Q[0, 0]))
    # max delta^T M delta subject to delta^T Q delta = 1
    L = np.linalg.cholesky(0.5 * (Q + Q.T))
    Linv = np.linalg.inv(L)
    return float(max(np.linalg.eigvalsh(Linv @ M @ Linv.T)[-1], 0.0))


def _objective_projection(X, plan, r, M, quadratic):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VanishingSignalWarning)
        if quadratic:
            return solve_eta_general(X, plan, r, M, check=False).objective
        return solve_eta_r1(X, plan, check=False).objective
