"""Confidence interval for one coefficient by inverting the cyclic permutation test.

With ``S_j = y . eta_j`` and gap ``delta``, shifting ``y`` by ``X_1 b`` moves
only ``S_0`` (by ``-b delta``) once the common offset cancels in the median.
The accepted set in ``x = b delta`` is where

    (1 + #{j >= 1 : |S_j - med(x)| >= |S_0 - x - med(x)|}) / (m + 1) > alpha

with ``med(x)`` the median of ``(S_0 - x, S_1, ..., S_m)``. The median is
piecewise linear in ``x`` and each indicator flips only at roots of linear
equations inside a piece, so the set is found exactly by enumerating those
roots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .construction import EtaSystem
from .ordering import OrderingConfig
from .rank_test import center, cpt, default_m, statistics


class IntervalError(ValueError):
    pass


@dataclass(frozen=True)
class InversionResult:
    x_min: float
    x_max: float
    delta: float
    level: float
    breakpoint_count: int
    bounded: bool = True
    components: tuple = field(default=(), repr=False)
    candidates: np.ndarray = field(default=None, repr=False)

    @property
    def interval(self) -> tuple[float, float]:
        return (self.x_min / self.delta, self.x_max / self.delta)

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1

    def contains(self, beta: float) -> bool:
        lo, hi = self.interval
        return lo <= beta <= hi


def _pvalue_curve(a: float, b: np.ndarray, x: np.ndarray, tol: float) -> np.ndarray:
    """p-value of the shifted test at each ``x`` (vectorised over ``x``)."""
    K = b.size + 1
    vals = np.column_stack([a - x, np.broadcast_to(b, (x.size, b.size))])
    med = np.median(vals, axis=1)
    lhs = np.abs(a - x - med)
    rhs = np.abs(b[None, :] - med[:, None])
    return (1 + np.sum(rhs >= lhs[:, None] - tol, axis=1)) / K


def breakpoints(a: float, b: np.ndarray) -> np.ndarray:
    """Every ``x`` at which the p-value curve can change value."""
    b = np.sort(np.asarray(b, dtype=float))
    m = b.size
    K = m + 1
    mids = [K // 2] if K % 2 else [K // 2 - 1, K // 2]
    cands = list(a - b)
    # piece k: k of the b's lie below a - x, i.e. x in (a - b[k], a - b[k-1])
    for k in range(m + 1):
        c0, c1 = 0.0, 0.0
        for i in mids:
            if i < k:
                c0 += b[i]
            elif i == k:
                c0 += a
                c1 -= 1.0
            else:
                c0 += b[i - 1]
        c0 /= len(mids)
        c1 /= len(mids)
        lo = a - b[k] if k < m else -np.inf
        hi = a - b[k - 1] if k > 0 else np.inf
        # |g| = |h_j|: g - h_j = a - b_j - x (already listed); g + h_j below
        slope = 1.0 + 2.0 * c1
        if slope == 0.0:
            continue
        roots = (a + b - 2.0 * c0) / slope
        cands.extend(roots[(roots >= lo) & (roots <= hi)])
    return np.unique(np.asarray(cands, dtype=float))


def invert_statistics(S: np.ndarray, alpha: float, delta: float) -> InversionResult:
    """Invert the test given the cyclic statistics ``S`` and the gap ``delta``."""
    S = np.asarray(S, dtype=float)
    m = S.size - 1
    if not delta > 0:
        raise IntervalError("interval undefined (unbounded): non-positive signal gap")
    a, b = S[0], S[1:]
    if alpha < 1.0 / (m + 1):
        return InversionResult(-np.inf, np.inf, delta, 1 - alpha, 0, bounded=False,
                               components=((-np.inf, np.inf),))
    cands = breakpoints(a, b)
    scale = max(np.max(np.abs(S)), np.max(np.abs(cands)), 1e-300)
    tol = 1e-12 * scale
    span = max(cands[-1] - cands[0], 1.0)
    mids = 0.5 * (cands[:-1] + cands[1:])
    # interleave: outside-left, c_0, mid_0, c_1, ..., c_last, outside-right
    pts = np.empty(2 * cands.size + 1)
    pts[0] = cands[0] - span
    pts[1:-1:2] = cands
    pts[2:-1:2] = mids
    pts[-1] = cands[-1] + span
    ok = _pvalue_curve(a, b, pts, tol) > alpha
    if ok[0] or ok[-1]:
        return InversionResult(-np.inf, np.inf, delta, 1 - alpha, cands.size,
                               bounded=False, candidates=cands)
    comps = []
    i = 0
    while i < pts.size:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < pts.size and ok[j + 1]:
            j += 1
        # a run starting or ending on a midpoint extends to the adjacent candidate
        left = pts[i] if i % 2 == 1 else pts[i - 1]
        right = pts[j] if j % 2 == 1 else pts[j + 1]
        comps.append((float(left), float(right)))
        i = j + 1
    if not comps:
        # cannot happen for alpha >= 1/(m+1): x = S_0 - med gives p = 1
        raise IntervalError("empty acceptance region")
    return InversionResult(comps[0][0], comps[-1][1], float(delta), 1 - alpha,
                           int(cands.size), components=tuple(comps), candidates=cands)


def invert(y: np.ndarray, X: np.ndarray, coef_index: int, alpha: float, m: int,
           system: EtaSystem) -> InversionResult:
    """Interval for ``beta[coef_index]`` given a solved single-column system.

    ``y`` and ``X`` must be in the row order the system was solved for.
    """
    if system.r != 1:
        raise IntervalError("multivariate inversion unsupported (r > 1)")
    if system.m != m:
        raise IntervalError(f"system built for m={system.m}, got m={m}")
    if system.vanishing or system.objective <= 0:
        raise IntervalError("interval undefined (unbounded): vanishing signal")
    x1 = np.asarray(X, dtype=float)[:, coef_index]
    delta = float(x1 @ (system.etas[0] - system.etas[1]))
    S = statistics(y, system)
    return invert_statistics(S, alpha, delta)


def grid_interval(S: np.ndarray, alpha: float, delta: float, points: int = 10_000,
                  width: float = 6.0) -> tuple[float, float]:
    """Dense-grid cross-check of :func:`invert_statistics`.

    The grid spans ``S_0 - med(S)`` plus or minus ``width`` times the spread of
    ``S`` (in ``x``), and returns the extreme accepted grid points in
    coefficient units.
    """
    S = np.asarray(S, dtype=float)
    a, b = S[0], S[1:]
    spread = max(np.ptp(S), np.max(np.abs(S - np.median(S))), 1e-12)
    c = a - np.median(b)
    x = np.linspace(c - width * spread, c + width * spread, points)
    ok = _pvalue_curve(a, b, x, 0.0) > alpha
    if not ok.any():
        return (np.nan, np.nan)
    return (x[ok][0] / delta, x[ok][-1] / delta)


def shifted_pvalue(y: np.ndarray, X: np.ndarray, coef_index: int, beta: float,
                   system: EtaSystem) -> float:
    """p-value of the test applied to ``y - X[:, coef] * beta`` (same system)."""
    yb = np.asarray(y, dtype=float) - np.asarray(X, dtype=float)[:, coef_index] * beta
    St = center(statistics(yb, system))
    return float(np.sum(St >= St[0]) / St.size)


def confidence_interval(y, X, coef_index: int, alpha: float = 0.05, m: int | None = None,
                        ordering: str = "none", config: OrderingConfig | None = None):
    """Run the full pipeline for ``beta[coef_index] = 0`` and invert it.

    Returns ``(InversionResult, CPTResult)``.
    """
    if m is None:
        m = default_m(alpha)
    res = cpt(y, X, coef_index, alpha=alpha, m=m, ordering=ordering, config=config)
    perm = res.ordering.permutation
    Xp = np.asarray(X, dtype=float)[perm]
    if Xp.ndim == 1:
        Xp = Xp[:, None]
    inv = invert(np.asarray(y, dtype=float)[perm], Xp, coef_index, alpha, m, res.system)
    return inv, res
