"""Monte Carlo size/power harness: CPT variants against the classical t/F-test.

Every random quantity is drawn from a stream keyed by
``(seed, design_copy, role[, s])`` through :class:`numpy.random.SeedSequence`,
so a cell can be recomputed in isolation and results do not depend on how
design copies are scheduled across workers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats as sps

from .construction import ShiftPlan, solve_eta
from .hypothesis import ContrastSpec, reduce
from .ordering import OrderingConfig, optimize
from .rank_test import center, tie_tolerance

log = logging.getLogger(__name__)

DESIGN_FAMILIES = ("gaussian", "cauchy", "oneWayAnova")
ERROR_FAMILIES = ("gaussian", "cauchy")
METHODS = ("cpt_ga", "cpt_search", "cpt_identity", "ttest")

_ROLE_DESIGN, _ROLE_CALIBRATION, _ROLE_ORDERING, _ROLE_ERRORS = range(4)


class CalibrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# random inputs
# ---------------------------------------------------------------------------

def gen_design(family: str, n: int, p: int, rng: np.random.Generator,
               max_tries: int = 1000) -> np.ndarray:
    """Random design realisation.

    ``oneWayAnova`` assigns each row to one of ``p + 1`` groups uniformly; the
    first group is the baseline absorbed by the intercept, so row ``i`` of
    the returned ``n x p`` matrix is the one-hot code of its group (all zeros
    for the baseline). Designs with an empty group are redrawn.
    """
    if family == "gaussian":
        return rng.standard_normal((n, p))
    if family == "cauchy":
        return cauchy(rng, (n, p))
    if family == "oneWayAnova":
        for _ in range(max_tries):
            g = rng.integers(p + 1, size=n)
            if np.unique(g).size == p + 1:
                X = np.zeros((n, p))
                rows = np.flatnonzero(g > 0)
                X[rows, g[rows] - 1] = 1.0
                return X
        raise ValueError(f"could not fill all {p + 1} groups with n={n}")
    raise ValueError(f"unknown design family {family!r}")


def cauchy(rng: np.random.Generator, size) -> np.ndarray:
    """Standard Cauchy by inverse CDF."""
    return np.tan(np.pi * (rng.random(size) - 0.5))


def gen_errors(family: str, size, rng: np.random.Generator) -> np.ndarray:
    if family == "gaussian":
        return rng.standard_normal(size)
    if family == "cauchy":
        return cauchy(rng, size)
    raise ValueError(f"unknown error family {family!r}")


# ---------------------------------------------------------------------------
# classical baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OLSFit:
    """Precomputed pieces of a least-squares fit with an intercept column."""

    Q: np.ndarray
    Rinv: np.ndarray
    cols: np.ndarray
    df: int

    @classmethod
    def build(cls, X: np.ndarray, cols) -> "OLSFit":
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        if n <= p + 1:
            raise ValueError(f"t/F-test needs n > p + 1, got n={n}, p={p}")
        A = np.column_stack([np.ones(n), X])
        Q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.min() <= max(A.shape) * np.finfo(float).eps * d.max():
            raise ValueError("rank-deficient design (with intercept)")
        return cls(Q, np.linalg.inv(R), np.asarray(cols) + 1, n - p - 1)

    def pvalues(self, Y: np.ndarray) -> np.ndarray:
        """Two-sided t (one column) or F (several) p-values for rows of ``Y``."""
        Y = np.atleast_2d(Y)
        QtY = Y @ self.Q
        coef = QtY @ self.Rinv.T
        rss = np.einsum("ij,ij->i", Y, Y) - np.einsum("ij,ij->i", QtY, QtY)
        sigma2 = np.maximum(rss, 0.0) / self.df
        Ri = self.Rinv[self.cols]
        V = Ri @ Ri.T  # (A^T A)^{-1} restricted to tested coefficients
        b = coef[:, self.cols]
        r = len(self.cols)
        with np.errstate(divide="ignore", invalid="ignore"):
            if r == 1:
                t = b[:, 0] / np.sqrt(sigma2 * V[0, 0])
                return 2.0 * sps.t.sf(np.abs(t), self.df)
            Vinv = np.linalg.inv(V)
            F = np.einsum("ij,jk,ik->i", b, Vinv, b) / r / sigma2
            return sps.f.sf(F, r, self.df)


def t_test(y: np.ndarray, X: np.ndarray, spec: ContrastSpec | int, alpha: float = 0.05):
    """Classical t-test (``r = 1``) or F-test (``r > 1``) with an intercept.

    Returns ``(reject, pvalue)``.
    """
    if isinstance(spec, (int, np.integer)):
        spec = ContrastSpec.coefficient(int(spec))
    red = reduce(np.asarray(X, dtype=float), spec)
    fit = OLSFit.build(red.X_tilde, np.arange(red.r))
    p = float(fit.pvalues(np.asarray(y, dtype=float))[0])
    return p <= alpha, p


# ---------------------------------------------------------------------------
# signal calibration
# ---------------------------------------------------------------------------

def default_sigma(r: int) -> np.ndarray:
    """Prior covariance of the multivariate alternative: diag(1/r, 2/r, ..., 1)."""
    return np.diag(np.arange(1, r + 1) / r)


def alternative_coefficients(r: int, s: float, reps: int, rng: np.random.Generator,
                             sigma: np.ndarray | None = None) -> np.ndarray:
    """Per-replicate tested coefficients before scaling by the benchmark.

    ``r = 1``: the constant ``s``. ``r > 1``: draws from ``N(s 1, Sigma)``,
    and exactly zero when ``s = 0`` so that row measures size.
    """
    if r == 1 or s == 0:
        return np.full((reps, r), float(s))
    sigma = default_sigma(r) if sigma is None else sigma
    L = np.linalg.cholesky(sigma)
    return s + rng.standard_normal((reps, r)) @ L.T


def calibrate_signal(X: np.ndarray, error_family: str, rng: np.random.Generator,
                     r: int = 1, alpha: float = 0.05, target_power: float = 0.20,
                     reps: int = 2000, tol: float = 0.01, max_steps: int = 30,
                     sigma: np.ndarray | None = None):
    """Benchmark signal giving the t/F-test roughly ``target_power``.

    The first ``r`` columns of ``X`` are tested. Errors (and, for ``r > 1``,
    coefficient draws at ``s = 1``) are fixed across bisection steps. Returns
    ``(beta, history)`` where ``history`` lists ``(beta, power)`` pairs.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    fit = OLSFit.build(X, np.arange(r))
    E = gen_errors(error_family, (reps, n), rng)
    Z = alternative_coefficients(r, 1.0, reps, rng, sigma)
    signal = Z @ X[:, :r].T

    history = []

    def power(b):
        pw = float(np.mean(fit.pvalues(b * signal + E) <= alpha))
        history.append((b, pw))
        return pw

    lo, hi = 0.0, 1.0
    # scale the starting bracket to the noise level of the estimate
    sd = np.sqrt(np.median(np.abs(E)) ** 2 / max(np.sum((X[:, 0] - X[:, 0].mean()) ** 2), 1e-300))
    hi = max(sd, 1e-12)
    steps = 0
    while power(hi) < target_power:
        lo, hi = hi, 2.0 * hi
        steps += 1
        if steps > max_steps:
            raise CalibrationError("could not bracket the target power")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        pw = power(mid)
        if abs(pw - target_power) <= tol:
            return mid, history
        if pw < target_power:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection did not converge in {max_steps} steps")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    design_family: str = "gaussian"
    error_family: str = "gaussian"
    n: int = 200
    p: int = 5
    r: int = 1
    m: int = 19
    alpha: float = 0.05
    signal_levels: tuple = (0, 1, 2, 3, 4, 5)
    reps: int = 2000
    design_copies: int = 5
    seed: int = 0
    methods: tuple = METHODS
    ga_budget: int = 1000
    search_budget: int = 1000
    population_size: int = 10
    calibration_reps: int = 2000
    target_power: float = 0.20
    name: str = "scenario"

    def __post_init__(self):
        if self.design_family not in DESIGN_FAMILIES:
            raise ValueError(f"unknown designFamily {self.design_family!r}")
        if self.error_family not in ERROR_FAMILIES:
            raise ValueError(f"unknown errorFamily {self.error_family!r}")
        if not self.signal_levels:
            raise ValueError("signalLevels must not be empty")
        levels = tuple(sorted({float(s) for s in self.signal_levels} | {0.0}))
        object.__setattr__(self, "signal_levels", levels)
        object.__setattr__(self, "methods", tuple(self.methods))
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.reps < 1 or self.design_copies < 1:
            raise ValueError("reps and designCopies must be >= 1")
        if not 1 <= self.r <= self.p:
            raise ValueError("need 1 <= r <= p")

    _KEYS = {
        "designFamily": "design_family", "errorFamily": "error_family",
        "signalLevels": "signal_levels", "designCopies": "design_copies",
        "gaBudget": "ga_budget", "searchBudget": "search_budget",
        "populationSize": "population_size", "calibrationReps": "calibration_reps",
        "targetPower": "target_power",
    }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        kw = {cls._KEYS.get(k, k): v for k, v in d.items()}
        for k in ("signal_levels", "methods"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        inv = {v: k for k, v in self._KEYS.items()}
        return {inv.get(k, k): (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    def full_scale(self) -> "Scenario":
        """Sample size, replicate counts and budgets of the full-size study."""
        return replace(self, n=1000, reps=3000, design_copies=50, ga_budget=10000,
                       search_budget=10000)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CellResult:
    design_copy: int
    method: str
    s: float
    rejections: int
    reps: int
    benchmark: float
    seed_key: tuple
    objective: float = float("nan")
    rank_counts: list | None = None
    status: str = "ok"

    @property
    def rate(self) -> float:
        return self.rejections / self.reps if self.status == "ok" else float("nan")

    @property
    def se(self) -> float:
        r = self.rate
        return float(np.sqrt(r * (1 - r) / self.reps))


@dataclass
class SimReport:
    scenario: Scenario
    cells: list = field(default_factory=list)

    def summary(self) -> list[dict]:
        """Rates pooled over design copies, one row per ``(method, s)``."""
        rows = []
        for method in self.scenario.methods:
            for s in self.scenario.signal_levels:
                cs = [c for c in self.cells if c.method == method and c.s == s]
                ok = [c for c in cs if c.status == "ok"]
                reps = sum(c.reps for c in ok)
                rej = sum(c.rejections for c in ok)
                rate = rej / reps if reps else float("nan")
                se = float(np.sqrt(rate * (1 - rate) / reps)) if reps else float("nan")
                rows.append({
                    "scenario": self.scenario.name, "method": method, "s": s,
                    "rate": rate, "se": se, "reps": reps,
                    "benchmark_mean": float(np.mean([c.benchmark for c in cs])) if cs else float("nan"),
                    "failed_cells": len(cs) - len(ok),
                })
        return rows

    def cell_rows(self) -> list[dict]:
        return [{
            "design_copy": c.design_copy, "method": c.method, "s": c.s,
            "rejections": c.rejections, "reps": c.reps, "rate": c.rate, "se": c.se,
            "benchmark": c.benchmark, "objective": c.objective, "status": c.status,
            "seed_key": "/".join(str(k) for k in c.seed_key),
        } for c in self.cells]

    def rate(self, method: str, s: float, design_copy: int | None = None) -> float:
        if design_copy is not None:
            (c,) = [c for c in self.cells
                    if c.method == method and c.s == s and c.design_copy == design_copy]
            return c.rate
        (row,) = [r for r in self.summary() if r["method"] == method and r["s"] == s]
        return row["rate"]

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "fingerprint": self.scenario.fingerprint(),
            "summary": self.summary(),
            "cells": self.cell_rows(),
        }


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _stream_int(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0])


def cell_errors(sc: Scenario, copy: int, s_index: int):
    """Errors and coefficient draws for one ``(design copy, s)`` cell."""
    rng = _stream(sc.seed, copy, _ROLE_ERRORS, s_index)
    E = gen_errors(sc.error_family, (sc.reps, sc.n), rng)
    Z = alternative_coefficients(sc.r, sc.signal_levels[s_index], sc.reps, rng)
    return E, Z


def cpt_decisions(Y: np.ndarray, etas: np.ndarray, alpha: float):
    """Vectorised rank test for the rows of ``Y`` (already pre-ordered).

    Returns ``(reject, rank0)`` arrays.
    """
    S = Y @ etas.T
    St = center(S)
    tol = 2.0 * tie_tolerance(Y, etas)
    thresh = St[:, 0] - tol
    rank0 = np.sum(St >= thresh[:, None], axis=1)
    return rank0 / etas.shape[0] <= alpha, rank0


def _run_copy(sc: Scenario, copy: int) -> list[CellResult]:
    X = gen_design(sc.design_family, sc.n, sc.p, _stream(sc.seed, copy, _ROLE_DESIGN))
    plan = ShiftPlan(sc.n, sc.m)
    r = sc.r
    M = None
    if r > 1:
        M = np.ones((r, r)) + default_sigma(r)
    cells: list[CellResult] = []
    K = len(sc.signal_levels)

    try:
        beta, _ = calibrate_signal(X, sc.error_family, _stream(sc.seed, copy, _ROLE_CALIBRATION),
                                   r=r, alpha=sc.alpha, target_power=sc.target_power,
                                   reps=sc.calibration_reps)
    except Exception as exc:  # noqa: BLE001 - any failure marks the copy
        log.warning("design copy %d: calibration failed: %s", copy, exc)
        return [CellResult(copy, meth, s, 0, sc.reps, float("nan"), (sc.seed, copy, i),
                           status=f"failed: {exc}")
                for meth in sc.methods for i, s in enumerate(sc.signal_levels)]

    systems = {}
    errors = {}
    for meth in sc.methods:
        if meth == "ttest":
            try:
                systems[meth] = OLSFit.build(X, np.arange(r))
            except Exception as exc:  # noqa: BLE001
                errors[meth] = exc
            continue
        how = {"cpt_ga": "ga", "cpt_search": "search", "cpt_identity": "none"}[meth]
        budget = sc.ga_budget if how == "ga" else sc.search_budget
        cfg = OrderingConfig(population_size=sc.population_size,
                             sample_budget=max(budget, sc.population_size),
                             seed=_stream_int(sc.seed, copy, _ROLE_ORDERING))
        try:
            sol = optimize(X, plan, r, M, method=how, config=cfg)
            systems[meth] = (sol, solve_eta(X[sol.permutation], plan, r, M))
        except Exception as exc:  # noqa: BLE001
            errors[meth] = exc

    for i, s in enumerate(sc.signal_levels):
        E, Z = cell_errors(sc, copy, i)
        Y = (beta * Z) @ X[:, :r].T + E
        key = (sc.seed, copy, i)
        for meth in sc.methods:
            if meth in errors:
                cells.append(CellResult(copy, meth, s, 0, sc.reps, beta, key,
                                        status=f"failed: {errors[meth]}"))
                continue
            if meth == "ttest":
                rej = systems[meth].pvalues(Y) <= sc.alpha
                cells.append(CellResult(copy, meth, s, int(rej.sum()), sc.reps, beta, key))
                continue
            sol, system = systems[meth]
            rej, rank0 = cpt_decisions(Y[:, sol.permutation], system.etas, sc.alpha)
            counts = np.bincount(rank0, minlength=sc.m + 2)[1:].tolist()
            cells.append(CellResult(copy, meth, s, int(rej.sum()), sc.reps, beta, key,
                                    objective=system.objective, rank_counts=counts))
    return cells


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CPT_NUM_THREADS", "1")))
    except ValueError:
        return 1


def run(scenario: Scenario, n_jobs: int | None = None) -> SimReport:
    """Run every design copy; results are ordered by copy index regardless of ``n_jobs``."""
    n_jobs = thread_count() if n_jobs is None else n_jobs
    copies = range(scenario.design_copies)
    if n_jobs > 1 and scenario.design_copies > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(delayed(_run_copy)(scenario, c) for c in copies)
    else:
        parts = [_run_copy(scenario, c) for c in copies]
    report = SimReport(scenario)
    for part in parts:
        report.cells.extend(part)
    return report
