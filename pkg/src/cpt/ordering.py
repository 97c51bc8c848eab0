"""Row pre-ordering: search over permutations ``perm`` maximising ``O*(X[perm])``.

Two searchers share one budget convention: ``sample_budget`` counts distinct
objective evaluations. The GA caches objectives by permutation, and cache
hits are free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .construction import ShiftPlan, objective


@dataclass(frozen=True)
class OrderingConfig:
    population_size: int = 10
    sample_budget: int = 1000
    crossover_rate: float = 0.8
    mutation_rate: float = 1.0
    seed: int = 0
    elitism: int = 1

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.sample_budget < 1:
            raise ValueError("sample_budget must be >= 1")
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        if not 1 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [1, population_size)")


@dataclass(frozen=True)
class OrderingSolution:
    """Best permutation found; ``trace`` rows are ``(evaluations, best_objective)``."""

    permutation: np.ndarray
    objective: float
    trace: np.ndarray
    method: str
    evaluations: int = field(default=0)

    def write_trace(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["evaluations", "best_objective"])
            for ev, best in self.trace:
                w.writerow([int(ev), repr(float(best))])
        return path


def evaluate(X: np.ndarray, perm: np.ndarray, plan: ShiftPlan, r: int = 1, M=None) -> float:
    """``O*`` of the row-permuted design ``X[perm]``."""
    perm = np.asarray(perm)
    if perm.shape != (X.shape[0],) or not _is_bijection(perm):
        raise ValueError("perm must be a permutation of range(n)")
    return objective(X[perm], plan, r, M)


def _is_bijection(perm: np.ndarray) -> bool:
    n = perm.shape[0]
    seen = np.zeros(n, dtype=bool)
    if perm.min(initial=0) < 0 or perm.max(initial=-1) >= n:
        return False
    seen[perm] = True
    return bool(seen.all())


def identity_ordering(X, plan, r=1, M=None) -> OrderingSolution:
    n = X.shape[0]
    perm = np.arange(n)
    obj = evaluate(X, perm, plan, r, M)
    return OrderingSolution(perm, obj, np.array([[1.0, obj]]), "identity", 1)


def stochastic_search(X, plan: ShiftPlan, r: int = 1, M=None,
                      config: OrderingConfig = OrderingConfig()) -> OrderingSolution:
    """Best of ``sample_budget`` uniform permutations, the identity being the first."""
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    best_perm = np.arange(n)
    best = evaluate(X, best_perm, plan, r, M)
    trace = [(1, best)]
    for k in range(2, config.sample_budget + 1):
        perm = rng.permutation(n)
        val = objective(X[perm], plan, r, M)
        if val > best:
            best, best_perm = val, perm
        trace.append((k, best))
    return OrderingSolution(best_perm, best, np.array(trace, dtype=float),
                            "search", config.sample_budget)


def order_crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """OX1: copy a random slice of ``a``; fill the rest in ``b``'s cyclic order."""
    n = a.shape[0]
    i, j = sorted(rng.choice(n + 1, size=2, replace=False))
    child = np.empty(n, dtype=a.dtype)
    child[i:j] = a[i:j]
    taken = np.zeros(n, dtype=bool)
    taken[a[i:j]] = True
    rolled = np.roll(b, -j)
    fill = rolled[~taken[rolled]]
    slots = np.r_[np.arange(j, n), np.arange(0, i)]
    child[slots] = fill
    return child


def swap_mutation(perm: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = perm.copy()
    i, j = rng.choice(perm.shape[0], size=2, replace=False)
    out[i], out[j] = out[j], out[i]
    return out


def ga_optimize(X, plan: ShiftPlan, r: int = 1, M=None,
                config: OrderingConfig = OrderingConfig(),
                max_stall: int = 1000) -> OrderingSolution:
    """Genetic search over row permutations.

    The initial population is the identity plus uniform permutations. Each
    generation keeps the ``elitism`` best, then fills the population with
    offspring: two size-2 tournaments pick parents, OX1 crossover applies
    with probability ``crossover_rate`` and a random transposition with
    probability ``mutation_rate``. A trace row is recorded per generation.
    """
    n = X.shape[0]
    P = config.population_size
    rng = np.random.default_rng(config.seed)
    cache: dict[bytes, float] = {}
    evals = 0

    def fitness(perm):
        nonlocal evals
        key = perm.tobytes()
        if key in cache:
            return cache[key]
        if evals >= config.sample_budget:
            return None
        val = objective(X[perm], plan, r, M)
        cache[key] = val
        evals += 1
        return val

    pop, fit = [], []
    for k in range(P):
        perm = np.arange(n) if k == 0 else rng.permutation(n)
        val = fitness(perm)
        if val is None:
            break
        pop.append(perm)
        fit.append(val)
    best_i = int(np.argmax(fit))
    best_perm, best = pop[best_i], fit[best_i]
    trace = [(evals, best)]

    stall = 0
    while evals < config.sample_budget and stall < max_stall:
        before = evals
        order = np.argsort(-np.asarray(fit), kind="stable")
        new_pop = [pop[i] for i in order[: config.elitism]]
        new_fit = [fit[i] for i in order[: config.elitism]]

        def tournament():
            i, j = rng.integers(len(pop), size=2)
            return pop[i] if fit[i] >= fit[j] else pop[j]

        while len(new_pop) < P and evals < config.sample_budget:
            a, b = tournament(), tournament()
            child = order_crossover(a, b, rng) if rng.random() < config.crossover_rate else a.copy()
            if rng.random() < config.mutation_rate:
                child = swap_mutation(child, rng)
            if not _is_bijection(child):
                raise RuntimeError("GA produced an invalid permutation")
            val = fitness(child)
            if val is None:
                break
            new_pop.append(child)
            new_fit.append(val)
        pop, fit = new_pop, new_fit
        i = int(np.argmax(fit))
        if fit[i] > best:
            best, best_perm = fit[i], pop[i]
        stall = stall + 1 if evals == before else 0
        if evals > before:
            trace.append((evals, best))

    return OrderingSolution(np.asarray(best_perm), float(best),
                            np.array(trace, dtype=float), "ga", evals)


def optimize(X, plan: ShiftPlan, r: int = 1, M=None, method: str = "ga",
             config: OrderingConfig = OrderingConfig()) -> OrderingSolution:
    method = method.lower()
    if method == "ga":
        return ga_optimize(X, plan, r, M, config)
    if method in ("search", "stochastic"):
        return stochastic_search(X, plan, r, M, config)
    if method in ("none", "identity"):
        return identity_ordering(X, plan, r, M)
    raise ValueError(f"unknown ordering method {method!r}")
