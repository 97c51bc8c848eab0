import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def null_space_oracle(B: np.ndarray) -> float:
    """max b1.eta s.t. B[:, 1:].T eta = 0, ||eta|| = 1, via a full orthogonal decomposition."""
    A = B[:, 1:]
    if A.shape[1] == 0:
        return float(np.linalg.norm(B[:, 0]))
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * s[0]))
    N = U[:, rank:]
    return float(np.linalg.norm(N.T @ B[:, 0]))


def power_iteration(A: np.ndarray, iters: int = 20000, tol: float = 1e-15) -> float:
    v = np.ones(A.shape[0]) / np.sqrt(A.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    return lam


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
