import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def central_diff(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. ``arr`` (modified in place, then restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation relative to the largest numeric gradient entry."""
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    def _report(criterion: str, passed: bool | None, detail: str = "") -> None:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[passed]
        ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
