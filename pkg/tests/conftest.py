import functools

import pytest

from earm.amr import AmrConfig, adapt_loop

# criterion number -> list of (ok, detail) from the acceptance tests
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}

THETA = {"kellogg": 0.3, "lshape": 0.2}


@functools.lru_cache(maxsize=None)
def amr_run(problem: str, k: int, discretization: str = "cg"):
    """One AMR run per benchmark setting, shared by every acceptance test."""
    s = k - 1 if discretization == "cg" else k
    cfg = AmrConfig(problem=problem, degree=k, theta=THETA[problem], tol=0.01, max_cells=200_000,
                    discretization=discretization, recovery_degree=s, timing=False,
                    max_iters=200 if discretization == "cg" else 12)
    return adapt_loop(cfg)


@pytest.fixture
def record():
    def add(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        items = ACCEPTANCE[c]
        ok = all(o for o, _ in items)
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}")
        for o, d in items:
            terminalreporter.write_line(f"    [{'ok' if o else 'FAIL'}] {d}")
