from __future__ import annotations

import pytest

_LINES: list[str] = []


class CriterionLog:
    """Collects one verdict line per acceptance criterion."""

    def record(self, number: int, name: str, checks: list[tuple[str, float, float, bool]]) -> bool:
        ok = all(c[3] for c in checks)
        parts = [f"{label} {worst:.3e} {'<=' if good else '>'} {tol:.1e}" for label, worst, tol, good in checks]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: " + "; ".join(parts)
        _LINES.append(line)
        print(line)
        return ok


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
