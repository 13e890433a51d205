from dataclasses import replace

import pytest

from lobsim.model import SizeDist

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def with_sizes(model, **sizes):
    """Swap the size law of the named event kinds (cancel/place/noise) on both sides."""
    def side(sf):
        return replace(sf, **{k: replace(getattr(sf, k), size=v) for k, v in sizes.items()})

    return replace(model, flow=replace(model.flow, bid=side(model.flow.bid), ask=side(model.flow.ask)))


ZERO = SizeDist("zero", {})


@pytest.fixture
def record():
    """Store an acceptance outcome so the terminal summary can print it."""
    def _record(k: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {k:2d}  {detail}")
