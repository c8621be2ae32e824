import time

import pytest

_GATES = {}


class Gate:
    """Collects the verdict of one acceptance criterion."""

    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.checks = []
        self.start = time.perf_counter()

    def check(self, ok, text):
        self.checks.append((bool(ok), text))
        return bool(ok)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        if self.limit_s is not None:
            self.check(elapsed < self.limit_s, f"runtime {elapsed:.2f} s < {self.limit_s:g} s")
        _GATES[self.number] = self
        failed = [t for ok, t in self.checks if not ok]
        assert not failed, "; ".join(failed)

    @property
    def passed(self):
        return all(ok for ok, _ in self.checks)


@pytest.fixture
def gate():
    def make(number, title, limit_s=None):
        return Gate(number, title, limit_s)
    return make


def pytest_terminal_summary(terminalreporter):
    if not _GATES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_GATES):
        g = _GATES[number]
        verdict = "PASS" if g.passed else "FAIL"
        detail = "; ".join(("" if ok else "NOT ") + t for ok, t in g.checks)
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {g.title}: {detail}")
