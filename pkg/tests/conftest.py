import contextlib

import pytest

# criterion number -> (passed, title and measured values); filled by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


class _Recorder:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record whether the enclosed assertions for one acceptance criterion hold."""
    rec = _Recorder(number, title)
    try:
        yield rec
    except BaseException:
        _store(rec, False)
        raise
    _store(rec, True)


def _store(rec, ok):
    # a criterion spread over several tests passes only if all of its parts do
    prev_ok, prev = CRITERIA.get(rec.number, (True, rec.title))
    notes = "; ".join(rec.notes)
    CRITERIA[rec.number] = (prev_ok and ok, f"{prev}; {notes}" if notes else prev)
    line = f"criterion {rec.number:>2} {'PASS' if ok else 'FAIL'}  {rec.title}"
    print(line + (f"  [{notes}]" if notes else ""))


@pytest.fixture
def record():
    return criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, text = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {text}")
