import functools

import pytest

CRITERIA = {}


def criterion(number, title):
    """Record the outcome of an acceptance test under its criterion number."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                CRITERIA[number] = (title, False)
                print(f"criterion {number}: FAIL  {title}")
                raise
            CRITERIA[number] = (title, True)
            print(f"criterion {number}: PASS  {title}")
        return run

    return wrap


@pytest.fixture(scope="session")
def criteria():
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
