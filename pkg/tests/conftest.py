import pytest

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def check(label: str, evaluate) -> None:
        """``evaluate()`` returns ``(ok, detail)``; an exception counts as a failure."""
        try:
            ok, detail = evaluate()
        except Exception as exc:  # noqa: BLE001 - reported, then re-raised via the assert
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
