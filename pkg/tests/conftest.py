import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for an acceptance criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(number, label, ok, detail=""):
        line = f"criterion {number:<4} {'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _VERDICTS.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
