import warnings

from hypothesis import settings

settings.register_profile("default", derandomize=True, deadline=None)
settings.load_profile("default")

_REPORTED: dict[int, str] = {}


def report(criterion: int, passed: bool, detail: str) -> None:
    """One pass/fail line per acceptance criterion, echoed again in the run summary."""
    warnings.simplefilter("default")
    line = f"CRITERION {criterion:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
    _REPORTED[criterion] = line
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if not _REPORTED:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_REPORTED):
        terminalreporter.write_line(_REPORTED[criterion])
