import pytest

_CRITERIA: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip long Monte Carlo runs")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance check, then assert."""

    def check(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    lines = sorted(_CRITERIA, key=lambda s: s.split("  ", 1)[1])
    terminalreporter.section("acceptance checks")
    for line in lines:
        terminalreporter.write_line(line)
    # one line per criterion: it passes only if every one of its checks passed
    verdicts: dict[str, bool] = {}
    for line in lines:
        status, rest = line.split("  ", 1)
        cid = rest.split()[0]
        verdicts[cid] = verdicts.get(cid, True) and status == "PASS"
    terminalreporter.section("acceptance criteria")
    for cid, ok in verdicts.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}")
