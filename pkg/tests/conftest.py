from pathlib import Path

import pytest

from intforge.int_wire import FlowKey

GOLDEN = Path(__file__).parent / "golden"

_acceptance: dict[int, tuple[str, str, float]] = {}


def read_hex(name: str) -> bytes:
    """Hex dump with '#' comments and free whitespace."""
    text = (GOLDEN / name).read_text()
    return bytes.fromhex("".join(line.split("#")[0] for line in text.splitlines()).replace(" ", ""))


@pytest.fixture
def flow():
    return FlowKey(0x0A000001, 0x0A000002, 5000, 80, 17)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _acceptance[number] = (title, rep.outcome, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome, secs = _acceptance[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}  ({secs:.1f}s)")
