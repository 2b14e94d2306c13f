import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).parent))

LISTING = ROOT / "listings" / "ptr_param.asm"
CORPUS = ROOT / "corpus"


@pytest.fixture(scope="session")
def listing_text():
    return LISTING.read_text()


@pytest.fixture(scope="session")
def listing_prep(listing_text):
    from uninit_stack import lift_x86_mini, prepare
    return prepare(lift_x86_mini(listing_text))


# -- acceptance summary --------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[label] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA):
        terminalreporter.write_line(f"{_CRITERIA[label]}  {label}")
