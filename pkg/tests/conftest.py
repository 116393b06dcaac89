import pytest

from pairsim.model import CoincidenceWindow, DetectorParams, SourceParams

ETA_S = 9.17e-4
ETA_I = 4.0e-3


@pytest.fixture
def window():
    return CoincidenceWindow(60.0)


@pytest.fixture
def nominal_detectors():
    """Fitted overall efficiencies, 100 Hz dark counts, 65 ps jitter, no dead time."""
    return (
        DetectorParams(ETA_S, 100.0, 65.0, 0),
        DetectorParams(ETA_I, 100.0, 65.0, 0),
    )


@pytest.fixture
def high_pump():
    return SourceParams(mu=0.12, rep_rate_hz=1e10)


# one verdict line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}
ACCEPTANCE_IDS = ("1", "2", "3", "4a", "4b", "5", "6", "7", "8", "9")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in ACCEPTANCE_IDS:
        if cid in ACCEPTANCE:
            terminalreporter.write_line(ACCEPTANCE[cid])
