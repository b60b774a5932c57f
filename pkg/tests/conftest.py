import pytest

from cnnslstm.data import SyntheticConfig, generate_synthetic, split_chronological
from cnnslstm.pipeline import prepare


@pytest.fixture(scope="session")
def three_years():
    """A small synthetic record split one year each into train/val/test."""
    table = generate_synthetic(SyntheticConfig(years=3, seed=1))
    splits = split_chronological(table, "2007", "2008", "2009")
    return table, splits, prepare(table, splits)


# one summary line per acceptance criterion, filled in by test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
