import pytest

from hybridformation.partition import PartitionSpec

# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def spec91():
    return PartitionSpec(50.0, 15, 20, 10)


@pytest.fixture(scope="session")
def spec333():
    return PartitionSpec(50.0, 3, 3, 3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
