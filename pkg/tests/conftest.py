import pytest

from cake.experiment import run_synthetic_experiment

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    """The three-variant, three-seed synthetic experiment (trained once per session)."""
    return run_synthetic_experiment(tmp_path_factory.mktemp("synthetic"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
