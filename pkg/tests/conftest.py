import pytest

from adaptive_fbl import CASE_IDS, run_case, scenario_for_case


@pytest.fixture(scope="session")
def case_runs():
    """All five benchmark cases at default settings, shared across tests."""
    return {cid: run_case(scenario_for_case(cid)) for cid in CASE_IDS}
