import functools

import pytest
from hypothesis import settings

from mdtguard.adversary import AttackSpec, inject_malicious
from mdtguard.scenario import ScenarioConfig, ScenarioState, generate_reports

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def scenario(outage=(0, 1), n_reports=2500, seed=0, strategy="mimic_outage_distribution", fraction=0.01):
    """Cached (state, attacked dataset) pairs shared across test modules."""
    cfg = ScenarioConfig(n_reports=n_reports, outage_cells=outage, rng_seed=seed, malicious_fraction=fraction)
    state = ScenarioState(cfg)
    ds = generate_reports(cfg, state)
    if fraction > 0:
        ds = inject_malicious(ds, AttackSpec(strategy=strategy, malicious_fraction=fraction, seed=seed))
    return state, ds


@pytest.fixture
def small_scenario():
    return scenario()


ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
