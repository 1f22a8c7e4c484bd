import pytest

from pumpgrad.ingest import build_trajectories
from pumpgrad.synth import SynthConfig, generate_market


@pytest.fixture(scope="session")
def small_market():
    cfg = SynthConfig(n_tokens=500, seed=11, target_grad_rate=0.15, n_wallets=400,
                      n_creators=60)
    events = generate_market(cfg)
    return cfg, events, build_trajectories(events)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
