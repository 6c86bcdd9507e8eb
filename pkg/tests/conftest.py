import sys

import numpy as np
import pytest

from drjcc.config import (
    AmbiguitySpec,
    CommunityConfig,
    PriceSchedule,
    ProsumerConfig,
    RiskSpec,
)
from drjcc.scenarios import ProsumerScenarios, ScenarioSet
from drjcc.synthetic import GeneratorSpec, generate_synthetic_community


def make_scenarios(load, pv=None):
    load = np.atleast_2d(np.asarray(load, dtype=float))
    pv = np.zeros_like(load) if pv is None else np.atleast_2d(np.asarray(pv, dtype=float))
    return ProsumerScenarios.from_days(load, pv)


def toy_community(T=3, N=1, neighbors=None, rho=0.0, epsilon=0.05, **pc_kwargs):
    """Small hand-built community with flat prices."""
    ids = [f"n{i}" for i in range(N)]
    neighbors = neighbors or {pid: [m for m in ids if m != pid] for pid in ids}
    prosumers = tuple(
        ProsumerConfig(id=pid, neighbors=tuple(neighbors[pid]), ps_ref=np.zeros(T), **pc_kwargs)
        for pid in ids
    )
    c_nm = {(n, m): np.full(T, 0.08) for n in ids for m in neighbors[n]}
    prices = PriceSchedule(np.full(T, 0.1), np.full(T, 0.2), c_nm)
    return CommunityConfig(prosumers, prices, T, risk=RiskSpec(epsilon), ambiguity=AmbiguitySpec(rho))


@pytest.fixture(scope="session")
def small_instance():
    """Three prosumers, six hours, eight samples."""
    spec = GeneratorSpec(prosumers=3, samples=8, horizon=6, degree=2)
    return generate_synthetic_community(spec, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["make_scenarios", "toy_community", "ScenarioSet"]


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
