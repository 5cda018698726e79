from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from telesample.profile import build_profile
from telesample.synth import FaultSpec, Scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_scenario(faults=(), seed: int = 11, **kw) -> Scenario:
    params = dict(request_rate=5.0, fault_free_duration=1200.0, production_duration=300.0)
    params.update(kw)
    return Scenario(name="small", faults=list(faults), seed=seed, **params)


@pytest.fixture(scope="session")
def error_case():
    """Small generated run with an ErrorReturn fault on payment for 120-240 s."""
    sc = small_scenario([FaultSpec("ErrorReturn", "payment", 120.0, 240.0, 0.5)])
    ff, prod, truth = sc.generate()
    return ff, prod, truth, build_profile(ff)


@pytest.fixture(scope="session")
def latency_case():
    sc = small_scenario([FaultSpec("LatencyInjection", "checkout", 60.0, 240.0, 10.0)], seed=5)
    ff, prod, truth = sc.generate()
    return ff, prod, truth, build_profile(ff)


@pytest.fixture(scope="session")
def quiet_case():
    sc = small_scenario(seed=2)
    ff, prod, truth = sc.generate()
    return ff, prod, truth, build_profile(ff)
