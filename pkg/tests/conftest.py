import json
import os

import pytest
from hypothesis import HealthCheck, settings

from jumpldp.network import parse_model

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.register_profile("thorough", parent=settings.get_profile("default"), max_examples=500, derandomize=False)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def ma(i, o, k=1.0):
    return {"in": i, "out": o, "rate": {"type": "mass_action", "k": k}}


def ex(i, o, formula):
    return {"in": i, "out": o, "rate": {"type": "expr", "formula": formula}}


def make(species, reactions, name="m"):
    return parse_model(json.dumps({"name": name, "species": species, "reactions": reactions}))


@pytest.fixture
def birth():
    return make(["A"], [ma({"A": 1}, {"A": 2})], "birth")


@pytest.fixture
def dimer():
    return make(["A", "B"], [ma({"A": 2}, {"B": 1})], "dimer")


@pytest.fixture
def iso():
    return make(["A", "B"], [ma({"A": 1}, {"B": 1}), ma({"B": 1}, {"A": 1})], "iso")


# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
