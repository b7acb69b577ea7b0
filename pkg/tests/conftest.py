from __future__ import annotations

import json
import sys

import pytest

from mbelens.bundled import read_fixture
from mbelens.modelformat import parse_model_document

import fixture_models


@pytest.fixture(scope="session")
def ccs_mini():
    return fixture_models.ccs_mini()


@pytest.fixture(scope="session")
def ccs_reduced():
    return fixture_models.ccs_mini_reduced()


@pytest.fixture(scope="session")
def demo():
    return fixture_models.demo_vehicle()


@pytest.fixture(scope="session")
def rules_text() -> str:
    return read_fixture("rules.ocl").decode("utf-8")


@pytest.fixture(scope="session")
def fixture_json():
    def load(name: str) -> dict:
        return json.loads(read_fixture(name))
    return load


@pytest.fixture(scope="session")
def parsed():
    def load(name: str):
        return parse_model_document(read_fixture(name)).payload
    return load


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
