import json

import pytest

from factored_agents.environment import load_domain
from factored_agents.schema import parse_catalog

EXAMPLE_CATALOG = {
    "domain": "demo",
    "tools": [
        {
            "name": "example_1",
            "description": "Say hello.",
            "parameters": {
                "properties": {"salutation": {"type": "string", "description": "The greeting."}},
                "required": ["salutation"],
            },
        }
    ],
}

PAWS_CATALOG = {
    "domain": "shelter",
    "tools": [
        {
            "name": "paws_shelter",
            "description": "Book an adoption interview at Paws Cat Shelter.",
            "parameters": {
                "properties": {"date": {"type": "string", "description": "Interview date, YYYY-MM-DD."}},
                "required": ["date"],
            },
        }
    ],
}


@pytest.fixture
def example_catalog():
    return parse_catalog(json.dumps(EXAMPLE_CATALOG))


@pytest.fixture
def paws_catalog():
    return parse_catalog(PAWS_CATALOG)


@pytest.fixture(scope="session")
def retail():
    return load_domain("mini-retail")


@pytest.fixture(scope="session")
def airline():
    return load_domain("mini-airline")


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import CRITERIA, RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in CRITERIA:
        if name in RESULTS:
            terminalreporter.write_line(f"{'PASS' if RESULTS[name] else 'FAIL'}  {name}")
