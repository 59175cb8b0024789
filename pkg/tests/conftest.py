"""Shared fixtures: case-study documents, canned sources, scripted gateways."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from autotools.docmodel import ToolDoc, parse_tool_doc
from autotools.llmgateway import Gateway, ScriptedBackend

FIXTURES = Path(__file__).parent / "fixtures"

GOOD_SEARCH_PERSON = '''import requests

def search_person(query: str, page: int = 1, include_adult: bool = False, region: str = None) -> dict:
    """Search for people by name.

    Args:
    - query (str): text to search for.
    - page (int): which result page to return.
    - include_adult (bool): include adult content in results.
    - region (str): ISO 3166-1 code filter.
    """
    url = "https://api.themoviedb.org/3/search/person"
    params = {"query": query, "page": page, "include_adult": include_adult}
    if region:
        params["region"] = region
    response = requests.get(url, params=params)
    if response.status_code != 200:
        return {"error": f"HTTP {response.status_code}"}
    return response.json()'''

BAD_MISSING_REQUIRED = '''import requests

def search_person(page: int = 1) -> dict:
    """Search for people."""
    response = requests.get("https://api.themoviedb.org/3/search/person", params={"page": page})
    return response.json()'''

BAD_UNDEFINED_REF = '''import requests

def search_person(query: str, page: int = 1, include_adult: bool = False, region: str = None) -> dict:
    """Search for people."""
    response = requests.get(api_base + "/search/person", params={"query": query, "page": page})
    return response.json()'''


def fenced(code: str) -> str:
    return f"```python\n{code}\n```"


@pytest.fixture
def tmdb_doc() -> ToolDoc:
    raw = json.loads((FIXTURES / "tmdb" / "GET_search_person.json").read_text())
    return parse_tool_doc(raw)


@pytest.fixture
def credits_doc() -> ToolDoc:
    raw = json.loads((FIXTURES / "tmdb" / "GET_person_movie_credits.json").read_text())
    return parse_tool_doc(raw)


def make_gateway(table: dict, log_path=None) -> Gateway:
    return Gateway(ScriptedBackend(table), log_path=log_path)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"[acceptance] {name}: {outcome}")
