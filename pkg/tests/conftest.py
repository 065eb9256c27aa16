"""Shared fixtures and event builders for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from jarguard.psl import load_default_rules
from jarguard.trace_model import (
    HttpSetCookie,
    NetworkRequest,
    ScriptCookieDelete,
    ScriptCookieGet,
    ScriptCookieSet,
    ScriptInclusion,
    StackFrame,
    Visit,
    parse_trace,
)

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def rules():
    return load_default_rules()


def data_path(name: str) -> Path:
    return DATA_DIR / name


def load_trace(name: str, rules):
    result = parse_trace(data_path(name).read_text(), rules)
    assert not result.diagnostics, result.diagnostics
    return result.visits


# --- event builders -----------------------------------------------------------

def stack(url: str, line: int = 1, col: int = 1) -> tuple[StackFrame, ...]:
    return (StackFrame(url=url, line=line, col=col),)


def set_cookie(seq: int, cookie: str, script_url: str | None,
               api: str = "document_cookie") -> ScriptCookieSet:
    return ScriptCookieSet(seq=seq, api=api, cookie_string=cookie,
                           stack=stack(script_url) if script_url else ())


def get_jar(seq: int, script_url: str | None, api: str = "document_cookie",
            name: str | None = None) -> ScriptCookieGet:
    return ScriptCookieGet(seq=seq, api=api, name=name,
                           stack=stack(script_url) if script_url else ())


def delete_cookie(seq: int, name: str, script_url: str | None) -> ScriptCookieDelete:
    return ScriptCookieDelete(seq=seq, api="cookie_store", name=name,
                              stack=stack(script_url) if script_url else ())


def http_set(seq: int, response_url: str, value: str, http_only: bool = False,
             initiator_url: str | None = None) -> HttpSetCookie:
    return HttpSetCookie(seq=seq, response_url=response_url, set_cookie_value=value,
                         http_only=http_only, initiator_url=initiator_url)


def request(seq: int, url: str, script_url: str | None,
            readable: tuple[str, ...] | None = None) -> NetworkRequest:
    return NetworkRequest(seq=seq, url=url, readable=readable,
                          stack=stack(script_url) if script_url else ())


def inclusion(seq: int, script_url: str, includer: str = "parser") -> ScriptInclusion:
    return ScriptInclusion(seq=seq, script_url=script_url, includer=includer)


def visit(events, site_url: str = "https://site.com/", site_domain: str = "site.com",
          visit_time: float = 0.0) -> Visit:
    return Visit(site_url=site_url, site_domain=site_domain,
                 events=tuple(events), visit_time=visit_time)


@pytest.fixture(scope="session")
def jar_walk_visit(rules):
    visits = load_trace("jar_walk_scenario.jsonl", rules)
    assert len(visits) == 1
    return visits[0]


def load_json(name: str):
    return json.loads(data_path(name).read_text())
