"""Trace parsing, cookie-string parsing, and canonical serialization."""

import json

import pytest
from hypothesis import given, strategies as st

from jarguard.trace_model import (
    CookieParseError,
    Diagnostic,
    HttpSetCookie,
    NetworkRequest,
    ParsedCookie,
    ScriptCookieDelete,
    ScriptCookieGet,
    ScriptCookieSet,
    ScriptInclusion,
    StackFrame,
    cookie_from_mapping,
    parse_cookie_string,
    parse_trace,
    rewrite_event,
    serialize_visits,
    validate_visit,
)

from conftest import get_jar, set_cookie, visit


# --- cookie strings -------------------------------------------------------------

def test_parse_simple_pair():
    cookie = parse_cookie_string("sid=abc123")
    assert cookie == ParsedCookie(name="sid", value="abc123")


def test_parse_full_attribute_set():
    cookie = parse_cookie_string(
        "_uid=9984; Expires=Thu, 01 Jan 1970 00:00:10 GMT; Max-Age=3600; "
        "Domain=.Site.COM; Path=/shop; Secure; HttpOnly"
    )
    assert cookie.name == "_uid"
    assert cookie.value == "9984"
    assert cookie.expires == 10.0
    assert cookie.max_age == 3600
    assert cookie.domain == "site.com"
    assert cookie.path == "/shop"
    assert cookie.secure and cookie.http_only


def test_attribute_names_case_insensitive():
    cookie = parse_cookie_string("a=1; EXPIRES=Thu, 01-Jan-1970 00:00:00 GMT; max-AGE=5")
    assert cookie.expires == 0.0
    assert cookie.max_age == 5


def test_value_keeps_embedded_equals():
    assert parse_cookie_string("tok=a=b=c").value == "a=b=c"


def test_tracking_value_survives_verbatim():
    cookie = parse_cookie_string("_fbp=fb.0.1746746266109.868308499845957651")
    assert cookie.name == "_fbp"
    assert cookie.value == "fb.0.1746746266109.868308499845957651"


def test_nameless_cookie_rejected():
    for raw in ("", "=value", "   =x", "; path=/", "noequals"):
        with pytest.raises(CookieParseError):
            parse_cookie_string(raw)


def test_unknown_attribute_diagnostic():
    diagnostics = []
    cookie = parse_cookie_string("a=1; samesite=lax; priority=high", diagnostics)
    assert cookie.value == "1"
    assert [d.reason for d in diagnostics] == ["unknown-cookie-attribute"] * 2


def test_bad_attribute_values_degrade():
    diagnostics = []
    cookie = parse_cookie_string("a=1; expires=whenever; max-age=soon; domain=.", diagnostics)
    assert cookie.expires is None and cookie.max_age is None and cookie.domain is None
    assert len(diagnostics) == 3


def test_max_age_beats_expires():
    cookie = parse_cookie_string("a=1; expires=Thu, 01 Jan 1970 00:00:00 GMT; max-age=100")
    assert cookie.effective_expiry(base_time=50.0) == 150.0
    assert not cookie.is_deletion(now=1000.0)


@pytest.mark.parametrize(
    "raw,now,expected",
    [
        ("a=1; max-age=0", 0.0, True),
        ("a=1; max-age=-5", 0.0, True),
        ("a=1; max-age=10", 0.0, False),
        ("a=1; expires=Thu, 01 Jan 1970 00:00:00 GMT", 0.0, True),
        ("a=1; expires=Fri, 01 Jan 2120 00:00:00 GMT", 0.0, False),
        ("a=1", 0.0, False),
    ],
)
def test_deletion_shapes(raw, now, expected):
    assert parse_cookie_string(raw).is_deletion(now) is expected


def test_cookie_from_mapping():
    cookie = cookie_from_mapping({"name": "sid", "value": "1", "max_age": 60, "domain": ".A.com"})
    assert cookie == ParsedCookie(name="sid", value="1", max_age=60, domain="a.com")
    with pytest.raises(CookieParseError):
        cookie_from_mapping({"value": "no-name"})


@given(st.text(max_size=80))
def test_cookie_parser_is_total(raw):
    try:
        cookie = parse_cookie_string(raw)
    except CookieParseError:
        return
    assert cookie.name


# --- trace parsing --------------------------------------------------------------

def lines(*records) -> str:
    return "\n".join(json.dumps(r) for r in records)


HEADER = {"type": "visit", "site_url": "https://www.shop.com/", "trace_version": "1"}


def test_parse_all_event_types(rules):
    text = lines(
        dict(HEADER, visit_time=1700000000.0),
        {"type": "script_inclusion", "seq": 1, "script_url": "https://t.com/a.js",
         "includer": "parser"},
        {"type": "http_set_cookie", "seq": 2, "response_url": "https://www.shop.com/",
         "set_cookie_value": "srv=1; HttpOnly", "http_only": True},
        {"type": "script_cookie_set", "seq": 3, "api": "document_cookie",
         "cookie_string": "sid=22223333; path=/",
         "stack": [{"url": "https://t.com/a.js", "line": 4, "col": 2}]},
        {"type": "script_cookie_get", "seq": 5, "api": "cookie_store", "name": "sid",
         "stack": [{"url": "https://t.com/a.js", "line": 9, "col": 1}]},
        {"type": "script_cookie_delete", "seq": 6, "api": "cookie_store", "name": "sid",
         "stack": [{"url": "https://t.com/a.js", "line": 9, "col": 1}]},
        {"type": "network_request", "seq": 9, "url": "https://t.com/px?x=1",
         "method": "POST", "stack": []},
    )
    result = parse_trace(text, rules)
    assert result.diagnostics == ()
    (v,) = result.visits
    assert v.site_domain == "shop.com"
    assert v.visit_time == 1700000000.0
    assert [e.type for e in v.events] == [
        "script_inclusion", "http_set_cookie", "script_cookie_set",
        "script_cookie_get", "script_cookie_delete", "network_request",
    ]
    http = v.events[1]
    assert http.http_only and http.cookie.name == "srv"
    s = v.events[2]
    assert s.cookie.value == "22223333"
    assert s.stack == (StackFrame("https://t.com/a.js", 4, 2),)
    assert v.events[3].name == "sid"
    assert v.events[5].method == "POST"


def test_structured_cookie_payload(rules):
    text = lines(
        HEADER,
        {"type": "script_cookie_set", "seq": 1, "api": "cookie_store",
         "cookie_string": {"name": "sid", "value": "9", "max_age": 3},
         "stack": []},
    )
    result = parse_trace(text, rules)
    assert result.diagnostics == ()
    assert result.visits[0].events[0].cookie == ParsedCookie(name="sid", value="9", max_age=3)


def test_multiple_visits_split_on_headers(rules):
    text = lines(
        HEADER,
        {"type": "script_cookie_get", "seq": 1, "api": "document_cookie", "stack": []},
        {"type": "visit", "site_url": "https://other.org/"},
        {"type": "script_cookie_get", "seq": 1, "api": "document_cookie", "stack": []},
    )
    result = parse_trace(text, rules)
    assert [str(v.site_domain) for v in result.visits] == ["shop.com", "other.org"]
    assert all(len(v.events) == 1 for v in result.visits)


@pytest.mark.parametrize(
    "record,reason",
    [
        ("{broken", "json-error"),
        ('"just a string"', "bad-record"),
        ('[1,2]', "bad-record"),
        (json.dumps({"type": "mystery", "seq": 1}), "unknown-type"),
        (json.dumps({"type": "script_cookie_get", "api": "document_cookie"}), "missing-field"),
        (json.dumps({"type": "script_cookie_get", "seq": 1, "api": "fetch"}), "bad-field"),
        (json.dumps({"type": "script_cookie_set", "seq": 1, "api": "document_cookie",
                     "cookie_string": "=bad"}), "cookie-parse-error"),
        (json.dumps({"type": "network_request", "seq": 2, "url": "https://x.com/",
                     "stack": "no"}), "bad-record"),
    ],
)
def test_bad_event_records_become_diagnostics(rules, record, reason):
    text = json.dumps(HEADER) + "\n" + record + "\n"
    result = parse_trace(text, rules)
    assert len(result.diagnostics) == 1
    diag = result.diagnostics[0]
    assert diag.reason == reason
    assert diag.line_no == 2
    assert result.visits[0].events == ()


def test_orphan_event_and_bad_header(rules):
    text = lines(
        {"type": "script_cookie_get", "seq": 1, "api": "document_cookie", "stack": []},
        {"type": "visit", "site_url": "not a url"},
        {"type": "script_cookie_get", "seq": 1, "api": "document_cookie", "stack": []},
    )
    result = parse_trace(text, rules)
    assert result.visits == ()
    reasons = [d.reason for d in result.diagnostics]
    assert reasons == ["orphan-event", "bad-field", "orphan-event"]


def test_non_increasing_seq_skipped(rules):
    text = lines(
        HEADER,
        {"type": "script_cookie_get", "seq": 5, "api": "document_cookie", "stack": []},
        {"type": "script_cookie_get", "seq": 5, "api": "document_cookie", "stack": []},
        {"type": "script_cookie_get", "seq": 4, "api": "document_cookie", "stack": []},
        {"type": "script_cookie_get", "seq": 6, "api": "document_cookie", "stack": []},
    )
    result = parse_trace(text, rules)
    assert [e.seq for e in result.visits[0].events] == [5, 6]
    assert len(result.diagnostics) == 2


def test_line_accounting_invariant(rules):
    text = (
        json.dumps(HEADER) + "\n\n"
        + '{"type": "script_cookie_get", "seq": 1, "api": "document_cookie", "stack": []}\n'
        + "garbage line\n"
        + "   \n"
        + json.dumps({"type": "visit", "site_url": "https://two.net/"}) + "\n"
    )
    result = parse_trace(text, rules)
    non_blank = sum(1 for line in text.splitlines() if line.strip())
    events = sum(len(v.events) for v in result.visits)
    assert result.record_count == non_blank
    assert len(result.visits) + events + len(result.diagnostics) == non_blank


def test_parse_accepts_bytes_and_file_objects(rules, tmp_path):
    text = lines(HEADER)
    assert parse_trace(text.encode(), rules).visits == parse_trace(text, rules).visits
    path = tmp_path / "t.jsonl"
    path.write_text(text)
    with path.open() as handle:
        assert parse_trace(handle, rules).visits == parse_trace(text, rules).visits


# --- serialization --------------------------------------------------------------

def comprehensive_visit(rules):
    text = lines(
        dict(HEADER, visit_time=5.0),
        {"type": "script_inclusion", "seq": 1, "script_url": "https://t.com/a.js",
         "includer": "inline"},
        {"type": "script_cookie_set", "seq": 2, "api": "document_cookie",
         "cookie_string": "sid=1; max-age=60",
         "stack": [{"url": "https://t.com/a.js", "line": 1, "col": 1}]},
        {"type": "script_cookie_get", "seq": 3, "api": "cookie_store",
         "name": "sid", "names": ["sid"], "stack": []},
        {"type": "script_cookie_delete", "seq": 4, "api": "cookie_store",
         "name": "sid", "stack": []},
        {"type": "http_set_cookie", "seq": 5, "response_url": "https://cdn.t.com/r",
         "set_cookie_value": "x=2", "initiator_url": "https://www.shop.com/"},
        {"type": "network_request", "seq": 6, "url": "https://t.com/px",
         "readable": ["sid"], "stack": []},
    )
    result = parse_trace(text, rules)
    assert result.diagnostics == ()
    return result.visits


def test_round_trip_preserves_visits(rules):
    visits = comprehensive_visit(rules)
    text = serialize_visits(visits)
    again = parse_trace(text, rules)
    assert again.diagnostics == ()
    assert again.visits == visits
    assert serialize_visits(again.visits) == text


def test_serialization_is_canonical(rules):
    text = serialize_visits(comprehensive_visit(rules))
    assert text.endswith("\n")
    for line in text.strip().splitlines():
        record = json.loads(line)
        assert list(record) == sorted(record)
        assert json.dumps(record, sort_keys=True, separators=(",", ":")) == line


def test_default_fields_omitted(rules):
    visits = comprehensive_visit(rules)
    records = [json.loads(line) for line in serialize_visits(visits).splitlines()]
    by_type = {r["type"]: r for r in records}
    assert "method" not in by_type["network_request"]
    assert "http_only" not in by_type["http_set_cookie"]
    assert by_type["http_set_cookie"]["initiator_url"] == "https://www.shop.com/"
    assert by_type["script_cookie_get"]["names"] == ["sid"]
    assert by_type["network_request"]["readable"] == ["sid"]


def test_serialize_empty_is_empty_string():
    assert serialize_visits([]) == ""


def test_rewrite_event_replaces_fields():
    event = get_jar(3, "https://t.com/a.js")
    renamed = rewrite_event(event, names=("a", "b"))
    assert renamed.names == ("a", "b")
    assert renamed.seq == event.seq
    assert event.names is None


# --- validation -----------------------------------------------------------------

def test_validate_clean_visit():
    v = visit([set_cookie(1, "a=1", "https://t.com/a.js"), get_jar(2, None)])
    assert validate_visit(v) == []


def test_validate_flags_problems():
    from jarguard.trace_model import Visit

    bad = Visit(
        site_url="",
        site_domain="",
        events=(get_jar(2, None), get_jar(2, None)),
        trace_version="0",
    )
    text = "\n".join(validate_visit(bad))
    assert "trace_version" in text
    assert "site_url" in text
    assert "seq" in text


# --- fuzzing --------------------------------------------------------------------

record_strategy = st.one_of(
    st.text(max_size=30),
    st.dictionaries(
        st.sampled_from(["type", "seq", "api", "cookie_string", "stack", "url",
                         "name", "site_url", "response_url", "set_cookie_value"]),
        st.one_of(st.none(), st.booleans(), st.integers(), st.text(max_size=15),
                  st.lists(st.text(max_size=5), max_size=2)),
        max_size=6,
    ).map(json.dumps),
)


@given(st.lists(record_strategy, max_size=12))
def test_parse_trace_is_total(rules, raw_lines):
    text = "\n".join(raw_lines)
    result = parse_trace(text, rules)
    events = sum(len(v.events) for v in result.visits)
    assert len(result.visits) + events + len(result.diagnostics) == result.record_count
    for diag in result.diagnostics:
        assert isinstance(diag, Diagnostic)
