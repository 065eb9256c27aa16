"""Trace event model: browser-visit records and cookie-string parsing.

A trace is line-delimited JSON.  Each line is one record with a ``type``
discriminator; a ``visit`` record opens a visit and the event records that
follow belong to it until the next header:

* ``visit``: site_url, trace_version, optional visit_time (epoch seconds,
  the reference clock for expiry-based deletion checks; defaults to 0.0).
* ``script_cookie_set``: seq, api, cookie_string, stack.
* ``script_cookie_get``: seq, api, stack, optional name (single-name reads),
  optional names (what a guarded read actually saw; replay output only).
* ``script_cookie_delete``: seq, api, name, stack.
* ``http_set_cookie``: seq, response_url, set_cookie_value, optional
  http_only, optional initiator_url.
* ``network_request``: seq, url, optional method, stack, optional readable
  (names the requesting script could read under guard; replay output only).
* ``script_inclusion``: seq, script_url, includer (``parser``, ``inline``,
  or the loading script's URL).

Parsing is total: malformed lines and records are skipped and reported as
diagnostics, never raised.  Every non-blank input line is accounted for as a
visit header, an accepted event, or a diagnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from datetime import timezone
from email.utils import parsedate_to_datetime
from typing import IO, Iterable, Mapping, Union

from .psl import NoRegistrableDomain, SuffixRules, url_registrable_domain

SUPPORTED_TRACE_VERSION = "1"
SCRIPT_APIS = ("document_cookie", "cookie_store")


class CookieParseError(ValueError):
    """The cookie string has no usable name=value pair."""


@dataclass(frozen=True)
class Diagnostic:
    """One skipped record or degraded field, tied to its input line."""

    reason: str
    detail: str = ""
    line_no: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line_no}: " if self.line_no is not None else ""
        tail = f" ({self.detail})" if self.detail else ""
        return f"{where}{self.reason}{tail}"


@dataclass(frozen=True)
class ParsedCookie:
    """A cookie definition: name=value plus the attributes this engine models.

    ``domain`` is lowercased with any leading dot removed; ``path`` keeps its
    case.  ``expires`` is epoch seconds.
    """

    name: str
    value: str = ""
    expires: float | None = None
    max_age: int | None = None
    domain: str | None = None
    path: str | None = None
    secure: bool = False
    http_only: bool = False

    def effective_expiry(self, base_time: float = 0.0) -> float | None:
        """Expiry instant, with Max-Age taking precedence over Expires."""
        if self.max_age is not None:
            return base_time + self.max_age
        return self.expires

    def is_deletion(self, now: float = 0.0) -> bool:
        """True when storing this cookie removes it (already-expired shape)."""
        if self.max_age is not None:
            return self.max_age <= 0
        return self.expires is not None and self.expires <= now


def _parse_cookie_date(text: str) -> float | None:
    for candidate in (text, text.replace("-", " ")):
        try:
            dt = parsedate_to_datetime(candidate)
        except (TypeError, ValueError, IndexError):
            continue
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    return None


def parse_cookie_string(raw: str, diagnostics: list[Diagnostic] | None = None) -> ParsedCookie:
    """Parse a ``document.cookie`` / ``Set-Cookie`` style string.

    Attribute names are case-insensitive; unknown attributes and unparseable
    attribute values degrade to diagnostics (when a sink is given) rather than
    errors.  Only a missing or empty cookie name raises
    :class:`CookieParseError`.
    """

    def note(reason: str, detail: str) -> None:
        if diagnostics is not None:
            diagnostics.append(Diagnostic(reason, detail))

    if not isinstance(raw, str):
        raise CookieParseError(f"cookie string must be str, got {type(raw).__name__}")
    first, _, rest = raw.partition(";")
    name, eq, value = first.partition("=")
    name = name.strip()
    if not eq or not name:
        raise CookieParseError(f"missing cookie name in {raw!r}")

    expires: float | None = None
    max_age: int | None = None
    domain: str | None = None
    path: str | None = None
    secure = False
    http_only = False
    for part in rest.split(";") if rest else ():
        if not part.strip():
            continue
        key, _, val = part.partition("=")
        key = key.strip().lower()
        val = val.strip()
        if key == "expires":
            parsed = _parse_cookie_date(val)
            if parsed is None:
                note("bad-cookie-attribute", f"unparseable expires {val!r}")
            else:
                expires = parsed
        elif key == "max-age":
            try:
                max_age = int(val)
            except ValueError:
                note("bad-cookie-attribute", f"unparseable max-age {val!r}")
        elif key == "domain":
            cleaned = val.lstrip(".").lower()
            if cleaned:
                domain = cleaned
            else:
                note("bad-cookie-attribute", "empty domain attribute")
        elif key == "path":
            path = val
        elif key == "secure":
            secure = True
        elif key == "httponly":
            http_only = True
        else:
            note("unknown-cookie-attribute", key or part.strip())
    return ParsedCookie(
        name=name,
        value=value.strip(),
        expires=expires,
        max_age=max_age,
        domain=domain,
        path=path,
        secure=secure,
        http_only=http_only,
    )


def cookie_from_mapping(data: Mapping[str, object], diagnostics: list[Diagnostic] | None = None) -> ParsedCookie:
    """Build a :class:`ParsedCookie` from the structured cookie payload form."""
    if not isinstance(data, Mapping):
        raise CookieParseError(f"structured cookie must be a mapping, got {type(data).__name__}")
    name = data.get("name")
    if not isinstance(name, str) or not name.strip():
        raise CookieParseError(f"missing cookie name in {data!r}")
    known = {f.name for f in fields(ParsedCookie)}
    if diagnostics is not None:
        for key in data:
            if key not in known:
                diagnostics.append(Diagnostic("unknown-cookie-attribute", str(key)))
    expires = data.get("expires")
    if isinstance(expires, str):
        expires = _parse_cookie_date(expires)
    max_age = data.get("max_age")
    domain = data.get("domain")
    return ParsedCookie(
        name=name.strip(),
        value=str(data.get("value", "")),
        expires=float(expires) if isinstance(expires, (int, float)) else None,
        max_age=int(max_age) if isinstance(max_age, (int, bool)) else None,
        domain=str(domain).lstrip(".").lower() if domain else None,
        path=str(data["path"]) if data.get("path") is not None else None,
        secure=bool(data.get("secure", False)),
        http_only=bool(data.get("http_only", False)),
    )


def _parse_cookie_payload(payload: object) -> ParsedCookie:
    if isinstance(payload, str):
        return parse_cookie_string(payload)
    if isinstance(payload, Mapping):
        return cookie_from_mapping(payload)
    raise CookieParseError(f"unsupported cookie payload {type(payload).__name__}")


@dataclass(frozen=True)
class StackFrame:
    """One JavaScript stack frame; empty url marks inline/eval frames."""

    url: str = ""
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class ScriptCookieSet:
    """A script wrote a cookie.  ``stack`` is innermost-first."""

    seq: int
    api: str
    cookie_string: str | Mapping[str, object]
    stack: tuple[StackFrame, ...] = ()
    cookie: ParsedCookie | None = None  # derived from cookie_string when None

    type = "script_cookie_set"

    def __post_init__(self):
        if self.cookie is None:
            object.__setattr__(self, "cookie", _parse_cookie_payload(self.cookie_string))


@dataclass(frozen=True)
class ScriptCookieGet:
    """A script read the jar; ``name`` narrows cookieStore-style reads.

    ``names`` appears only in guarded replay output and lists what the read
    actually saw.
    """

    seq: int
    api: str
    stack: tuple[StackFrame, ...] = ()
    name: str | None = None
    names: tuple[str, ...] | None = None

    type = "script_cookie_get"


@dataclass(frozen=True)
class ScriptCookieDelete:
    """An explicit cookieStore-style delete of one named cookie."""

    seq: int
    api: str
    name: str
    stack: tuple[StackFrame, ...] = ()

    type = "script_cookie_delete"


@dataclass(frozen=True)
class HttpSetCookie:
    """A Set-Cookie response header observed during the visit."""

    seq: int
    response_url: str
    set_cookie_value: str
    http_only: bool = False
    initiator_url: str | None = None
    cookie: ParsedCookie | None = None

    type = "http_set_cookie"

    def __post_init__(self):
        if self.cookie is None:
            object.__setattr__(self, "cookie", _parse_cookie_payload(self.set_cookie_value))


@dataclass(frozen=True)
class NetworkRequest:
    """An outgoing request issued by script (or the page itself).

    ``readable`` appears only in guarded replay output: the cookie names the
    requesting script could read at send time (None = unrestricted baseline).
    """

    seq: int
    url: str
    stack: tuple[StackFrame, ...] = ()
    method: str = "GET"
    readable: tuple[str, ...] | None = None

    type = "network_request"


@dataclass(frozen=True)
class ScriptInclusion:
    """How a script element entered the document."""

    seq: int
    script_url: str
    includer: str  # "parser", "inline", or the loading script's URL

    type = "script_inclusion"


Event = Union[
    ScriptCookieSet,
    ScriptCookieGet,
    ScriptCookieDelete,
    HttpSetCookie,
    NetworkRequest,
    ScriptInclusion,
]


@dataclass(frozen=True)
class Visit:
    """One page visit: the site context plus its event sequence."""

    site_url: str
    site_domain: str
    events: tuple[Event, ...] = ()
    trace_version: str = SUPPORTED_TRACE_VERSION
    visit_time: float = 0.0


@dataclass(frozen=True)
class ParseResult:
    visits: tuple[Visit, ...]
    diagnostics: tuple[Diagnostic, ...]
    record_count: int  # non-blank input lines


def _frames_from(value: object, line_no: int) -> tuple[StackFrame, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise _RecordError("bad-record", "stack must be a list")
    frames = []
    for entry in value:
        if not isinstance(entry, Mapping):
            raise _RecordError("bad-record", "stack frame must be an object")
        url = entry.get("url", "")
        if not isinstance(url, str):
            raise _RecordError("bad-record", "stack frame url must be a string")
        frames.append(
            StackFrame(
                url=url,
                line=int(entry.get("line", 0) or 0),
                col=int(entry.get("col", 0) or 0),
            )
        )
    return tuple(frames)


class _RecordError(Exception):
    def __init__(self, reason: str, detail: str):
        self.reason = reason
        self.detail = detail


def _require(record: Mapping, key: str, kind: type | tuple) -> object:
    if key not in record:
        raise _RecordError("missing-field", key)
    value = record[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise _RecordError("bad-field", f"{key}={value!r}")
    return value


def _event_from_record(record: Mapping, line_no: int) -> Event:
    tag = record.get("type")
    seq = _require(record, "seq", int)
    if tag == "script_cookie_set":
        api = _require(record, "api", str)
        if api not in SCRIPT_APIS:
            raise _RecordError("bad-field", f"api={api!r}")
        payload = record.get("cookie_string")
        if not isinstance(payload, (str, Mapping)):
            raise _RecordError("missing-field", "cookie_string")
        try:
            return ScriptCookieSet(seq=seq, api=api, cookie_string=payload,
                                   stack=_frames_from(record.get("stack"), line_no))
        except CookieParseError as exc:
            raise _RecordError("cookie-parse-error", str(exc))
    if tag == "script_cookie_get":
        api = _require(record, "api", str)
        if api not in SCRIPT_APIS:
            raise _RecordError("bad-field", f"api={api!r}")
        name = record.get("name")
        if name is not None and not isinstance(name, str):
            raise _RecordError("bad-field", f"name={name!r}")
        names = record.get("names")
        if names is not None:
            if not isinstance(names, list) or any(not isinstance(n, str) for n in names):
                raise _RecordError("bad-field", "names must be a list of strings")
            names = tuple(names)
        return ScriptCookieGet(seq=seq, api=api, stack=_frames_from(record.get("stack"), line_no),
                               name=name, names=names)
    if tag == "script_cookie_delete":
        api = _require(record, "api", str)
        if api not in SCRIPT_APIS:
            raise _RecordError("bad-field", f"api={api!r}")
        return ScriptCookieDelete(seq=seq, api=api, name=_require(record, "name", str),
                                  stack=_frames_from(record.get("stack"), line_no))
    if tag == "http_set_cookie":
        initiator = record.get("initiator_url")
        if initiator is not None and not isinstance(initiator, str):
            raise _RecordError("bad-field", f"initiator_url={initiator!r}")
        try:
            return HttpSetCookie(
                seq=seq,
                response_url=_require(record, "response_url", str),
                set_cookie_value=_require(record, "set_cookie_value", str),
                http_only=bool(record.get("http_only", False)),
                initiator_url=initiator,
            )
        except CookieParseError as exc:
            raise _RecordError("cookie-parse-error", str(exc))
    if tag == "network_request":
        readable = record.get("readable")
        if readable is not None:
            if not isinstance(readable, list) or any(not isinstance(n, str) for n in readable):
                raise _RecordError("bad-field", "readable must be a list of strings")
            readable = tuple(readable)
        method = record.get("method", "GET")
        if not isinstance(method, str):
            raise _RecordError("bad-field", f"method={method!r}")
        return NetworkRequest(seq=seq, url=_require(record, "url", str),
                              stack=_frames_from(record.get("stack"), line_no),
                              method=method, readable=readable)
    if tag == "script_inclusion":
        return ScriptInclusion(seq=seq, script_url=_require(record, "script_url", str),
                               includer=_require(record, "includer", str))
    raise _RecordError("unknown-type", repr(tag))


def parse_trace(source: str | bytes | IO | Iterable[str], rules: SuffixRules) -> ParseResult:
    """Parse a JSONL trace into visits, skipping bad records with diagnostics.

    ``source`` may be trace text, an open file, or any iterable of lines.
    Guarantees: never raises on malformed input; every non-blank line becomes
    a header, an event, or a diagnostic; events keep strictly increasing seq
    within each visit (violators are skipped).
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8", errors="replace")
    lines = source.splitlines() if isinstance(source, str) else source

    visits: list[Visit] = []
    diagnostics: list[Diagnostic] = []
    record_count = 0
    current: list[Event] | None = None
    header: dict | None = None
    last_seq: int | None = None

    def flush() -> None:
        nonlocal current, header
        if header is not None and current is not None:
            visits.append(Visit(events=tuple(current), **header))
        current = None
        header = None

    for line_no, raw_line in enumerate(lines, start=1):
        line = raw_line.strip()
        if not line:
            continue
        record_count += 1
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append(Diagnostic("json-error", str(exc), line_no))
            continue
        if not isinstance(record, dict):
            diagnostics.append(Diagnostic("bad-record", "record must be an object", line_no))
            continue
        if record.get("type") == "visit":
            flush()
            try:
                site_url = _require(record, "site_url", str)
                site_domain = url_registrable_domain(site_url, rules)
                visit_time = record.get("visit_time", 0.0)
                if not isinstance(visit_time, (int, float)) or isinstance(visit_time, bool):
                    raise _RecordError("bad-field", f"visit_time={visit_time!r}")
                version = record.get("trace_version", SUPPORTED_TRACE_VERSION)
                if not isinstance(version, str):
                    raise _RecordError("bad-field", f"trace_version={version!r}")
            except NoRegistrableDomain as exc:
                diagnostics.append(Diagnostic("bad-field", f"site_url: {exc.reason}", line_no))
                continue
            except _RecordError as exc:
                diagnostics.append(Diagnostic(exc.reason, exc.detail, line_no))
                continue
            header = {
                "site_url": site_url,
                "site_domain": site_domain,
                "trace_version": version,
                "visit_time": float(visit_time),
            }
            current = []
            last_seq = None
            continue
        if current is None:
            diagnostics.append(Diagnostic("orphan-event", "event before any visit header", line_no))
            continue
        try:
            event = _event_from_record(record, line_no)
        except _RecordError as exc:
            diagnostics.append(Diagnostic(exc.reason, exc.detail, line_no))
            continue
        except (TypeError, ValueError) as exc:
            diagnostics.append(Diagnostic("bad-record", str(exc), line_no))
            continue
        if last_seq is not None and event.seq <= last_seq:
            diagnostics.append(Diagnostic("bad-record", f"seq {event.seq} not increasing", line_no))
            continue
        last_seq = event.seq
        current.append(event)
    flush()
    return ParseResult(tuple(visits), tuple(diagnostics), record_count)


def event_to_record(event: Event) -> dict:
    """The JSON record for one event, pinned field names, defaults omitted."""
    record: dict = {"type": event.type, "seq": event.seq}
    if isinstance(event, ScriptCookieSet):
        record["api"] = event.api
        record["cookie_string"] = event.cookie_string
        record["stack"] = [{"url": f.url, "line": f.line, "col": f.col} for f in event.stack]
    elif isinstance(event, ScriptCookieGet):
        record["api"] = event.api
        record["stack"] = [{"url": f.url, "line": f.line, "col": f.col} for f in event.stack]
        if event.name is not None:
            record["name"] = event.name
        if event.names is not None:
            record["names"] = list(event.names)
    elif isinstance(event, ScriptCookieDelete):
        record["api"] = event.api
        record["name"] = event.name
        record["stack"] = [{"url": f.url, "line": f.line, "col": f.col} for f in event.stack]
    elif isinstance(event, HttpSetCookie):
        record["response_url"] = event.response_url
        record["set_cookie_value"] = event.set_cookie_value
        if event.http_only:
            record["http_only"] = True
        if event.initiator_url is not None:
            record["initiator_url"] = event.initiator_url
    elif isinstance(event, NetworkRequest):
        record["url"] = event.url
        record["stack"] = [{"url": f.url, "line": f.line, "col": f.col} for f in event.stack]
        if event.method != "GET":
            record["method"] = event.method
        if event.readable is not None:
            record["readable"] = list(event.readable)
    elif isinstance(event, ScriptInclusion):
        record["script_url"] = event.script_url
        record["includer"] = event.includer
    else:  # pragma: no cover - exhaustive over Event
        raise TypeError(f"not a trace event: {event!r}")
    return record


def visit_to_records(visit: Visit) -> list[dict]:
    header: dict = {"type": "visit", "site_url": visit.site_url,
                    "trace_version": visit.trace_version}
    if visit.visit_time:
        header["visit_time"] = visit.visit_time
    return [header] + [event_to_record(e) for e in visit.events]


def serialize_visits(visits: Iterable[Visit]) -> str:
    """Canonical JSONL form: one record per line, fields in sorted order."""
    lines = []
    for visit in visits:
        for record in visit_to_records(visit):
            lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def validate_visit(visit: Visit) -> list[str]:
    """Structural problems in a hand-built visit (empty list = valid)."""
    problems: list[str] = []
    if visit.trace_version != SUPPORTED_TRACE_VERSION:
        problems.append(f"unsupported trace_version {visit.trace_version!r}")
    if not visit.site_url:
        problems.append("empty site_url")
    if not visit.site_domain:
        problems.append("empty site_domain")
    last_seq: int | None = None
    for event in visit.events:
        label = f"{event.type}@{getattr(event, 'seq', '?')}"
        if not isinstance(event.seq, int):
            problems.append(f"{label}: non-integer seq")
            continue
        if last_seq is not None and event.seq <= last_seq:
            problems.append(f"{label}: seq not strictly increasing")
        last_seq = event.seq
        api = getattr(event, "api", None)
        if api is not None and api not in SCRIPT_APIS:
            problems.append(f"{label}: unknown api {api!r}")
    return problems


def rewrite_event(event: Event, **changes) -> Event:
    """dataclasses.replace that tolerates the derived cookie field."""
    return replace(event, **changes)
