"""Independent reference implementations used to cross-check the engine.

Nothing here may call the routine it verifies: filter matching is re-derived
with a character-by-character backtracking matcher, exfiltration with a
from-scratch jar simulation, tokenizer, and encoder chain.  Slow and obvious
beats fast and clever on this side of the fence.
"""

from __future__ import annotations

import base64
import hashlib
import string
from urllib.parse import unquote, urlsplit

from jarguard.attribution import attribute
from jarguard.filterlist import FilterRule, FilterSet, normalize_subject
from jarguard.psl import NoRegistrableDomain, registrable_domain
from jarguard.trace_model import (
    HttpSetCookie,
    NetworkRequest,
    ScriptCookieDelete,
    ScriptCookieSet,
)

_ALNUM = set(string.ascii_letters + string.digits)
_SEP_EXEMPT = _ALNUM | set("_-.%")


# --- filter-rule matching (backtracking, no regex) ---------------------------

def _match_at(tokens, subject: str, pos: int, anchored_end: bool) -> bool:
    if not tokens:
        return pos == len(subject) if anchored_end else True
    kind, text = tokens[0]
    rest = tokens[1:]
    if kind == "lit":
        end = pos + len(text)
        if subject[pos:end] != text:
            return False
        return _match_at(rest, subject, end, anchored_end)
    if kind == "sep":
        if pos == len(subject):  # end of URL counts as a separator
            return _match_at(rest, subject, pos, anchored_end)
        if subject[pos] not in _SEP_EXEMPT:
            return _match_at(rest, subject, pos + 1, anchored_end)
        return False
    if kind == "wild":
        for nxt in range(pos, len(subject) + 1):
            if _match_at(rest, subject, nxt, anchored_end):
                return True
        return False
    raise AssertionError(f"unknown token kind {kind!r}")


def _candidate_starts(rule: FilterRule, subject: str):
    if rule.domain_anchor:
        sep = subject.find("://")
        if sep < 0:
            return []
        host_start = sep + 3
        host_end = len(subject)
        for i in range(host_start, len(subject)):
            if subject[i] in "/?#":
                host_end = i
                break
        starts = [host_start]
        for i in range(host_start, host_end):
            if subject[i] == ".":
                starts.append(i + 1)
        return starts
    if rule.anchored_start:
        return [0]
    return range(len(subject) + 1)


def rule_matches_bruteforce(rule: FilterRule, subject: str) -> bool:
    """Pattern-only match, trying every legal start position."""
    return any(_match_at(list(rule.tokens), subject, start, rule.anchored_end)
               for start in _candidate_starts(rule, subject))


def _rule_applies(rule: FilterRule, subject: str, page_domain: str, rules) -> bool:
    opts = rule.options
    if opts.script is False:
        return False
    host = urlsplit(subject).hostname or ""
    try:
        subject_domain = str(registrable_domain(host, rules))
    except NoRegistrableDomain:
        subject_domain = host
    if opts.third_party is not None and \
            opts.third_party != (subject_domain != page_domain):
        return False
    if opts.include_domains and page_domain not in opts.include_domains:
        return False
    if page_domain in opts.exclude_domains:
        return False
    return True


def classify_bruteforce(url: str, page_domain: str, filters: FilterSet, rules) -> bool:
    """Tracking verdict re-derived with the brute-force matcher."""
    subject = normalize_subject(url)
    if subject is None:
        return False
    page_domain = page_domain.lower()
    blocked = any(
        _rule_applies(rule, subject, page_domain, rules)
        and rule_matches_bruteforce(rule, subject)
        for rule in filters.blocks)
    if not blocked:
        return False
    excused = any(
        _rule_applies(rule, subject, page_domain, rules)
        and rule_matches_bruteforce(rule, subject)
        for rule in filters.exceptions)
    return not excused


# --- exfiltration detection (independent walk) --------------------------------

def _runs_of_eight(text: str) -> list[str]:
    """Maximal alphanumeric runs >= 8 chars, in order, no regex."""
    out: list[str] = []
    current: list[str] = []
    for ch in text:
        if ch in _ALNUM:
            current.append(ch)
        else:
            if len(current) >= 8:
                out.append("".join(current))
            current = []
    if len(current) >= 8:
        out.append("".join(current))
    return out


def _unique(seq):
    seen = set()
    out = []
    for item in seq:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def _first_party_http(event: HttpSetCookie, visit, rules) -> bool:
    if event.http_only:
        return False
    try:
        response = str(registrable_domain(urlsplit(event.response_url).hostname or "", rules))
    except NoRegistrableDomain:
        return False
    if response == str(visit.site_domain):
        return True
    if not event.initiator_url:
        return False
    try:
        initiator = str(registrable_domain(urlsplit(event.initiator_url).hostname or "", rules))
    except NoRegistrableDomain:
        return False
    return initiator == response


def exfiltrations_bruteforce(visit, rules) -> list[tuple]:
    """Expected exfiltration events as comparable tuples.

    Tuple: (seq, cookie name, creator domain, destination domain,
    matched identifier, encoding, authorized).
    """
    ownership: dict[str, str] = {}
    jar: dict[str, str] = {}  # name -> value
    results: list[tuple] = []
    deadline = visit.visit_time

    for event in visit.events:
        if isinstance(event, ScriptCookieSet):
            origin = attribute(event.stack, rules)
            cookie = event.cookie
            deleted = (cookie.max_age is not None and cookie.max_age <= 0) or (
                cookie.max_age is None and cookie.expires is not None
                and cookie.expires <= deadline)
            if deleted:
                jar.pop(cookie.name, None)
            else:
                if origin.kind == "external":
                    ownership.setdefault(cookie.name, str(origin.script_domain))
                elif origin.kind == "inline":
                    ownership.setdefault(cookie.name, "inline.")
                jar[cookie.name] = cookie.value
        elif isinstance(event, ScriptCookieDelete):
            jar.pop(event.name, None)
        elif isinstance(event, HttpSetCookie):
            if _first_party_http(event, visit, rules):
                cookie = event.cookie
                deleted = (cookie.max_age is not None and cookie.max_age <= 0) or (
                    cookie.max_age is None and cookie.expires is not None
                    and cookie.expires <= deadline)
                if deleted:
                    jar.pop(cookie.name, None)
                else:
                    ownership.setdefault(
                        cookie.name,
                        str(registrable_domain(urlsplit(event.response_url).hostname, rules)))
                    jar[cookie.name] = cookie.value
        elif isinstance(event, NetworkRequest):
            origin = attribute(event.stack, rules)
            if origin.kind != "external":
                continue
            actor = str(origin.script_domain)
            try:
                split = urlsplit(event.url)
            except ValueError:
                continue
            host = split.hostname
            if not host:
                continue
            try:
                destination = str(registrable_domain(host, rules))
            except NoRegistrableDomain:
                destination = host.lower()
            tokens = _runs_of_eight(unquote(split.query)) + \
                _runs_of_eight(unquote(split.fragment))
            if not tokens:
                continue
            lowered = [t.lower() for t in tokens]
            names = list(jar) if event.readable is None else \
                [n for n in event.readable if n in jar]
            for name in names:
                creator = ownership.get(name)
                if creator is None:
                    continue
                hit = None
                for ident in _unique(_runs_of_eight(jar[name])):
                    raw = ident
                    padded = base64.b64encode(ident.encode()).decode()
                    needles = [
                        ("raw", raw, False),
                        ("base64", padded, False),
                        ("base64", padded.rstrip("="), False),
                        ("md5", hashlib.md5(ident.encode()).hexdigest(), True),
                        ("sha1", hashlib.sha1(ident.encode()).hexdigest(), True),
                    ]
                    for encoding in ("raw", "base64", "md5", "sha1"):
                        for enc, needle, fold in needles:
                            if enc != encoding:
                                continue
                            pool = lowered if fold else tokens
                            if any(needle in tok for tok in pool):
                                hit = (ident, encoding)
                                break
                        if hit:
                            break
                    if hit:
                        break
                if hit:
                    results.append((event.seq, name, creator, destination,
                                    hit[0], hit[1], actor == creator))
    return results


def exfil_event_tuples(events) -> list[tuple]:
    """Project engine events onto the oracle's tuple shape."""
    return [
        (e.seq, e.identity.name, e.identity.creator_domain,
         e.destination_domain, e.matched_token, e.encoding, e.authorized)
        for e in events if e.action == "exfiltrate"
    ]
