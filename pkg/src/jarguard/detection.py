"""Cross-domain first-party-cookie manipulation and exfiltration detection.

Every cookie in a visit's jar belongs to the registrable domain of the script
(or HTTP response) that first set it; the pair (name, creator domain) is the
cookie's identity.  A cross-domain event is a later operation on that cookie
by a script from a different registrable domain:

* ``read``: the cookie came back from a jar read issued by another domain.
* ``overwrite``: another domain redefined a live cookie (non-expired shape),
  with the changed fields classified as value/expires/domain/path.
* ``delete``: another domain removed it, either with an expired-shape set
  (Max-Age <= 0, or Expires at/before the visit's reference time) or an
  explicit delete call.
* ``exfiltrate``: a request to another domain carried one of the cookie
  value's identifier tokens in its query or fragment, raw or encoded
  (base64, MD5, SHA-1).  Same-domain shipping is recorded too, flagged
  ``authorized``.

Only operations attributable to an external script URL are judged; inline
code folds into the page (pseudo creator-domain ``inline.``) and unknown
origins are skipped because cross-domain is undefined for them.
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence
from urllib.parse import unquote, urlsplit

from .attribution import OriginCache, ScriptOrigin
from .psl import NoRegistrableDomain, SuffixRules, url_registrable_domain
from .trace_model import (
    HttpSetCookie,
    NetworkRequest,
    ParsedCookie,
    ScriptCookieDelete,
    ScriptCookieGet,
    ScriptCookieSet,
    Visit,
)

INLINE_CREATOR = "inline."  # trailing dot cannot collide with a real eTLD+1
CONSENT_SIGNAL_NAMES = frozenset({"us_privacy", "usprivacy"})
ACTIONS = ("read", "overwrite", "delete", "exfiltrate")
API_BUCKETS = ("document_cookie", "cookie_store", "http")
OVERWRITE_FIELDS = ("value", "expires", "domain", "path")

_IDENTIFIER_RE = re.compile(r"[0-9A-Za-z]{8,}")
_ACTION_RANK = {action: rank for rank, action in enumerate(ACTIONS)}


@dataclass(frozen=True)
class CookieIdentity:
    """A first-party cookie keyed by who created it."""

    name: str
    creator_domain: str


@dataclass(frozen=True)
class OwnershipRecord:
    """First-setter-wins ownership of one cookie name within a visit."""

    creator_domain: str
    origin_kind: str  # "external" | "inline" | "http"
    api: str  # "document_cookie" | "cookie_store" | "http"
    first_set_seq: int
    current: ParsedCookie  # latest definition observed


@dataclass(frozen=True)
class CrossDomainEvent:
    """One detected cross-domain cookie operation."""

    action: str  # "read" | "overwrite" | "delete" | "exfiltrate"
    seq: int
    site_domain: str
    actor: ScriptOrigin
    actor_domain: str
    identity: CookieIdentity
    api: str  # creation api of the cookie pair
    changed_fields: frozenset[str] | None = None  # overwrites only
    destination_domain: str | None = None  # exfiltrations only
    matched_token: str | None = None
    encoding: str | None = None  # "raw" | "base64" | "md5" | "sha1"
    authorized: bool = False  # exfiltration by the creator itself

    def __post_init__(self):
        if self.action not in _ACTION_RANK:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == "exfiltrate":
            if self.authorized != (self.actor_domain == self.identity.creator_domain):
                raise ValueError("authorized flag contradicts actor/creator domains")
        elif self.actor_domain == self.identity.creator_domain:
            raise ValueError(f"{self.action} event is not cross-domain")

    @property
    def cross_domain(self) -> bool:
        return self.actor_domain != self.identity.creator_domain

    def sort_key(self):
        return (self.seq, _ACTION_RANK[self.action], self.identity.name,
                self.destination_domain or "", self.matched_token or "")


@dataclass(frozen=True)
class VisitAnalysis:
    """Detection output for one visit."""

    visit: Visit
    ownership: Mapping[str, OwnershipRecord]
    events: tuple[CrossDomainEvent, ...]
    diagnostics: tuple[str, ...] = ()


def is_consent_signal(name: str) -> bool:
    """Consent-propagation cookie names exist to be read and shipped."""
    return name.lower() in CONSENT_SIGNAL_NAMES


# --- per-visit simulation helpers -------------------------------------------

def http_admitted(event: HttpSetCookie, visit: Visit, rules: SuffixRules,
                  origins: OriginCache | None = None) -> bool:
    """First-party, script-visible header sets only."""
    if event.http_only:
        return False
    resolve = origins.url_domain if origins else \
        (lambda url: url_registrable_domain(url, rules))
    try:
        response_domain = resolve(event.response_url)
    except NoRegistrableDomain:
        return False
    if response_domain == visit.site_domain:
        return True
    if event.initiator_url:
        try:
            return resolve(event.initiator_url) == response_domain
        except NoRegistrableDomain:
            return False
    return False


def _apply_to_jar(event, jar: dict[str, ParsedCookie], visit: Visit,
                  rules: SuffixRules, origins: OriginCache) -> None:
    """Mutate the live-cookie jar the way a browser would."""
    if isinstance(event, ScriptCookieSet):
        cookie = event.cookie
        if cookie.is_deletion(visit.visit_time):
            jar.pop(cookie.name, None)
        else:
            jar[cookie.name] = cookie
    elif isinstance(event, ScriptCookieDelete):
        jar.pop(event.name, None)
    elif isinstance(event, HttpSetCookie):
        if http_admitted(event, visit, rules, origins):
            cookie = event.cookie
            if cookie.is_deletion(visit.visit_time):
                jar.pop(cookie.name, None)
            else:
                jar[cookie.name] = cookie


def _creator_of(origin: ScriptOrigin) -> str | None:
    if origin.is_external:
        return str(origin.script_domain)
    if origin.kind == "inline":
        return INLINE_CREATOR
    return None  # unattributable: no ownership


def build_ownership(visit: Visit, rules: SuffixRules,
                    origins: OriginCache | None = None) -> dict[str, OwnershipRecord]:
    """First-setter-wins ownership map for every attributable cookie name."""
    origins = origins or OriginCache(rules)
    ownership: dict[str, OwnershipRecord] = {}
    for event in visit.events:
        creator = api = None
        kind = ""
        if isinstance(event, ScriptCookieSet):
            origin = origins.resolve(event.stack)
            creator = _creator_of(origin)
            kind = origin.kind
            api = event.api
        elif isinstance(event, HttpSetCookie) and http_admitted(event, visit, rules, origins):
            try:
                creator = str(origins.url_domain(event.response_url))
            except NoRegistrableDomain:  # pragma: no cover - guarded by _http_admitted
                creator = None
            kind = "http"
            api = "http"
        else:
            continue
        if creator is None:
            continue
        cookie = event.cookie
        existing = ownership.get(cookie.name)
        if existing is None:
            # A deletion-shaped set creates nothing, so it cannot claim a name.
            if cookie.is_deletion(visit.visit_time):
                continue
            ownership[cookie.name] = OwnershipRecord(creator, kind, api, event.seq, cookie)
        else:
            ownership[cookie.name] = OwnershipRecord(
                existing.creator_domain, existing.origin_kind, existing.api,
                existing.first_set_seq, cookie)
    return ownership


def detect_reads(visit: Visit, ownership: Mapping[str, OwnershipRecord],
                 rules: SuffixRules,
                 origins: OriginCache | None = None) -> list[CrossDomainEvent]:
    """Cross-domain read events from jar reads (whole-jar or single-name)."""
    origins = origins or OriginCache(rules)
    jar: dict[str, ParsedCookie] = {}
    out: list[CrossDomainEvent] = []
    for event in visit.events:
        if isinstance(event, ScriptCookieGet):
            origin = origins.resolve(event.stack)
            if origin.is_external:
                actor_domain = str(origin.script_domain)
                if event.names is not None:
                    names = [n for n in event.names if n in jar]
                elif event.name is not None:
                    names = [event.name] if event.name in jar else []
                else:
                    names = list(jar)
                for name in names:
                    record = ownership.get(name)
                    # Ownership holds from the claiming set onward, never before.
                    if record is None or record.first_set_seq > event.seq or \
                            record.creator_domain == actor_domain:
                        continue
                    out.append(CrossDomainEvent(
                        action="read", seq=event.seq, site_domain=str(visit.site_domain),
                        actor=origin, actor_domain=actor_domain,
                        identity=CookieIdentity(name, record.creator_domain),
                        api=record.api))
        else:
            _apply_to_jar(event, jar, visit, rules, origins)
    return out


def classify_overwrite_fields(old: ParsedCookie, new: ParsedCookie,
                              now: float = 0.0) -> frozenset[str]:
    """Which of value/expires/domain/path differ between two definitions.

    Expiry is compared as the effective instant (Max-Age wins over Expires,
    both resolved against the same reference time ``now``).
    """
    if old.name != new.name:
        raise ValueError(f"field comparison across names {old.name!r}/{new.name!r}")
    changed = set()
    if old.value != new.value:
        changed.add("value")
    if old.effective_expiry(now) != new.effective_expiry(now):
        changed.add("expires")
    if old.domain != new.domain:
        changed.add("domain")
    if old.path != new.path:
        changed.add("path")
    return frozenset(changed)


def detect_manipulations(visit: Visit, ownership: Mapping[str, OwnershipRecord],
                         rules: SuffixRules,
                         origins: OriginCache | None = None) -> list[CrossDomainEvent]:
    """Cross-domain overwrite and delete events against live cookies."""
    origins = origins or OriginCache(rules)
    jar: dict[str, ParsedCookie] = {}
    out: list[CrossDomainEvent] = []
    site = str(visit.site_domain)
    for event in visit.events:
        if isinstance(event, (ScriptCookieSet, ScriptCookieDelete)):
            name = event.cookie.name if isinstance(event, ScriptCookieSet) else event.name
            old = jar.get(name)
            record = ownership.get(name)
            if record is not None and record.first_set_seq > event.seq:
                record = None
            origin = origins.resolve(event.stack)
            if old is not None and record is not None and origin.is_external:
                actor_domain = str(origin.script_domain)
                if actor_domain != record.creator_domain:
                    identity = CookieIdentity(name, record.creator_domain)
                    if isinstance(event, ScriptCookieDelete) or \
                            event.cookie.is_deletion(visit.visit_time):
                        out.append(CrossDomainEvent(
                            action="delete", seq=event.seq, site_domain=site,
                            actor=origin, actor_domain=actor_domain,
                            identity=identity, api=record.api))
                    else:
                        out.append(CrossDomainEvent(
                            action="overwrite", seq=event.seq, site_domain=site,
                            actor=origin, actor_domain=actor_domain,
                            identity=identity, api=record.api,
                            changed_fields=classify_overwrite_fields(
                                old, event.cookie, visit.visit_time)))
        _apply_to_jar(event, jar, visit, rules, origins)
    return out


# --- identifier extraction and encoding --------------------------------------

def extract_identifiers(value: str) -> set[str]:
    """Maximal alphanumeric runs of length >= 8 in a cookie value."""
    return set(_IDENTIFIER_RE.findall(value))


def identifier_sequence(value: str) -> tuple[str, ...]:
    """Like :func:`extract_identifiers`, ordered by first appearance."""
    return tuple(dict.fromkeys(_IDENTIFIER_RE.findall(value)))


@dataclass(frozen=True)
class EncodedVariants:
    """The searched-for forms of one identifier."""

    raw: str
    base64: str
    md5_hex: str
    sha1_hex: str


def encode_variants(identifier: str) -> EncodedVariants:
    data = identifier.encode("utf-8")
    return EncodedVariants(
        raw=identifier,
        base64=base64.b64encode(data).decode("ascii"),
        md5_hex=hashlib.md5(data).hexdigest(),
        sha1_hex=hashlib.sha1(data).hexdigest(),
    )


def extract_url_tokens(url: str, diagnostics: list[str] | None = None) -> frozenset[str]:
    """Alphanumeric runs >= 8 chars in the percent-decoded query and fragment."""
    try:
        split = urlsplit(url)
    except ValueError as exc:
        if diagnostics is not None:
            diagnostics.append(f"malformed url {url!r}: {exc}")
        return frozenset()
    tokens: set[str] = set()
    for part in (split.query, split.fragment):
        if part:
            tokens.update(_IDENTIFIER_RE.findall(unquote(part)))
    return frozenset(tokens)


def _match_encoding(identifier: str, tokens: frozenset[str],
                    tokens_lower: frozenset[str]) -> str | None:
    """First encoding of ``identifier`` found inside any URL token."""
    variants = encode_variants(identifier)
    for token in tokens:
        if variants.raw in token:
            return "raw"
    needles = {variants.base64, variants.base64.rstrip("=")}
    for needle in needles:
        for token in tokens:
            if needle in token:
                return "base64"
    for label, needle in (("md5", variants.md5_hex), ("sha1", variants.sha1_hex)):
        for token in tokens_lower:
            if needle in token:
                return label
    return None


def detect_exfiltration(visit: Visit, ownership: Mapping[str, OwnershipRecord],
                        rules: SuffixRules,
                        origins: OriginCache | None = None) -> list[CrossDomainEvent]:
    """Cookie identifiers shipped in outgoing request URLs.

    At most one event per (request, cookie): the first identifier that
    matches, trying encodings in the order raw, base64, md5, sha1.  Requests
    carrying a ``readable`` snapshot (guarded replay output) only see those
    cookie names.
    """
    origins = origins or OriginCache(rules)
    jar: dict[str, ParsedCookie] = {}
    out: list[CrossDomainEvent] = []
    site = str(visit.site_domain)
    for event in visit.events:
        if isinstance(event, NetworkRequest):
            origin = origins.resolve(event.stack)
            if not origin.is_external:
                continue
            try:
                destination = str(origins.url_domain(event.url))
            except NoRegistrableDomain:
                host = None
                try:
                    host = urlsplit(event.url).hostname
                except ValueError:
                    pass
                if not host:
                    continue
                destination = host.lower()
            tokens = extract_url_tokens(event.url)
            if not tokens:
                continue
            tokens_lower = frozenset(t.lower() for t in tokens)
            actor_domain = str(origin.script_domain)
            names = jar if event.readable is None else \
                [n for n in event.readable if n in jar]
            for name in names:
                record = ownership.get(name)
                if record is None or record.first_set_seq > event.seq:
                    continue
                for identifier in identifier_sequence(jar[name].value):
                    encoding = _match_encoding(identifier, tokens, tokens_lower)
                    if encoding is not None:
                        out.append(CrossDomainEvent(
                            action="exfiltrate", seq=event.seq, site_domain=site,
                            actor=origin, actor_domain=actor_domain,
                            identity=CookieIdentity(name, record.creator_domain),
                            api=record.api, destination_domain=destination,
                            matched_token=identifier, encoding=encoding,
                            authorized=actor_domain == record.creator_domain))
                        break
        else:
            _apply_to_jar(event, jar, visit, rules, origins)
    return out


def analyze_visit(visit: Visit, rules: SuffixRules) -> VisitAnalysis:
    """Run the full detection pipeline over one visit, deterministically."""
    origins = OriginCache(rules)
    ownership = build_ownership(visit, rules, origins)
    events = (detect_reads(visit, ownership, rules, origins)
              + detect_manipulations(visit, ownership, rules, origins)
              + detect_exfiltration(visit, ownership, rules, origins))
    events.sort(key=CrossDomainEvent.sort_key)
    return VisitAnalysis(visit, ownership, tuple(events))


def analyze_corpus(visits: Iterable[Visit], rules: SuffixRules) -> list[VisitAnalysis]:
    return [analyze_visit(v, rules) for v in visits]


# --- prevalence aggregation ---------------------------------------------------

@dataclass(frozen=True)
class ActionStats:
    """Prevalence of one action within one creation-api bucket."""

    sites: int
    site_fraction: Fraction
    pairs: int
    pair_fraction: Fraction
    events: int


@dataclass(frozen=True)
class PrevalenceReport:
    """Corpus-level prevalence of cross-domain cookie activity.

    Fractions are exact; rendering rounds to one decimal.  ``actions`` maps
    action -> api bucket ("all" plus each creation api) -> stats.  Rankings
    count distinct (site, cookie identity) pairs per actor, ties broken by
    name.  ``tracker_share`` is the fraction of distinct acting
    (site, script URL) pairs classified as tracking by the filter set.
    """

    total_sites: int
    total_pairs: Mapping[str, int]
    actions: Mapping[str, Mapping[str, ActionStats]]
    top_actors: Mapping[str, tuple[tuple[str, int], ...]]
    top_destinations: tuple[tuple[str, int], ...]
    consent_signal_events: int
    actor_count: int
    tracker_actor_count: int
    tracker_share: Fraction | None

    def to_dict(self) -> dict:
        def stats_dict(stats: ActionStats) -> dict:
            return {
                "sites": stats.sites,
                "site_fraction": [stats.site_fraction.numerator,
                                  stats.site_fraction.denominator],
                "site_pct": pct(stats.site_fraction),
                "pairs": stats.pairs,
                "pair_fraction": [stats.pair_fraction.numerator,
                                  stats.pair_fraction.denominator],
                "pair_pct": pct(stats.pair_fraction),
                "events": stats.events,
            }

        return {
            "schema_version": "1",
            "total_sites": self.total_sites,
            "total_pairs": {k: self.total_pairs[k] for k in sorted(self.total_pairs)},
            "actions": {
                action: {bucket: stats_dict(self.actions[action][bucket])
                         for bucket in sorted(self.actions[action])}
                for action in ACTIONS
            },
            "top_actors": {action: [list(pair) for pair in self.top_actors[action]]
                           for action in ACTIONS},
            "top_destinations": [list(pair) for pair in self.top_destinations],
            "consent_signal_events": self.consent_signal_events,
            "actors": self.actor_count,
            "tracker_actors": self.tracker_actor_count,
            "tracker_share": None if self.tracker_share is None else
                [self.tracker_share.numerator, self.tracker_share.denominator],
            "tracker_share_pct": None if self.tracker_share is None else
                pct(self.tracker_share),
        }


def pct(fraction: Fraction) -> str:
    """Exact-fraction percentage rendered to one decimal place."""
    scaled = fraction * 1000  # tenths of a percent
    tenths = scaled.numerator // scaled.denominator
    if 2 * (scaled.numerator - tenths * scaled.denominator) >= scaled.denominator:
        tenths += 1  # round half up
    return f"{tenths // 10}.{tenths % 10}"


def _fraction(count: int, total: int) -> Fraction:
    return Fraction(count, total) if total else Fraction(0)


def summarize(analyses: Sequence[VisitAnalysis], filters=None,
              rules: SuffixRules | None = None, entity_map=None,
              top: int = 20, include_consent_signals: bool = False) -> PrevalenceReport:
    """Aggregate per-visit detection output into a prevalence report.

    Consent-signal cookies (``us_privacy``/``usprivacy``) are excluded from
    exfiltration counts unless ``include_consent_signals`` is set; the number
    of events so excluded is reported.  ``entity_map`` (guard module) folds
    actor domains into entities for the rankings.
    """
    from .filterlist import classify_url  # late import avoids cycle at module load

    total_pairs = {bucket: set() for bucket in API_BUCKETS}
    for analysis in analyses:
        site = str(analysis.visit.site_domain)
        for name, record in analysis.ownership.items():
            total_pairs[record.api].add((site, name, record.creator_domain))

    sites_hit = {a: {b: set() for b in (*API_BUCKETS, "all")} for a in ACTIONS}
    pairs_hit = {a: {b: set() for b in (*API_BUCKETS, "all")} for a in ACTIONS}
    event_count = {a: {b: 0 for b in (*API_BUCKETS, "all")} for a in ACTIONS}
    actor_pairs: dict[str, dict[str, set]] = {a: {} for a in ACTIONS}
    destination_pairs: dict[str, set] = {}
    acting_pairs: set[tuple[str, str]] = set()
    consent_skipped = 0

    for analysis in analyses:
        site = str(analysis.visit.site_domain)
        for event in analysis.events:
            if event.action == "exfiltrate":
                if event.authorized:
                    continue
                if not include_consent_signals and is_consent_signal(event.identity.name):
                    consent_skipped += 1
                    continue
            pair = (site, event.identity.name, event.identity.creator_domain)
            for bucket in (event.api, "all"):
                sites_hit[event.action][bucket].add(site)
                pairs_hit[event.action][bucket].add(pair)
                event_count[event.action][bucket] += 1
            actor_key = event.actor_domain
            if entity_map is not None:
                actor_key = entity_map.entity(actor_key)
            actor_pairs[event.action].setdefault(actor_key, set()).add(pair)
            if event.action == "exfiltrate" and event.destination_domain:
                destination_pairs.setdefault(event.destination_domain, set()).add(pair)
            if event.actor.script_url:
                acting_pairs.add((site, event.actor.script_url))

    total_sites = len({str(a.visit.site_domain) for a in analyses})
    all_pair_total = len(set().union(*total_pairs.values())) if total_pairs else 0
    actions: dict[str, dict[str, ActionStats]] = {}
    for action in ACTIONS:
        per_bucket: dict[str, ActionStats] = {}
        for bucket in (*API_BUCKETS, "all"):
            pair_total = (all_pair_total if bucket == "all"
                          else len(total_pairs[bucket]))
            site_count = len(sites_hit[action][bucket])
            pair_count = len(pairs_hit[action][bucket])
            per_bucket[bucket] = ActionStats(
                sites=site_count,
                site_fraction=_fraction(site_count, total_sites),
                pairs=pair_count,
                pair_fraction=_fraction(pair_count, pair_total),
                events=event_count[action][bucket],
            )
        actions[action] = per_bucket

    def ranked(counter: dict[str, set]) -> tuple[tuple[str, int], ...]:
        items = sorted(counter.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        return tuple((key, len(members)) for key, members in items[:top])

    tracker_share = None
    tracker_count = 0
    if filters is not None and rules is not None and acting_pairs:
        for site, script_url in acting_pairs:
            if classify_url(script_url, site, filters, rules).tracking:
                tracker_count += 1
        tracker_share = Fraction(tracker_count, len(acting_pairs))

    return PrevalenceReport(
        total_sites=total_sites,
        total_pairs={**{b: len(total_pairs[b]) for b in API_BUCKETS},
                     "all": all_pair_total},
        actions=actions,
        top_actors={a: ranked(actor_pairs[a]) for a in ACTIONS},
        top_destinations=ranked(destination_pairs),
        consent_signal_events=consent_skipped,
        actor_count=len(acting_pairs),
        tracker_actor_count=tracker_count,
        tracker_share=tracker_share,
    )
