"""Counterfactual replay of visits through the ownership guard.

``replay_guarded`` re-executes a visit's event stream under a
:class:`~jarguard.guard.GuardConfig`: denied mutations disappear from the
guarded trace, jar reads are rewritten to carry the names they were actually
allowed to see, and outgoing requests are annotated with the cookie names the
requesting script could read at send time.  Running detection over the
guarded trace then measures what the policy would have prevented;
``compare`` reports the per-action reduction with exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .attribution import OriginCache, ScriptOrigin
from .detection import ACTIONS, analyze_corpus, http_admitted, is_consent_signal
from .guard import (
    Decision,
    GuardConfig,
    OwnershipStore,
    authorize_delete,
    authorize_read,
    authorize_write,
    record_creation,
    visible_cookies,
)
from .psl import NoRegistrableDomain, SuffixRules
from .trace_model import (
    HttpSetCookie,
    NetworkRequest,
    ParsedCookie,
    ScriptCookieDelete,
    ScriptCookieGet,
    ScriptCookieSet,
    Visit,
)


@dataclass(frozen=True)
class LogEntry:
    """One adjudicated operation in replay order."""

    seq: int
    operation: str  # "set" | "get" | "delete" | "request"
    caller: str  # acting domain, or "inline" / "unknown"
    decision: Decision


@dataclass(frozen=True)
class DecisionLog:
    site_domain: str
    entries: tuple[LogEntry, ...] = ()

    def denied(self) -> tuple[LogEntry, ...]:
        return tuple(e for e in self.entries if e.decision.verdict == "deny")

    def to_records(self) -> list[dict]:
        return [
            {
                "seq": entry.seq,
                "operation": entry.operation,
                "caller": entry.caller,
                "verdict": entry.decision.verdict,
                "reason": entry.decision.reason,
                "visible": list(entry.decision.visible),
            }
            for entry in self.entries
        ]


def _caller_label(origin: ScriptOrigin) -> str:
    if origin.is_external:
        return str(origin.script_domain)
    return origin.kind


def replay_guarded(visit: Visit, config: GuardConfig,
                   rules: SuffixRules) -> tuple[Visit, DecisionLog]:
    """Replay one visit under the guard.

    Returns the guarded visit (same header, pruned/annotated events) and the
    decision log.  Deterministic: same inputs, same outputs.
    """
    origins = OriginCache(rules)
    store = OwnershipStore()
    jar: dict[str, ParsedCookie] = {}
    out_events = []
    log: list[LogEntry] = []
    site = str(visit.site_domain)

    for event in visit.events:
        if isinstance(event, ScriptCookieSet):
            caller = origins.resolve(event.stack)
            cookie = event.cookie
            deletion = cookie.is_deletion(visit.visit_time)
            decision = authorize_write(store, cookie.name, caller, site, config)
            log.append(LogEntry(event.seq, "delete" if deletion else "set",
                                _caller_label(caller), decision))
            if decision.verdict == "allow":
                if deletion:
                    jar.pop(cookie.name, None)
                else:
                    record_creation(store, cookie.name, caller, site, config)
                    jar[cookie.name] = cookie
                out_events.append(event)
        elif isinstance(event, ScriptCookieGet):
            caller = origins.resolve(event.stack)
            if event.name is not None:
                decision = authorize_read(store, event.name, caller, site, config)
            else:
                decision = visible_cookies(store, jar.keys(), caller, site, config)
            log.append(LogEntry(event.seq, "get", _caller_label(caller), decision))
            names = tuple(n for n in decision.visible if n in jar)
            out_events.append(replace(event, names=names))
        elif isinstance(event, ScriptCookieDelete):
            caller = origins.resolve(event.stack)
            decision = authorize_delete(store, event.name, caller, site, config)
            log.append(LogEntry(event.seq, "delete", _caller_label(caller), decision))
            if decision.verdict == "allow":
                jar.pop(event.name, None)
                out_events.append(event)
        elif isinstance(event, HttpSetCookie):
            # Server-set headers are not script operations; they pass through
            # and seed ownership like the baseline jar walk.
            if http_admitted(event, visit, rules, origins):
                cookie = event.cookie
                if cookie.is_deletion(visit.visit_time):
                    jar.pop(cookie.name, None)
                else:
                    try:
                        creator = str(origins.url_domain(event.response_url))
                    except NoRegistrableDomain:  # pragma: no cover - admitted implies domain
                        creator = site
                    record_creation(store, cookie.name, creator, site, config,
                                    provenance="http")
                    jar[cookie.name] = cookie
            out_events.append(event)
        elif isinstance(event, NetworkRequest):
            caller = origins.resolve(event.stack)
            decision = visible_cookies(store, jar.keys(), caller, site, config)
            log.append(LogEntry(event.seq, "request", _caller_label(caller), decision))
            readable = tuple(n for n in decision.visible if n in jar)
            out_events.append(replace(event, readable=readable))
        else:
            out_events.append(event)

    guarded = replace(visit, events=tuple(out_events))
    return guarded, DecisionLog(site, tuple(log))


def replay_corpus(visits: Iterable[Visit], config: GuardConfig,
                  rules: SuffixRules) -> tuple[list[Visit], list[DecisionLog]]:
    guarded: list[Visit] = []
    logs: list[DecisionLog] = []
    for visit in visits:
        g, log = replay_guarded(visit, config, rules)
        guarded.append(g)
        logs.append(log)
    return guarded, logs


@dataclass(frozen=True)
class ActionReduction:
    """Baseline vs guarded prevalence of one action, site-level."""

    baseline_sites: int
    guarded_sites: int
    baseline_events: int
    guarded_events: int
    baseline_site_fraction: Fraction
    guarded_site_fraction: Fraction
    relative_reduction: Fraction | None  # None when the baseline is empty


@dataclass(frozen=True)
class ReductionReport:
    """What the guard removed, per action category plus ``any``."""

    total_sites: int
    mode: str
    site_owner_full_access: bool
    allowlist: tuple[str, ...]
    entity_domains: int
    reductions: Mapping[str, ActionReduction]

    def to_dict(self) -> dict:
        from .detection import pct

        def row(red: ActionReduction) -> dict:
            rel = red.relative_reduction
            return {
                "baseline_sites": red.baseline_sites,
                "guarded_sites": red.guarded_sites,
                "baseline_events": red.baseline_events,
                "guarded_events": red.guarded_events,
                "baseline_site_pct": pct(red.baseline_site_fraction),
                "guarded_site_pct": pct(red.guarded_site_fraction),
                "relative_reduction": None if rel is None else
                    [rel.numerator, rel.denominator],
                "relative_reduction_pct": None if rel is None else pct(rel),
            }

        return {
            "schema_version": "1",
            "total_sites": self.total_sites,
            "config": {
                "mode": self.mode,
                "site_owner_full_access": self.site_owner_full_access,
                "allowlist": list(self.allowlist),
                "entity_domains": self.entity_domains,
            },
            "reductions": {action: row(self.reductions[action])
                           for action in (*ACTIONS, "any")},
        }


def _counted_events(analysis, include_consent_signals: bool):
    for event in analysis.events:
        if event.action == "exfiltrate":
            if event.authorized:
                continue
            if not include_consent_signals and is_consent_signal(event.identity.name):
                continue
        yield event


def compare(visits: Sequence[Visit], config: GuardConfig, rules: SuffixRules,
            include_consent_signals: bool = False) -> ReductionReport:
    """Detection prevalence before vs after guarding, exact arithmetic.

    ``relative_reduction`` is 1 - guarded/baseline site counts, or None for
    actions never seen in the baseline.
    """
    visits = list(visits)
    baseline = analyze_corpus(visits, rules)
    guarded_visits, _ = replay_corpus(visits, config, rules)
    guarded = analyze_corpus(guarded_visits, rules)

    total = len({str(v.site_domain) for v in visits})
    categories = (*ACTIONS, "any")
    sites = {"baseline": {c: set() for c in categories},
             "guarded": {c: set() for c in categories}}
    events = {"baseline": dict.fromkeys(categories, 0),
              "guarded": dict.fromkeys(categories, 0)}
    for side, analyses in (("baseline", baseline), ("guarded", guarded)):
        for analysis in analyses:
            site = str(analysis.visit.site_domain)
            for event in _counted_events(analysis, include_consent_signals):
                for category in (event.action, "any"):
                    sites[side][category].add(site)
                    events[side][category] += 1

    reductions: dict[str, ActionReduction] = {}
    for category in categories:
        b = len(sites["baseline"][category])
        g = len(sites["guarded"][category])
        reductions[category] = ActionReduction(
            baseline_sites=b,
            guarded_sites=g,
            baseline_events=events["baseline"][category],
            guarded_events=events["guarded"][category],
            baseline_site_fraction=Fraction(b, total) if total else Fraction(0),
            guarded_site_fraction=Fraction(g, total) if total else Fraction(0),
            relative_reduction=None if b == 0 else 1 - Fraction(g, b),
        )

    return ReductionReport(
        total_sites=total,
        mode=config.mode,
        site_owner_full_access=config.site_owner_full_access,
        allowlist=tuple(sorted(config.allowlist)),
        entity_domains=len(config.entity_map.domains) if config.entity_map else 0,
        reductions=reductions,
    )


def cli(argv: Sequence[str] | None = None) -> int:
    """Command-line entry point (see :mod:`jarguard.cli`)."""
    from . import cli as _cli

    return _cli.main(argv)
