"""Public-suffix rules and registrable-domain (eTLD+1) computation.

The registrable domain of a host is the public suffix matched by the loaded
rule set plus one more label: ``www.example.co.uk`` folds to ``example.co.uk``.
Rule files use the publicsuffix.org format:

* ``com``: a normal rule; the suffix is the rule itself.
* ``*.ck``: a wildcard rule; any single label in front of the base is part
  of the suffix.
* ``!www.ck``: an exception rule; it punctures a wildcard, making the rule
  minus its leftmost label the effective suffix.

Hosts with no matching rule fall back to the implicit ``*`` rule (the last
label is the suffix).  Hosts are handled as given, lowercase ASCII; IDNA
conversion is out of scope, so rule files must carry IDN entries in punycode.
IP literals have no registrable domain and are passed through verbatim,
flagged with ``is_ip``.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable
from urllib.parse import urlsplit

DEFAULT_RULES_RESOURCE = "public_suffix_list.dat"


class NoRegistrableDomain(ValueError):
    """The host has no registrable domain under the loaded rules.

    ``reason`` is one of ``empty-host``, ``invalid-host``, or
    ``host-is-public-suffix``.
    """

    def __init__(self, host: object, reason: str):
        super().__init__(f"no registrable domain for {host!r}: {reason}")
        self.host = host
        self.reason = reason


class RegistrableDomain(str):
    """An eTLD+1, or a verbatim IP literal flagged with ``is_ip``.

    Subclasses ``str`` so callers can compare, hash, and serialize it like the
    plain domain string it is; ``is_ip`` never participates in equality.
    """

    is_ip: bool

    def __new__(cls, value: str, is_ip: bool = False) -> "RegistrableDomain":
        self = super().__new__(cls, value)
        self.is_ip = is_ip
        return self

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", is_ip=True" if self.is_ip else ""
        return f"RegistrableDomain({str.__repr__(self)}{flag})"


@dataclass(frozen=True)
class SuffixRules:
    """A parsed public-suffix rule set.

    Wildcard rules are stored by their base (``*.ck`` -> ``ck``), exception
    rules without their marker (``!www.ck`` -> ``www.ck``).  The instance owns
    a host -> result cache; rule sets are immutable so the cache never goes
    stale.
    """

    exact: frozenset[str]
    wildcards: frozenset[str]
    exceptions: frozenset[str]
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.exact) + len(self.wildcards) + len(self.exceptions)


def parse_suffix_rules(text: str | Iterable[str], diagnostics: list | None = None) -> SuffixRules:
    """Parse rule-file text (or an iterable of lines) into :class:`SuffixRules`.

    Blank lines and ``//`` comments are skipped.  Rules are lowercased.
    Malformed rules (empty labels, embedded ``*`` anywhere but as the leftmost
    label) are skipped; each one appends a message to ``diagnostics`` when a
    sink list is supplied.
    """
    exact: set[str] = set()
    wildcards: set[str] = set()
    exceptions: set[str] = set()
    lines = text.splitlines() if isinstance(text, str) else text
    for line_no, raw in enumerate(lines, start=1):
        rule = raw.strip()
        if not rule or rule.startswith("//"):
            continue
        rule = rule.lower()
        target = exact
        if rule.startswith("!"):
            rule = rule[1:]
            target = exceptions
        elif rule.startswith("*."):
            rule = rule[2:]
            target = wildcards
        labels = rule.split(".")
        bad_label = any(
            not lab or "*" in lab or "!" in lab or any(ch.isspace() for ch in lab)
            for lab in labels
        )
        if not rule or bad_label:
            if diagnostics is not None:
                diagnostics.append(f"line {line_no}: malformed rule {raw.strip()!r}")
            continue
        target.add(rule)
    return SuffixRules(frozenset(exact), frozenset(wildcards), frozenset(exceptions))


def load_default_rules() -> SuffixRules:
    """Load the rule snapshot shipped as package data."""
    text = resources.files(__package__).joinpath("data", DEFAULT_RULES_RESOURCE).read_text("utf-8")
    return parse_suffix_rules(text)


def load_rules_file(path: str) -> SuffixRules:
    with open(path, encoding="utf-8") as fh:
        return parse_suffix_rules(fh.read())


def _suffix_length(labels: list[str], rules: SuffixRules) -> int:
    """Number of trailing labels forming the public suffix (>= 1)."""
    n = len(labels)
    for i in range(n):
        candidate = ".".join(labels[i:])
        if candidate in rules.exceptions:
            # Exception prevails over the wildcard it punctures: the suffix is
            # the rule minus its leftmost label.
            return n - i - 1
        if candidate in rules.exact:
            return n - i
        if ".".join(labels[i + 1:]) in rules.wildcards:
            return n - i
    return 1  # implicit "*" rule


def registrable_domain(host: str, rules: SuffixRules) -> RegistrableDomain:
    """Fold ``host`` to its registrable domain (eTLD+1).

    Raises :class:`NoRegistrableDomain` for empty or malformed hosts and for
    hosts that are themselves public suffixes.  IP literals come back
    verbatim with ``is_ip=True``.
    """
    if not host:
        raise NoRegistrableDomain(host, "empty-host")
    raw = host.strip()
    if raw.endswith("."):
        raw = raw[:-1]  # single trailing dot is a DNS root marker, not a label
    if not raw:
        raise NoRegistrableDomain(host, "empty-host")
    bare = raw[1:-1] if raw.startswith("[") and raw.endswith("]") else raw
    # Every textual IP literal starts with a digit (v4) or contains a colon
    # (v6); anything else cannot parse, so skip the costly attempt.
    if bare[:1].isdigit() or ":" in bare:
        try:
            ipaddress.ip_address(bare)
        except ValueError:
            pass
        else:
            return RegistrableDomain(bare.lower(), is_ip=True)

    lowered = raw.lower()
    hit = rules._cache.get(lowered)
    if hit is not None:
        if isinstance(hit, RegistrableDomain):
            return hit
        raise NoRegistrableDomain(host, hit)

    labels = lowered.split(".")
    if any(not lab or set(lab) & {" ", "*", "!"} for lab in labels):
        rules._cache[lowered] = "invalid-host"
        raise NoRegistrableDomain(host, "invalid-host")
    suffix_len = _suffix_length(labels, rules)
    if suffix_len >= len(labels):
        rules._cache[lowered] = "host-is-public-suffix"
        raise NoRegistrableDomain(host, "host-is-public-suffix")
    result = RegistrableDomain(".".join(labels[len(labels) - suffix_len - 1:]))
    rules._cache[lowered] = result
    return result


def public_suffix(host: str, rules: SuffixRules) -> str:
    """The public-suffix portion of ``host`` (raises like registrable_domain)."""
    if not host or not host.strip("."):
        raise NoRegistrableDomain(host, "empty-host")
    lowered = host.strip().rstrip(".").lower()
    labels = lowered.split(".")
    if any(not lab for lab in labels):
        raise NoRegistrableDomain(host, "invalid-host")
    return ".".join(labels[len(labels) - _suffix_length(labels, rules):])


def url_registrable_domain(url: str, rules: SuffixRules) -> RegistrableDomain:
    """Registrable domain of a URL's host.

    Raises :class:`NoRegistrableDomain` (reason ``empty-host``) for URLs
    without a usable host, including unparseable ones.
    """
    try:
        host = urlsplit(url).hostname
    except ValueError:
        host = None
    if not host:
        raise NoRegistrableDomain(url, "empty-host")
    return registrable_domain(host, rules)
