"""Adblock-style filter parsing and URL classification.

Supported rule subset: plain substring patterns, ``@@`` exceptions, ``||``
domain anchors, ``|`` start/end anchors, ``^`` separators, ``*`` wildcards,
and the options ``third-party``/``script`` (with ``~`` forms) and
``domain=a.com|~b.com``.  Comment lines are ignored silently; cosmetic rules,
regex rules, and rules carrying unsupported options are skipped whole with a
per-category diagnostic so callers can account for coverage.

Matching model: a separator (``^``) matches one character that is neither
alphanumeric nor ``_``, ``-``, ``.``, ``%``, or the end of the URL.  ``||``
anchors the match at a host-label boundary of the subject.  Subjects are
normalized to lowercase scheme and host before matching; paths and queries
keep their case.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence
from urllib.parse import urlsplit

from .psl import NoRegistrableDomain, SuffixRules, registrable_domain

SEPARATOR_CLASS = r"[^0-9A-Za-z_\-.%]"
Token = tuple[str, str]  # kind "lit" | "wild" | "sep", text only for "lit"

_KNOWN_OPTIONS = {"third-party", "script", "domain"}
_COSMETIC_MARKERS = ("##", "#@#", "#?#", "#$#", "#%#")
_OPTION_TAIL = re.compile(r"^[0-9a-z~=,|_.\-]+$")


@dataclass(frozen=True)
class FilterOptions:
    """Applicability gates parsed from the ``$`` option tail."""

    third_party: bool | None = None
    script: bool | None = None
    include_domains: frozenset[str] = frozenset()
    exclude_domains: frozenset[str] = frozenset()


@dataclass(frozen=True)
class FilterRule:
    """One compiled network rule."""

    raw: str
    tokens: tuple[Token, ...]
    exception: bool = False
    domain_anchor: bool = False
    anchored_start: bool = False
    anchored_end: bool = False
    options: FilterOptions = FilterOptions()
    pattern: re.Pattern = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.pattern is None:
            object.__setattr__(self, "pattern", _compile(self))


@dataclass(frozen=True)
class SkippedRule:
    category: str  # "cosmetic" | "regex" | "unsupported-option" | "malformed"
    raw: str
    line_no: int | None = None


@dataclass(frozen=True)
class FilterSet:
    """Parsed rules in list order, exceptions separated."""

    blocks: tuple[FilterRule, ...] = ()
    exceptions: tuple[FilterRule, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks) + len(self.exceptions)

    def union(self, other: "FilterSet") -> "FilterSet":
        return FilterSet(self.blocks + other.blocks, self.exceptions + other.exceptions)


@dataclass(frozen=True)
class ClassifyResult:
    tracking: bool
    matched_rule: FilterRule | None = None
    diagnostic: str = ""


def _compile(rule: FilterRule) -> re.Pattern:
    parts = []
    if rule.domain_anchor:
        # Start of host, or any later host-label boundary.
        parts.append(r"^[a-z][a-z0-9+.\-]*://(?:[^/?#]*\.)?")
    elif rule.anchored_start:
        parts.append("^")
    for kind, text in rule.tokens:
        if kind == "lit":
            parts.append(re.escape(text))
        elif kind == "wild":
            parts.append(".*")
        else:
            parts.append(f"(?:{SEPARATOR_CLASS}|$)")
    if rule.anchored_end:
        parts.append("$")
    return re.compile("".join(parts))


def _tokenize(pattern: str) -> tuple[Token, ...]:
    tokens: list[Token] = []
    literal: list[str] = []

    def flush() -> None:
        if literal:
            tokens.append(("lit", "".join(literal)))
            literal.clear()

    for ch in pattern:
        if ch == "*":
            flush()
            if not tokens or tokens[-1][0] != "wild":
                tokens.append(("wild", ""))
        elif ch == "^":
            flush()
            tokens.append(("sep", ""))
        else:
            literal.append(ch)
    flush()
    return tuple(tokens)


def _parse_options(tail: str) -> FilterOptions | None:
    """None means an unsupported option was present."""
    third_party: bool | None = None
    script: bool | None = None
    include: set[str] = set()
    exclude: set[str] = set()
    for item in tail.split(","):
        item = item.strip()
        if not item:
            return None
        negated = item.startswith("~")
        body = item[1:] if negated else item
        name, eq, value = body.partition("=")
        if name not in _KNOWN_OPTIONS:
            return None
        if name == "third-party" and not eq:
            third_party = not negated
        elif name == "script" and not eq:
            script = not negated
        elif name == "domain" and eq and not negated:
            for dom in value.split("|"):
                dom = dom.strip().lower()
                if not dom:
                    continue
                if dom.startswith("~"):
                    exclude.add(dom[1:])
                else:
                    include.add(dom)
            if not include and not exclude:
                return None
        else:
            return None
    return FilterOptions(third_party, script, frozenset(include), frozenset(exclude))


def parse_rule(line: str) -> FilterRule | SkippedRule:
    """Parse one trimmed, non-comment line into a rule (or a skip record)."""
    raw = line
    if any(marker in line for marker in _COSMETIC_MARKERS):
        return SkippedRule("cosmetic", raw)
    body = line
    exception = body.startswith("@@")
    if exception:
        body = body[2:]
    if len(body) > 1 and body.startswith("/") and body.endswith("/"):
        return SkippedRule("regex", raw)

    options = FilterOptions()
    dollar = body.rfind("$")
    if dollar > -1:
        tail = body[dollar + 1:].lower()
        if tail and _OPTION_TAIL.match(tail):
            parsed = _parse_options(tail)
            if parsed is None:
                return SkippedRule("unsupported-option", raw)
            options = parsed
            body = body[:dollar]

    domain_anchor = body.startswith("||")
    anchored_start = False
    if domain_anchor:
        body = body[2:]
        # The host segment of a || rule is case-insensitive by construction;
        # lowercase up to the first path/query character.
        cut = len(body)
        for i, ch in enumerate(body):
            if ch in "/?#^*":
                cut = i
                break
        body = body[:cut].lower() + body[cut:]
    elif body.startswith("|"):
        anchored_start = True
        body = body[1:]
    anchored_end = body.endswith("|")
    if anchored_end:
        body = body[:-1]
    if not body and not domain_anchor and not anchored_start and not anchored_end:
        return SkippedRule("malformed", raw)
    return FilterRule(
        raw=raw,
        tokens=_tokenize(body),
        exception=exception,
        domain_anchor=domain_anchor,
        anchored_start=anchored_start,
        anchored_end=anchored_end,
        options=options,
    )


def parse_rules(lines: str | Iterable[str]) -> tuple[FilterSet, list[SkippedRule]]:
    """Parse filter-list text.  Returns the rule set plus skip diagnostics."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    blocks: list[FilterRule] = []
    exceptions: list[FilterRule] = []
    skipped: list[SkippedRule] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("!") or (line.startswith("[") and line.endswith("]")):
            continue
        result = parse_rule(line)
        if isinstance(result, SkippedRule):
            skipped.append(SkippedRule(result.category, result.raw, line_no))
        elif result.exception:
            exceptions.append(result)
        else:
            blocks.append(result)
    return FilterSet(tuple(blocks), tuple(exceptions)), skipped


def skip_counts(skipped: Sequence[SkippedRule]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for entry in skipped:
        counts[entry.category] = counts.get(entry.category, 0) + 1
    return counts


def normalize_subject(url: str) -> str | None:
    """Lowercase scheme and authority; None when there is no usable host."""
    try:
        split = urlsplit(url)
        host = split.hostname
    except ValueError:
        return None
    if not split.scheme or not host:
        return None
    scheme_netloc = f"{split.scheme}://{split.netloc}".lower()
    rest = url[len(f"{split.scheme}://{split.netloc}"):]
    return scheme_netloc + rest


def _applies(rule: FilterRule, subject_domain: str, page_domain: str) -> bool:
    opts = rule.options
    if opts.script is False:
        return False  # subjects here are script/request URLs by contract
    if opts.third_party is not None:
        if opts.third_party != (subject_domain != page_domain):
            return False
    if opts.include_domains and page_domain not in opts.include_domains:
        return False
    if page_domain in opts.exclude_domains:
        return False
    return True


def rule_matches(rule: FilterRule, subject: str) -> bool:
    """Pattern-only match (options not considered)."""
    return rule.pattern.search(subject) is not None


def classify_url(url: str, page_domain: str, filters: FilterSet,
                 rules: SuffixRules) -> ClassifyResult:
    """Decide whether ``url`` is tracking-listed in the context of a page.

    Exceptions take precedence; the decisive rule is reported.  Malformed
    URLs are never tracking and carry a diagnostic.
    """
    subject = normalize_subject(url)
    if subject is None:
        return ClassifyResult(False, None, "malformed-url")
    host = urlsplit(subject).hostname or ""
    try:
        subject_domain = str(registrable_domain(host, rules))
    except NoRegistrableDomain:
        subject_domain = host
    page_domain = page_domain.lower()

    block_hit: FilterRule | None = None
    for rule in filters.blocks:
        if _applies(rule, subject_domain, page_domain) and rule_matches(rule, subject):
            block_hit = rule
            break
    if block_hit is None:
        return ClassifyResult(False, None)
    for rule in filters.exceptions:
        if _applies(rule, subject_domain, page_domain) and rule_matches(rule, subject):
            return ClassifyResult(False, rule)
    return ClassifyResult(True, block_hit)
