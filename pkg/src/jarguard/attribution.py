"""Attribute cookie operations to the script that performed them.

The caller of a cookie API is recovered from the JavaScript stack captured at
the call site.  Frames are innermost-first; the first frame with an
attributable URL names the acting script, and its registrable domain is the
actor's identity everywhere downstream.  Extension and other privileged
frames never self-attribute (they instrument the call, they do not own it),
and ``data:``/``blob:`` frames hide the true origin entirely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence
from urllib.parse import urlsplit

from .psl import NoRegistrableDomain, RegistrableDomain, SuffixRules, url_registrable_domain
from .trace_model import ScriptInclusion, StackFrame, Visit

EXTERNAL = "external"
INLINE = "inline"
UNKNOWN = "unknown"

# Privileged instrumentation/extension schemes: skipped during the stack walk.
PRIVILEGED_SCHEMES = frozenset({
    "chrome-extension", "moz-extension", "safari-web-extension",
    "chrome", "edge", "opera", "about", "resource",
})

# Schemes that mask the loading origin: attribution gives up on these.
OPAQUE_SCHEMES = frozenset({"data", "blob", "javascript"})


@dataclass(frozen=True)
class ScriptOrigin:
    """Who performed a scripted operation.

    ``kind`` is ``external`` (script with an attributable URL), ``inline``
    (code running directly in the page), or ``unknown``.  ``script_domain``
    is set only for external origins.
    """

    kind: str
    script_url: str = ""
    script_domain: RegistrableDomain | None = None

    @property
    def is_external(self) -> bool:
        return self.kind == EXTERNAL


INLINE_ORIGIN = ScriptOrigin(INLINE)
UNKNOWN_ORIGIN = ScriptOrigin(UNKNOWN)


def external_origin(script_url: str, rules: SuffixRules) -> ScriptOrigin:
    """Origin for a known script URL (raises if the URL has no domain)."""
    return ScriptOrigin(EXTERNAL, script_url, url_registrable_domain(script_url, rules))


def attribute(stack: Sequence[StackFrame], rules: SuffixRules) -> ScriptOrigin:
    """Resolve a captured stack to the acting script's origin.

    Walks innermost-first.  Frames without a URL (inline/eval code) and
    privileged-scheme frames are skipped; the first http(s) frame wins; a
    ``data:``/``blob:`` frame means the true origin is unrecoverable.  A stack
    whose frames all lack attributable URLs is inline code; an empty stack is
    unknown.
    """
    if not stack:
        return UNKNOWN_ORIGIN
    for frame in stack:
        url = frame.url
        if not url:
            continue
        scheme = urlsplit(url).scheme.lower()
        if scheme in PRIVILEGED_SCHEMES:
            continue
        if scheme in OPAQUE_SCHEMES:
            return UNKNOWN_ORIGIN
        try:
            domain = url_registrable_domain(url, rules)
        except NoRegistrableDomain:
            continue
        return ScriptOrigin(EXTERNAL, url, domain)
    return INLINE_ORIGIN


@dataclass(frozen=True)
class InclusionPath:
    """How a script ended up in the document.

    ``direct`` means the page's own markup included it (parser/inline).
    ``chain`` lists the loader script URLs from the page side down to (not
    including) the script itself; empty for direct inclusions.  ``cyclic``
    flags inclusion records that loop; ``diagnostic`` explains degraded data.
    """

    script_url: str
    direct: bool
    chain: tuple[str, ...] = ()
    cyclic: bool = False
    diagnostic: str = ""


_PAGE_INCLUDERS = frozenset({"parser", "inline"})


class OriginCache:
    """Memoizes stack attribution; scope one instance to one visit pass."""

    def __init__(self, rules: SuffixRules):
        self.rules = rules
        # Attribution depends only on frame URLs, never on line/col.
        self._seen: dict[tuple[str, ...], ScriptOrigin] = {}
        self._url_domains: dict[str, RegistrableDomain | str] = {}

    def resolve(self, stack: tuple[StackFrame, ...]) -> ScriptOrigin:
        key = tuple(frame.url for frame in stack)
        origin = self._seen.get(key)
        if origin is None:
            origin = attribute(stack, self.rules)
            self._seen[key] = origin
        return origin

    def url_domain(self, url: str) -> RegistrableDomain:
        """Memoized :func:`url_registrable_domain`, failures included."""
        hit = self._url_domains.get(url)
        if hit is None:
            try:
                hit = url_registrable_domain(url, self.rules)
            except NoRegistrableDomain as exc:
                hit = exc.reason
            self._url_domains[url] = hit
        if isinstance(hit, RegistrableDomain):
            return hit
        raise NoRegistrableDomain(url, hit)


def inclusion_path(visit: Visit, script_url: str) -> InclusionPath:
    """Reconstruct the loader chain for ``script_url`` from inclusion events.

    The last inclusion record per script wins (re-inclusions overwrite).
    Missing records degrade to a direct path with a diagnostic; cycles are
    cut at the first repeated script.
    """
    included_by: dict[str, str] = {}
    for event in visit.events:
        if isinstance(event, ScriptInclusion):
            included_by[event.script_url] = event.includer
    if script_url not in included_by:
        return InclusionPath(script_url, direct=True, diagnostic="no-inclusion-record")

    chain: list[str] = []
    seen = {script_url}
    cursor = script_url
    while True:
        includer = included_by.get(cursor)
        if includer is None:
            # Loader itself has no record: chain is known up to here.
            return InclusionPath(script_url, direct=False, chain=tuple(reversed(chain)),
                                 diagnostic="incomplete-chain")
        if includer in _PAGE_INCLUDERS:
            return InclusionPath(script_url, direct=not chain, chain=tuple(reversed(chain)))
        if includer in seen:
            return InclusionPath(script_url, direct=False, chain=tuple(reversed(chain)),
                                 cyclic=True, diagnostic="inclusion-cycle")
        chain.append(includer)
        seen.add(includer)
        cursor = includer


def script_domains(origins: Iterable[ScriptOrigin]) -> set[RegistrableDomain]:
    """Distinct external script domains in an origin stream."""
    return {o.script_domain for o in origins if o.is_external and o.script_domain}
