"""Ownership isolation for the first-party cookie jar.

Each cookie name is tagged at creation with the registrable domain of its
creator.  Later script operations are adjudicated against that metadata:

* the creator itself always keeps full access to its own cookies;
* the site owner (a script from the visited site's own domain) has full
  access by default (``site_owner_full_access``);
* domains belonging to the same entity (via :class:`EntityMap`) share access;
* allowlisted domains bypass isolation entirely;
* everything else is denied, and whole-jar reads are filtered down to what
  the caller owns.

Inline page code is denied under ``strict`` mode and treated as the site
owner under ``relaxed``.  Unattributable callers are always denied.  Creator
metadata never changes for the lifetime of a visit: deleting a cookie clears
the jar, not the ownership record, so re-creating a name stays subject to the
original creator's rights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .attribution import ScriptOrigin

MODES = ("strict", "relaxed")
REASONS = ("site-owner", "owner-match", "same-entity", "allowlist",
           "cross-domain-deny", "inline-strict")


@dataclass(frozen=True)
class StoreEntry:
    creator_domain: str
    provenance: str  # "script" | "http"


@dataclass
class OwnershipStore:
    """Per-visit creator metadata, keyed by cookie name."""

    entries: dict[str, StoreEntry] = field(default_factory=dict)

    def creator_of(self, name: str, site_domain: str) -> str:
        """Owner of ``name``; names without metadata default to the site."""
        entry = self.entries.get(name)
        return entry.creator_domain if entry is not None else str(site_domain)

    def snapshot(self) -> dict[str, StoreEntry]:
        return dict(self.entries)


@dataclass(frozen=True)
class EntityMap:
    """Folds registrable domains into owning entities.

    Unmapped domains are their own singleton entity, so two domains are
    same-entity only when the map explicitly groups them (or they are equal).
    """

    domains: Mapping[str, str] = field(default_factory=dict)

    def entity(self, domain: str) -> str:
        return self.domains.get(str(domain), str(domain))

    @classmethod
    def from_file(cls, path: str) -> "EntityMap":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or \
                any(not isinstance(v, str) for v in data.values()):
            raise ValueError(f"entity map {path!r} must be a JSON object of "
                             "domain -> entity strings")
        return cls({str(k).lower(): v for k, v in data.items()})


def same_entity(a: str, b: str, entity_map: EntityMap | None) -> bool:
    """True when two domains are equal or grouped under one entity."""
    if a == b:
        return True
    if entity_map is None:
        return False
    return entity_map.entity(a) == entity_map.entity(b)


@dataclass(frozen=True)
class GuardConfig:
    """Policy knobs for one replay run."""

    mode: str = "strict"
    site_owner_full_access: bool = True
    entity_map: EntityMap | None = None
    allowlist: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def from_file(cls, path: str) -> "GuardConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"guard config {path!r} must be a JSON object")
        known = {"mode", "site_owner_full_access", "entity_map", "allowlist"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown guard config keys: {', '.join(unknown)}")
        entity_map = None
        if data.get("entity_map") is not None:
            raw = data["entity_map"]
            if not isinstance(raw, dict) or \
                    any(not isinstance(v, str) for v in raw.values()):
                raise ValueError("entity_map must map domain -> entity strings")
            entity_map = EntityMap({str(k).lower(): v for k, v in raw.items()})
        allowlist = data.get("allowlist", ())
        if not isinstance(allowlist, (list, tuple)) or \
                any(not isinstance(d, str) for d in allowlist):
            raise ValueError("allowlist must be a list of domain strings")
        return cls(
            mode=data.get("mode", "strict"),
            site_owner_full_access=bool(data.get("site_owner_full_access", True)),
            entity_map=entity_map,
            allowlist=frozenset(d.lower() for d in allowlist),
        )


@dataclass(frozen=True)
class Decision:
    """Outcome of one adjudication.

    ``visible`` is filled for reads: the cookie names the caller may see.
    ``filtered`` marks a whole-jar read that saw a strict subset.
    """

    verdict: str  # "allow" | "deny" | "filtered"
    visible: tuple[str, ...] = ()
    reason: str = ""


Caller = ScriptOrigin | str  # str = a pre-resolved registrable domain (HTTP)


def _effective_domain(caller: Caller, site_domain: str,
                      config: GuardConfig) -> tuple[str | None, str]:
    """The domain a caller acts as, or (None, denial reason)."""
    if isinstance(caller, str):
        return caller, ""
    if caller.is_external:
        return str(caller.script_domain), ""
    if caller.kind == "inline":
        if config.mode == "relaxed":
            return str(site_domain), ""
        return None, "inline-strict"
    return None, "cross-domain-deny"  # unattributable caller


def record_creation(store: OwnershipStore, name: str, actor: Caller,
                    site_domain: str, config: GuardConfig,
                    provenance: str = "script") -> None:
    """Tag a newly created cookie with its creator.

    No-op when the name already has metadata: the creator of a name never
    silently changes within a visit.  Inline (relaxed mode) and other
    non-external actors create on behalf of the site owner.
    """
    if name in store.entries:
        return
    domain, _ = _effective_domain(actor, site_domain, config)
    if domain is None:
        domain = str(site_domain)
    store.entries[name] = StoreEntry(domain, provenance)


def visible_cookies(store: OwnershipStore, jar_names: Iterable[str],
                    caller: Caller, site_domain: str,
                    config: GuardConfig) -> Decision:
    """Adjudicate a whole-jar read: which names may the caller see."""
    names = tuple(jar_names)
    domain, denial = _effective_domain(caller, site_domain, config)
    if domain is None:
        return Decision("deny", (), denial)
    if domain in config.allowlist:
        return Decision("allow", names, "allowlist")
    if domain == str(site_domain) and config.site_owner_full_access:
        return Decision("allow", names, "site-owner")
    visible = []
    via_entity = False
    for name in names:
        creator = store.creator_of(name, site_domain)
        if creator == domain:
            visible.append(name)
        elif same_entity(creator, domain, config.entity_map):
            visible.append(name)
            via_entity = True
    reason = "same-entity" if via_entity else "owner-match"
    if len(visible) == len(names):
        return Decision("allow", tuple(visible), reason)
    return Decision("filtered", tuple(visible), reason)


def _adjudicate_mutation(store: OwnershipStore, name: str, caller: Caller,
                         site_domain: str, config: GuardConfig) -> Decision:
    domain, denial = _effective_domain(caller, site_domain, config)
    if domain is None:
        return Decision("deny", (), denial)
    if domain in config.allowlist:
        return Decision("allow", (), "allowlist")
    if domain == str(site_domain) and config.site_owner_full_access:
        return Decision("allow", (), "site-owner")
    entry = store.entries.get(name)
    if entry is None:
        # Creation: the name has never existed this visit, writer becomes owner.
        return Decision("allow", (), "owner-match")
    if entry.creator_domain == domain:
        return Decision("allow", (), "owner-match")
    if same_entity(entry.creator_domain, domain, config.entity_map):
        return Decision("allow", (), "same-entity")
    return Decision("deny", (), "cross-domain-deny")


def authorize_write(store: OwnershipStore, name: str, caller: Caller,
                    site_domain: str, config: GuardConfig) -> Decision:
    """May the caller create or redefine this cookie name?"""
    return _adjudicate_mutation(store, name, caller, site_domain, config)


def authorize_delete(store: OwnershipStore, name: str, caller: Caller,
                     site_domain: str, config: GuardConfig) -> Decision:
    """May the caller remove this cookie?  Same rights as redefinition."""
    return _adjudicate_mutation(store, name, caller, site_domain, config)


def authorize_read(store: OwnershipStore, name: str, caller: Caller,
                   site_domain: str, config: GuardConfig) -> Decision:
    """Single-name read: allow iff a whole-jar read would include the name."""
    decision = visible_cookies(store, (name,), caller, site_domain, config)
    if name in decision.visible:
        return Decision("allow", (name,), decision.reason)
    if decision.verdict == "deny":
        return Decision("deny", (), decision.reason)
    return Decision("deny", (), "cross-domain-deny")
