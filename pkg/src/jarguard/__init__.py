"""First-party cookie attribution, cross-domain detection, and isolation replay.

The pipeline, bottom to top:

* :mod:`jarguard.psl`: registrable-domain (eTLD+1) computation.
* :mod:`jarguard.trace_model`: visit/event schema and cookie parsing.
* :mod:`jarguard.attribution`: stack-based script attribution.
* :mod:`jarguard.filterlist`: Adblock-subset URL classification.
* :mod:`jarguard.detection`: ownership, manipulation, and exfiltration events.
* :mod:`jarguard.guard`: ownership-isolation policy decisions.
* :mod:`jarguard.replay`: guarded counterfactual replay and reduction reports.
"""

from .psl import (
    NoRegistrableDomain,
    RegistrableDomain,
    SuffixRules,
    load_default_rules,
    parse_suffix_rules,
    registrable_domain,
    url_registrable_domain,
)
from .trace_model import (
    CookieParseError,
    Diagnostic,
    Event,
    HttpSetCookie,
    NetworkRequest,
    ParsedCookie,
    ParseResult,
    ScriptCookieDelete,
    ScriptCookieGet,
    ScriptCookieSet,
    ScriptInclusion,
    StackFrame,
    Visit,
    parse_cookie_string,
    parse_trace,
    serialize_visits,
    validate_visit,
)
from .attribution import InclusionPath, ScriptOrigin, attribute, inclusion_path
from .filterlist import ClassifyResult, FilterRule, FilterSet, classify_url, parse_rules
from .detection import (
    CookieIdentity,
    CrossDomainEvent,
    OwnershipRecord,
    PrevalenceReport,
    VisitAnalysis,
    analyze_corpus,
    analyze_visit,
    build_ownership,
    classify_overwrite_fields,
    detect_exfiltration,
    detect_manipulations,
    detect_reads,
    encode_variants,
    extract_identifiers,
    extract_url_tokens,
    summarize,
)
from .guard import (
    Decision,
    EntityMap,
    GuardConfig,
    OwnershipStore,
    authorize_delete,
    authorize_read,
    authorize_write,
    record_creation,
    same_entity,
    visible_cookies,
)
from .replay import (
    DecisionLog,
    ReductionReport,
    compare,
    replay_corpus,
    replay_guarded,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
