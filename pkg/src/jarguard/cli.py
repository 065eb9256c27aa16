"""Command-line interface.

Subcommands::

    jarguard analyze TRACE...    detection report over baseline traces
    jarguard guard-sim TRACE...  baseline-vs-guarded reduction report
    jarguard classify URLS       filter-list classification of script URLs
    jarguard report EVENTS       re-render tables from an exported event file

Exit codes: 0 success, 1 usage error, 2 input parse failure (diagnostics on
stderr).  Reports embed the sha256 of every input so runs are attributable;
all output is deterministic for identical inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import Sequence

from . import detection, filterlist, guard, psl, replay, trace_model

PSL_ENV_VAR = "JARGUARD_PSL"
_USAGE_ERROR = 1
_INPUT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """argparse with the documented usage-error exit code (1, not 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(_USAGE_ERROR, f"{self.prog}: error: {message}\n")


class _InputError(Exception):
    """Unusable input file; message goes to stderr, exit code 2."""


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                digest.update(chunk)
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}")
    return digest.hexdigest()


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8", errors="replace") as fh:
            return fh.read()
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}")


def _load_rules(args) -> psl.SuffixRules:
    path = args.psl or os.environ.get(PSL_ENV_VAR)
    if path:
        try:
            return psl.load_rules_file(path)
        except OSError as exc:
            raise _InputError(f"cannot read suffix rules {path}: {exc}")
    return psl.load_default_rules()


def _load_traces(paths: Sequence[str], rules: psl.SuffixRules):
    """Parse all trace files; hard-fail only when a file yields nothing."""
    visits = []
    inputs = {}
    diagnostics = []
    for path in paths:
        inputs[path] = _sha256(path)
        text = _read_text(path)
        result = trace_model.parse_trace(text, rules)
        if result.record_count and not result.visits:
            lines = "\n".join(f"  {path}: {d}" for d in result.diagnostics[:20])
            raise _InputError(f"no usable visits in {path}:\n{lines}")
        visits.extend(result.visits)
        diagnostics.extend((path, d) for d in result.diagnostics)
    for path, diag in diagnostics:
        print(f"warning: {path}: {diag}", file=sys.stderr)
    return visits, inputs, diagnostics


def _load_filters(paths: Sequence[str], inputs: dict):
    filters = filterlist.FilterSet()
    skipped = []
    for path in paths:
        inputs[path] = _sha256(path)
        parsed, skips = filterlist.parse_rules(_read_text(path))
        filters = filters.union(parsed)
        skipped.extend(skips)
    return filters, skipped


def _emit(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _event_row(analysis, event) -> dict:
    return {
        "type": "event",
        "site": str(analysis.visit.site_domain),
        "action": event.action,
        "seq": event.seq,
        "actor_domain": event.actor_domain,
        "actor_url": event.actor.script_url,
        "name": event.identity.name,
        "creator_domain": event.identity.creator_domain,
        "api": event.api,
        "changed_fields": sorted(event.changed_fields) if event.changed_fields is not None else None,
        "destination": event.destination_domain,
        "matched_token": event.matched_token,
        "encoding": event.encoding,
        "authorized": event.authorized,
    }


def _diagnostic_summary(diagnostics) -> dict:
    reasons: dict[str, int] = {}
    for _, diag in diagnostics:
        reasons[diag.reason] = reasons.get(diag.reason, 0) + 1
    return {"count": len(diagnostics),
            "reasons": {k: reasons[k] for k in sorted(reasons)}}


def _render_prevalence_text(report_dict: dict) -> str:
    lines = [f"sites analyzed: {report_dict['total_sites']}"]
    pairs = report_dict["total_pairs"]
    lines.append("cookie pairs: " + "  ".join(f"{k}={pairs[k]}" for k in sorted(pairs)))
    lines.append("")
    header = f"{'action':<12} {'bucket':<16} {'sites':>6} {'site%':>7} {'pairs':>6} {'pair%':>7} {'events':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for action in detection.ACTIONS:
        for bucket in sorted(report_dict["actions"][action]):
            stats = report_dict["actions"][action][bucket]
            lines.append(
                f"{action:<12} {bucket:<16} {stats['sites']:>6} {stats['site_pct']:>7} "
                f"{stats['pairs']:>6} {stats['pair_pct']:>7} {stats['events']:>7}")
    for action in detection.ACTIONS:
        top = report_dict["top_actors"][action]
        if top:
            lines.append("")
            lines.append(f"top {action} actors:")
            for name, count in top:
                lines.append(f"  {name}  ({count} pairs)")
    if report_dict["top_destinations"]:
        lines.append("")
        lines.append("top exfiltration destinations:")
        for name, count in report_dict["top_destinations"]:
            lines.append(f"  {name}  ({count} pairs)")
    if report_dict.get("tracker_share_pct") is not None:
        lines.append("")
        lines.append(f"tracking-listed actors: {report_dict['tracker_actors']}"
                     f"/{report_dict['actors']} ({report_dict['tracker_share_pct']}%)")
    if report_dict.get("consent_signal_events"):
        lines.append(f"consent-signal exfiltrations excluded: "
                     f"{report_dict['consent_signal_events']}")
    return "\n".join(lines) + "\n"


def _render_reduction_text(report_dict: dict) -> str:
    cfg = report_dict["config"]
    lines = [
        f"sites: {report_dict['total_sites']}  mode: {cfg['mode']}  "
        f"site_owner_full_access: {str(cfg['site_owner_full_access']).lower()}",
    ]
    header = (f"{'action':<12} {'baseline':>9} {'guarded':>8} "
              f"{'base%':>7} {'guard%':>7} {'reduction':>10}")
    lines.append(header)
    lines.append("-" * len(header))
    for action, row in report_dict["reductions"].items():
        reduction = row["relative_reduction_pct"]
        reduction = "n/a" if reduction is None else f"{reduction}%"
        lines.append(
            f"{action:<12} {row['baseline_sites']:>9} {row['guarded_sites']:>8} "
            f"{row['baseline_site_pct']:>7} {row['guarded_site_pct']:>7} {reduction:>10}")
    return "\n".join(lines) + "\n"


def _cmd_analyze(args) -> int:
    rules = _load_rules(args)
    visits, inputs, diagnostics = _load_traces(args.traces, rules)
    filters = skipped = None
    if args.filter_list:
        filters, skipped = _load_filters(args.filter_list, inputs)
    entity_map = None
    if args.entity_map:
        inputs[args.entity_map] = _sha256(args.entity_map)
        try:
            entity_map = guard.EntityMap.from_file(args.entity_map)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise _InputError(f"bad entity map: {exc}")

    analyses = detection.analyze_corpus(visits, rules)
    report = detection.summarize(
        analyses, filters=filters, rules=rules, entity_map=entity_map,
        top=args.top, include_consent_signals=args.include_consent_signals)

    if args.events_out:
        with open(args.events_out, "w", encoding="utf-8") as fh:
            meta = {"type": "meta", "total_sites": report.total_sites,
                    "total_pairs": dict(report.total_pairs)}
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for analysis in analyses:
                for event in analysis.events:
                    fh.write(json.dumps(_event_row(analysis, event), sort_keys=True) + "\n")

    payload = {
        "inputs": inputs,
        "trace_diagnostics": _diagnostic_summary(diagnostics),
        "report": report.to_dict(),
    }
    if skipped is not None:
        payload["filter_rules"] = {
            "parsed": len(filters),
            "skipped": filterlist.skip_counts(skipped),
        }
    if args.format == "text":
        text = _render_prevalence_text(payload["report"])
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(payload, args.out)
    return 0


def _cmd_guard_sim(args) -> int:
    rules = _load_rules(args)
    visits, inputs, _ = _load_traces(args.traces, rules)
    inputs[args.config] = _sha256(args.config)
    try:
        config = guard.GuardConfig.from_file(args.config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise _InputError(f"bad guard config: {exc}")

    report = replay.compare(visits, config, rules,
                            include_consent_signals=args.include_consent_signals)
    if args.decision_log:
        _, logs = replay.replay_corpus(visits, config, rules)
        with open(args.decision_log, "w", encoding="utf-8") as fh:
            for log in logs:
                for record in log.to_records():
                    record["site"] = log.site_domain
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    payload = {"inputs": inputs, "report": report.to_dict()}
    if args.format == "text":
        text = _render_reduction_text(payload["report"])
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(payload, args.out)
    return 0


def _cmd_classify(args) -> int:
    rules = _load_rules(args)
    inputs: dict = {}
    filters, _ = _load_filters(args.filter_list, inputs)
    text = _read_text(args.urls)
    page_domain = args.page_domain.lower()
    for line in text.splitlines():
        url = line.strip()
        if not url or url.startswith("#"):
            continue
        result = filterlist.classify_url(url, page_domain, filters, rules)
        verdict = "tracking" if result.tracking else "clean"
        rule = result.matched_rule.raw if result.matched_rule else ""
        note = result.diagnostic or ""
        sys.stdout.write(f"{url}\t{verdict}\t{rule}\t{note}\n")
    return 0


def _cmd_report(args) -> int:
    text = _read_text(args.events)
    rows = []
    meta = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _InputError(f"{args.events}:{line_no}: {exc}")
        if record.get("type") == "meta":
            meta = record
        elif record.get("type") == "event":
            rows.append(record)
        else:
            raise _InputError(f"{args.events}:{line_no}: unknown record type")

    per_action: dict[str, dict] = {}
    actors: dict[str, dict[str, set]] = {}
    destinations: dict[str, set] = {}
    for row in rows:
        action = row["action"]
        bucket = per_action.setdefault(action, {"events": 0, "sites": set(), "pairs": set()})
        pair = (row["site"], row["name"], row["creator_domain"])
        bucket["events"] += 1
        bucket["sites"].add(row["site"])
        bucket["pairs"].add(pair)
        actors.setdefault(action, {}).setdefault(row["actor_domain"], set()).add(pair)
        if action == "exfiltrate" and row.get("destination"):
            destinations.setdefault(row["destination"], set()).add(pair)

    def ranked(counter: dict[str, set]):
        items = sorted(counter.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        return [[k, len(v)] for k, v in items[:args.top]]

    payload = {
        "total_sites": meta.get("total_sites") if meta else None,
        "actions": {
            action: {
                "events": per_action[action]["events"],
                "sites": len(per_action[action]["sites"]),
                "pairs": len(per_action[action]["pairs"]),
            }
            for action in sorted(per_action)
        },
        "top_actors": {action: ranked(actors[action]) for action in sorted(actors)},
        "top_destinations": ranked(destinations),
    }
    if args.format == "text":
        lines = []
        if payload["total_sites"] is not None:
            lines.append(f"sites analyzed: {payload['total_sites']}")
        header = f"{'action':<12} {'events':>7} {'sites':>6} {'pairs':>6}"
        lines.extend([header, "-" * len(header)])
        for action in sorted(per_action):
            stats = payload["actions"][action]
            lines.append(f"{action:<12} {stats['events']:>7} {stats['sites']:>6} "
                         f"{stats['pairs']:>6}")
        for action in sorted(actors):
            lines.append(f"top {action} actors:")
            for name, count in payload["top_actors"][action]:
                lines.append(f"  {name}  ({count} pairs)")
        if payload["top_destinations"]:
            lines.append("top exfiltration destinations:")
            for name, count in payload["top_destinations"]:
                lines.append(f"  {name}  ({count} pairs)")
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        _emit(payload, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jarguard",
                     description="First-party cookie attribution, cross-domain "
                                 "manipulation detection, and isolation replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_psl(p):
        p.add_argument("--psl", metavar="PATH",
                       help=f"suffix-rule file (default: ${PSL_ENV_VAR} or the "
                            "packaged snapshot)")

    p_analyze = sub.add_parser("analyze", help="detect cross-domain cookie activity")
    p_analyze.add_argument("traces", nargs="+", metavar="TRACE")
    p_analyze.add_argument("--filter-list", action="append", default=[], metavar="PATH")
    p_analyze.add_argument("--entity-map", metavar="PATH")
    p_analyze.add_argument("--out", metavar="PATH")
    p_analyze.add_argument("--events-out", metavar="PATH",
                           help="write per-event JSONL rows here")
    p_analyze.add_argument("--format", choices=("json", "text"), default="json")
    p_analyze.add_argument("--top", type=int, default=20)
    p_analyze.add_argument("--include-consent-signals", action="store_true")
    add_psl(p_analyze)
    p_analyze.set_defaults(func=_cmd_analyze)

    p_sim = sub.add_parser("guard-sim", help="replay traces under the ownership guard")
    p_sim.add_argument("traces", nargs="+", metavar="TRACE")
    p_sim.add_argument("--config", required=True, metavar="PATH")
    p_sim.add_argument("--out", metavar="PATH")
    p_sim.add_argument("--decision-log", metavar="PATH")
    p_sim.add_argument("--format", choices=("json", "text"), default="json")
    p_sim.add_argument("--include-consent-signals", action="store_true")
    add_psl(p_sim)
    p_sim.set_defaults(func=_cmd_guard_sim)

    p_classify = sub.add_parser("classify", help="classify URLs against filter lists")
    p_classify.add_argument("urls", metavar="URLS_FILE")
    p_classify.add_argument("--page-domain", required=True)
    p_classify.add_argument("--filter-list", action="append", required=True,
                            metavar="PATH")
    add_psl(p_classify)
    p_classify.set_defaults(func=_cmd_classify)

    p_report = sub.add_parser("report", help="re-render tables from exported events")
    p_report.add_argument("events", metavar="EVENTS_FILE")
    p_report.add_argument("--format", choices=("json", "text"), default="text")
    p_report.add_argument("--top", type=int, default=20)
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else _USAGE_ERROR
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"jarguard: error: {exc}", file=sys.stderr)
        return _INPUT_ERROR
    except BrokenPipeError:  # pragma: no cover - shell convenience
        return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
