"""Command-line entry point.

Exit codes (stable): 0 success, 1 validation violations, 2 parse error,
3 I/O or schema error, 4 usage error.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from cntmf import __version__
from cntmf.dsl import ModelParseError, load_model
from cntmf.feedback import (
    DEFAULT_ALPHA,
    IncidentError,
    Ledger,
    Quarter,
    RecordFileError,
    append_records,
    dump_priors,
    ingest_incident,
    load_ledger,
    load_priors,
    quarterly_snapshot,
    read_records,
    recalibrate,
    seed_priors,
)
from cntmf.mitigation import UnknownControlError, load_selection
from cntmf.model import Severity, SystemModel, validate_model
from cntmf.reporting import (
    assess,
    assessment_to_dict,
    catalog_document,
    dumps_canonical,
    metrics_to_dict,
    render_dfd,
    render_heatmap_grid,
    render_markdown,
    render_structured,
)
from cntmf.risk import UnknownThreatError, format_score, load_overrides

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_USAGE = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


class _Fail(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        self.message = message


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(path: str, allow_warnings: bool, report_to=None) -> SystemModel:
    """Parse and validate; raises _Fail with the matching exit code."""
    try:
        model = load_model(path)
    except FileNotFoundError:
        raise _Fail(EXIT_IO, f"{path}: no such file")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"{path}: {exc.strerror or exc}")
    except ModelParseError as exc:
        for e in exc.errors:
            _err(str(e))
        raise _Fail(EXIT_PARSE)
    violations = validate_model(model)
    blocking = [v for v in violations if not (allow_warnings and v.severity is Severity.WARNING)]
    out = report_to or sys.stderr
    for v in violations:
        print(str(v) if v.span else f"{path}: {v}", file=out)
    if blocking:
        raise _Fail(EXIT_VIOLATIONS)
    return model


def _read_json_file(loader, path: Optional[str], what: str):
    if path is None:
        return None
    try:
        return loader(path)
    except FileNotFoundError:
        raise _Fail(EXIT_IO, f"{path}: no such {what} file")
    except (OSError, ValueError) as exc:
        raise _Fail(EXIT_IO, f"{path}: invalid {what} file: {exc}")


def _timestamp(args) -> Optional[str]:
    if getattr(args, "no_timestamp", False):
        return None
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _quarter(text: str) -> Quarter:
    try:
        return Quarter.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc))


def _metrics(args):
    if not args.ledger:
        if args.quarter:
            raise UsageError("--quarter requires --ledger")
        return None
    if not args.quarter:
        raise UsageError("--ledger requires --quarter")
    q = _quarter(args.quarter)
    return quarterly_snapshot(_ledger(args.ledger), q)


def _ledger(path: str) -> Ledger:
    try:
        return load_ledger(path)
    except FileNotFoundError:
        raise _Fail(EXIT_IO, f"{path}: no such ledger file")
    except RecordFileError as exc:
        raise _Fail(EXIT_IO, str(exc))
    except (OSError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_IO, f"{path}: {exc}")


def _assessment(args, model):
    overrides = _read_json_file(load_overrides, getattr(args, "overrides", None), "overrides")
    priors = _read_json_file(load_priors, getattr(args, "priors", None), "priors")
    selected = _read_json_file(load_selection, getattr(args, "controls", None), "controls")
    metrics = _metrics(args) if hasattr(args, "ledger") else None
    try:
        return assess(
            model,
            overrides=overrides,
            selected_controls=selected,
            metrics=metrics,
            priors=priors,
            created_at=_timestamp(args),
        )
    except (UnknownThreatError, UnknownControlError) as exc:
        raise _Fail(EXIT_IO, str(exc))


# --- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    _load(args.model, args.allow_warnings, report_to=sys.stdout)
    return EXIT_OK


def cmd_threats(args) -> int:
    model = _load(args.model, args.allow_warnings)
    a = _assessment(args, model)
    if args.json:
        sys.stdout.write(dumps_canonical({"schema_version": 1, "threats": assessment_to_dict(a)["threats"]}))
    else:
        for t in a.threats:
            print(f"{t.id}\t{t.category.value}\t{t.rationale}")
    return EXIT_OK


def _summary(a, top: int) -> str:
    lines = [f"{len(a.scored)} threats scored; top {min(top, len(a.scored))}:"]
    for n, st in enumerate(a.scored[:top], start=1):
        lines.append(
            f"{n:>3}. {format_score(st.score):>5} {st.band.value:<6} {st.id} ({st.threat.category.value})"
        )
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    model = _load(args.model, args.allow_warnings)
    a = _assessment(args, model)
    out = Path(args.out)
    files = {
        "report.md": render_markdown(a),
        "assessment.json": render_structured(a),
        "model.dot": render_dfd(model),
        "heatmap.csv": render_heatmap_grid(a.heatmap, "csv"),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"{out}: {exc.strerror or exc}")
    sys.stdout.write(_summary(a, args.top))
    return EXIT_OK


def cmd_dfd(args) -> int:
    model = _load(args.model, args.allow_warnings)
    text = render_dfd(model)
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8", newline="\n")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"{args.output}: {exc.strerror or exc}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    model = _load(args.model, args.allow_warnings)
    a = _assessment(args, model)
    if args.json:
        sys.stdout.write(dumps_canonical({"schema_version": 1, "heatmap": assessment_to_dict(a)["heatmap"]}))
    else:
        sys.stdout.write(render_heatmap_grid(a.heatmap, args.format))
    return EXIT_OK


def cmd_incidents_ingest(args) -> int:
    ledger_path = Path(args.ledger)
    ledger = _ledger(args.ledger) if ledger_path.exists() else Ledger()
    try:
        records = read_records(args.input)
    except FileNotFoundError:
        raise _Fail(EXIT_IO, f"{args.input}: no such file")
    except RecordFileError as exc:
        raise _Fail(EXIT_IO, str(exc))
    # validate everything before touching the ledger file
    for n, rec in enumerate(records):
        try:
            ledger = ingest_incident(ledger, rec)
        except IncidentError as exc:
            raise _Fail(EXIT_IO, f"{args.input}: record {n + 1}: {exc}")
    try:
        append_records(ledger_path, records)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"{ledger_path}: {exc.strerror or exc}")
    print(f"ingested {len(records)} record(s); ledger now holds {len(ledger)}")
    return EXIT_OK


def _fmt_p(p: float) -> str:
    s = f"{p:.4f}".rstrip("0").rstrip(".")
    return s or "0"


def _hours(td) -> str:
    return "n/a" if td is None else f"{td.total_seconds() / 3600:.2f} h"


def cmd_incidents_metrics(args) -> int:
    q = _quarter(args.quarter)
    snap = quarterly_snapshot(_ledger(args.ledger), q)
    if args.json:
        sys.stdout.write(dumps_canonical(metrics_to_dict(snap)))
        return EXIT_OK
    print(f"quarter: {snap.quarter}")
    print(f"incidents: {snap.incident_count} (open: {snap.open_count})")
    print(f"total loss: ${snap.total_loss_usd:,}")
    print(f"mean loss: ${snap.mean_loss_usd:,.2f}")
    if snap.benchmark_comparison:
        print(f"  {snap.benchmark_comparison} the H1-2025 industry average of $7,180,000")
    flag = "" if snap.mttr is None else (" (meets <24h target)" if snap.mttr_target_met else " (misses <24h target)")
    print(f"MTTR: {_hours(snap.mttr)}{flag}")
    for cat, d in snap.mttr_by_category.items():
        print(f"  {cat}: {_hours(d)}")
    print("by source: " + ", ".join(f"{k}={v}" for k, v in snap.by_source.items()))
    return EXIT_OK


def _parse_when(text: Optional[str]) -> Optional[datetime]:
    if text is None:
        return None
    t = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        ts = datetime.fromisoformat(t)
    except ValueError:
        raise UsageError(f"invalid date {text!r}; expected ISO-8601")
    return ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)


def cmd_incidents_recalibrate(args) -> int:
    if not 0 <= args.alpha <= 1:
        raise UsageError(f"--alpha {args.alpha} outside [0, 1]")
    if args.quarter and (args.since or args.until):
        raise UsageError("--quarter cannot be combined with --since/--until")
    if args.quarter:
        q = _quarter(args.quarter)
        window = (q.start, q.end)
    else:
        window = (_parse_when(args.since), _parse_when(args.until))
    ledger = _ledger(args.ledger)
    priors = _read_json_file(load_priors, args.priors, "priors") or seed_priors()
    updated = recalibrate(ledger, priors, window, args.alpha)
    try:
        Path(args.out).write_text(dump_priors(updated), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"{args.out}: {exc.strerror or exc}")
    changed = [(c, priors[c], updated[c]) for c in priors if updated[c] != priors[c]]
    if not changed:
        print("no change")
        return EXIT_OK
    width = max(len(c.value) for c, _, _ in changed)
    for c, old, new in changed:
        print(f"{c.value:<{width}}  {_fmt_p(old)} -> {_fmt_p(new)}")
    return EXIT_OK


def cmd_catalog_dump(args) -> int:
    sys.stdout.write(dumps_canonical(catalog_document(controls=args.controls)))
    return EXIT_OK


# --- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cntmf", description="Threat modelling as code for hybrid fiat/crypto systems.")
    p.add_argument("--version", action="version", version=f"cntmf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_cmd(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("model", help="path to a .cntmf model file")
        sp.add_argument("--allow-warnings", action="store_true", help="do not fail on warning-class violations")
        sp.set_defaults(func=fn)
        return sp

    model_cmd("validate", cmd_validate, "check a model for structural violations")

    sp = model_cmd("threats", cmd_threats, "list enumerated threats")
    sp.add_argument("--json", action="store_true")

    sp = model_cmd("report", cmd_report, "write report.md, assessment.json, model.dot and heatmap.csv")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--overrides", help="JSON override file keyed by threat id")
    sp.add_argument("--controls", help="JSON list of selected control ids")
    sp.add_argument("--priors", help="recalibrated priors file")
    sp.add_argument("--ledger", help="incident ledger for the metrics section")
    sp.add_argument("--quarter", help="quarter for the metrics section, e.g. 2025Q1")
    sp.add_argument("--no-timestamp", action="store_true", help="omit the creation timestamp")
    sp.add_argument("--top", type=int, default=10, help="threats shown in the stdout summary")

    sp = model_cmd("dfd", cmd_dfd, "emit the extended DFD as a DOT graph")
    sp.add_argument("--output", "-o")

    sp = model_cmd("heatmap", cmd_heatmap, "print the risk heatmap")
    sp.add_argument("--overrides")
    sp.add_argument("--priors")
    sp.add_argument("--format", choices=("ascii", "csv"), default="ascii")
    sp.add_argument("--json", action="store_true")

    inc = sub.add_parser("incidents", help="incident ledger and feedback loop")
    isub = inc.add_subparsers(dest="incidents_command", required=True, parser_class=_Parser)
    sp = isub.add_parser("ingest", help="append validated records to a ledger")
    sp.add_argument("ledger")
    sp.add_argument("input", help="JSON-lines incident file")
    sp.set_defaults(func=cmd_incidents_ingest)
    sp = isub.add_parser("metrics", help="quarterly metrics snapshot")
    sp.add_argument("ledger")
    sp.add_argument("--quarter", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_incidents_metrics)
    sp = isub.add_parser("recalibrate", help="update exploit-probability priors from the ledger")
    sp.add_argument("ledger")
    sp.add_argument("--out", required=True, help="where to write the updated priors")
    sp.add_argument("--priors", help="current priors (defaults to the built-in seeds)")
    sp.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    sp.add_argument("--quarter")
    sp.add_argument("--since")
    sp.add_argument("--until")
    sp.set_defaults(func=cmd_incidents_recalibrate)

    cat = sub.add_parser("catalog", help="rule tables and control catalogue")
    csub = cat.add_subparsers(dest="catalog_command", required=True, parser_class=_Parser)
    sp = csub.add_parser("dump")
    sp.add_argument("--controls", action="store_true", help="dump the control catalogue instead")
    sp.set_defaults(func=cmd_catalog_dump)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except _Fail as exc:
        if exc.message:
            _err(exc.message)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
