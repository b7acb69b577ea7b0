"""Command-line entry point.

Exit codes: 0 success, 1 domain error (invalid model, unknown class, failed
``--strict`` check, ...), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import query
from .bundled import bundled_metamodels
from .config import Settings
from .diff import diff_instances, diff_metamodels
from .gateway import BackendError, MockBackend, RemoteBackend
from .harness import HarnessError, load_suite, render_report, run_suite
from .model import Metamodel, ModelError, validate_instance
from .modelformat import ModelDocument, ParseError, parse_model_document
from .names import normalize_name
from .ocl import OclSyntaxError, check_compliance, parse_constraints

QUERY_OPS = {"listClasses": 0, "members": 1, "kindof": 2, "chain": 2, "subclasses": 1}


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _document(path: str) -> ModelDocument:
    try:
        return parse_model_document(_read(path))
    except ParseError as exc:
        raise DomainError(f"{path}: {exc}") from None


def _metamodel(path: str) -> Metamodel:
    doc = _document(path)
    if doc.kind != "metamodel":
        raise DomainError(f"{path} is not a metamodel")
    if doc.issues:
        raise DomainError(f"{path} does not validate: " + "; ".join(f"{i.code} {i.path}" for i in doc.issues))
    return doc.payload


def _metamodel_for_instance(doc: ModelDocument, explicit: Optional[str]) -> Optional[Metamodel]:
    if explicit:
        return _metamodel(explicit)
    return bundled_metamodels().get(normalize_name(doc.payload.metamodel_name))


def _issue_lines(issues) -> str:
    return "".join(f"{i.code} {i.path}: {i.message}\n" for i in issues)


def cmd_validate(args: argparse.Namespace, out) -> int:
    doc = _document(args.model)
    issues = list(doc.issues)
    if doc.kind == "instance":
        mm = _metamodel_for_instance(doc, args.metamodel)
        if mm is None:
            raise DomainError(f"metamodel {doc.payload.metamodel_name!r} is unknown; pass --metamodel")
        issues = validate_instance(doc.payload, mm)
    if issues:
        out.write(_issue_lines(issues))
        return 1
    out.write(f"valid {doc.kind}\n")
    return 0


def cmd_query(args: argparse.Namespace, out) -> int:
    wanted = QUERY_OPS[args.op]
    if len(args.args) != wanted:
        raise UsageError(f"--op {args.op} takes {wanted} argument(s), got {len(args.args)}")
    mm = _metamodel(args.model)
    if args.op == "listClasses":
        lines = query.list_classes(mm)
    elif args.op == "members":
        attrs, ops = query.list_members(mm, args.args[0])
        lines = [f"{a.name}: {a.type}" for a in attrs] + [o.signature() for o in ops]
    elif args.op == "kindof":
        lines = [str(query.is_kind_of(mm, *args.args)).lower()]
    elif args.op == "chain":
        lines = [str(query.relation_chain(mm, *args.args))]
    else:
        lines = sorted(query.subclasses_of(mm, args.args[0], direct=not args.all))
    out.write("".join(line + "\n" for line in lines))
    return 0


def cmd_diff(args: argparse.Namespace, out) -> int:
    old, new = _document(args.old), _document(args.new)
    if old.kind != new.kind:
        raise DomainError(f"cannot compare {old.kind} and {new.kind} documents")
    if old.kind == "metamodel":
        report = diff_metamodels(old.payload, new.payload)
    else:
        report = diff_instances(old.payload, new.payload, _metamodel(args.metamodel) if args.metamodel else None)
    out.write(report.render())
    return 0


def cmd_check(args: argparse.Namespace, out) -> int:
    mm = _metamodel(args.metamodel)
    doc = _document(args.instance)
    if doc.kind != "instance":
        raise DomainError(f"{args.instance} is not an instance")
    issues = validate_instance(doc.payload, mm)
    if issues:
        out.write(_issue_lines(issues))
        return 1
    try:
        constraints = parse_constraints(_read(args.rules).decode("utf-8"))
    except OclSyntaxError as exc:
        raise DomainError(f"{args.rules}:{exc.line}:{exc.column}: {exc.message}") from None
    result = check_compliance(mm, doc.payload, constraints)
    out.write(json.dumps(result.to_json(), indent=2, ensure_ascii=False) + "\n")
    return 1 if args.strict and not result.compliant else 0


def cmd_eval(args: argparse.Namespace, out) -> int:
    suite = load_suite(args.suite)
    if args.backend == "mock":
        backend = MockBackend()
    else:
        settings = Settings.from_env()
        if not settings.backend_url or settings.backend_url == "mock":
            raise UsageError("--backend remote needs MBE_BACKEND_URL to point at a chat-completions endpoint")
        backend = RemoteBackend.from_settings(settings)
    report = run_suite(backend, suite)
    text = render_report([report], "json" if args.report == "json" else "markdown-table")
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return 0


def cmd_serve(args: argparse.Namespace, out) -> int:
    from .service import serve

    settings = Settings.from_env()
    if args.listen:
        settings = Settings(settings.backend_url, settings.backend_model, settings.backend_key,
                            settings.backend_timeout_s, args.listen)
    serve(settings)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbelens", description="Query, diff and check ccs-json models.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="validate a metamodel or instance document")
    p.add_argument("model")
    p.add_argument("--metamodel", help="metamodel for an instance (default: bundled by name)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("query", help="structural queries over a metamodel")
    p.add_argument("model")
    p.add_argument("--op", required=True, choices=sorted(QUERY_OPS))
    p.add_argument("--all", action="store_true", help="subclasses: include indirect ones")
    p.add_argument("args", nargs="*")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("diff", help="structural differences between two documents")
    p.add_argument("old")
    p.add_argument("new")
    p.add_argument("--metamodel")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("check", help="evaluate constraint rules on an instance")
    p.add_argument("metamodel")
    p.add_argument("instance")
    p.add_argument("rules")
    p.add_argument("--strict", action="store_true", help="exit 1 when a rule is violated")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("eval", help="run a question suite against a backend")
    p.add_argument("--suite", required=True)
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--report", choices=("md", "json"), default="md")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--listen", help="host:port (default: MBE_LISTEN or 127.0.0.1:8080)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        # query operands may follow --op, which plain parse_args rejects
        args, extra = parser.parse_known_args(argv)
        if extra:
            if args.command != "query" or any(e.startswith("-") for e in extra):
                parser.error("unrecognized arguments: " + " ".join(extra))
            args.args = list(args.args) + extra
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except UsageError as exc:
        err.write(parser.format_usage())
        err.write(f"error: {exc}\n")
        return 2
    except (DomainError, HarnessError, ModelError, BackendError) as exc:
        err.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
