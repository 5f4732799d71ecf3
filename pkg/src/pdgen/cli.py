"""Command-line entry point: ``pdgen <command> ...``.

Exit codes: 0 success, 1 validation or generation failure, 2 unsolvable,
3 timeout or backend failure, 4 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .backends import BackendConfig, BackendError, Mode, ModelClient
from .dataset import (
    DatasetError,
    GroundTruthUpstream,
    load_bundle,
    scaffold_bundle,
    verify_bundle,
    write_bundle,
)
from .metrics import EvalItem, evaluate
from .pddl import PDDLError, parse_domain, parse_plan, parse_problem, print_domain, print_problem
from .pipeline import GenerationMode, Pipeline, PipelineConfig
from .planner import (
    Algorithm,
    Heuristic,
    Outcome,
    PlannerError,
    SearchConfig,
    ground,
    render_planner_error,
    solve,
    validate_plan,
)
from .validator import render_error, validate

log = logging.getLogger("pdgen")

OUTPUT_SCHEMA = "pdgen.cli/1"
EXIT_OK, EXIT_FAIL, EXIT_UNSOLVABLE, EXIT_TIMEOUT, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*(ms|s|m|h)?\s*$")
_UNITS = {"ms": 1e-3, "s": 1.0, "m": 60.0, "h": 3600.0, None: 1.0}


def parse_duration(text: str) -> float:
    """``"1ms"``, ``"10s"``, ``"2m"`` or a bare number of seconds."""
    m = _DURATION_RE.match(str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"not a duration: {text!r} (try 10s or 500ms)")
    value = float(m.group(1)) * _UNITS[m.group(2)]
    if value <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return value


class Context:
    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config
        self.structured = args.output == "structured"

    def opt(self, name: str, default: Any = None) -> Any:
        """Flag value, else config-file value, else ``default``."""
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        return self.config.get(name, default)

    def say(self, text: str = "") -> None:
        if not self.args.quiet and not self.structured:
            print(text)

    def emit(self, command: str, payload: dict) -> None:
        if self.structured:
            print(json.dumps({"schema": OUTPUT_SCHEMA, "command": command, **payload}, indent=2, sort_keys=True))


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _search(ctx: Context) -> SearchConfig:
    timeout = ctx.opt("timeout", 30.0)
    if isinstance(timeout, str):
        timeout = parse_duration(timeout)
    return SearchConfig(
        Algorithm(ctx.opt("algorithm", "gbfs")),
        Heuristic(ctx.opt("heuristic", "hadd")),
        float(timeout),
        int(ctx.opt("max_expansions", 5_000_000)),
    )


def _load_pair(domain_path: str, problem_path: str):
    return parse_domain(_read(domain_path)), parse_problem(_read(problem_path))


# --------------------------------------------------------------------------
# Commands


def cmd_parse(ctx: Context) -> int:
    text = _read(ctx.args.file)
    kind = ctx.args.kind
    if kind == "auto":
        kind = "domain" if re.search(r"\(\s*domain\b", text[:2000], re.I) and not re.search(
            r"\(\s*problem\b", text[:2000], re.I) else "problem"
    try:
        out = print_domain(parse_domain(text)) if kind == "domain" else print_problem(parse_problem(text))
    except PDDLError as exc:
        ctx.emit("parse", {"ok": False, "error": str(exc)})
        if not ctx.structured:
            print(f"{ctx.args.file}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    ctx.emit("parse", {"ok": True, "kind": kind, "text": out})
    if not ctx.structured:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_validate(ctx: Context) -> int:
    domain, problem = _load_pair(ctx.args.domain, ctx.args.problem)
    report = validate(domain, problem)
    ctx.emit("validate", report.to_dict())
    if not report.ok:
        if not ctx.structured:
            print(render_error(report))
        return EXIT_FAIL
    ctx.say("ok")
    return EXIT_OK


def cmd_plan(ctx: Context) -> int:
    domain, problem = _load_pair(ctx.args.domain, ctx.args.problem)
    report = validate(domain, problem)
    if not report.ok:
        ctx.emit("plan", {"validation": report.to_dict()})
        if not ctx.structured:
            print(render_error(report), file=sys.stderr)
        return EXIT_FAIL
    result = solve(ground(domain, problem), _search(ctx))
    payload = result.to_dict()
    payload["elapsed"] = round(result.elapsed, 6)
    ctx.emit("plan", payload)
    if result.solved:
        text = result.plan.to_text()
        if ctx.args.plan_out:
            Path(ctx.args.plan_out).write_text(text, encoding="utf-8")
        if not ctx.structured:
            sys.stdout.write(text)
        log.info("%d steps, %d expansions, %.3fs", len(result.plan), result.expansions, result.elapsed)
        return EXIT_OK
    if not ctx.structured:
        print(render_planner_error(result), file=sys.stderr)
    return EXIT_TIMEOUT if result.outcome is Outcome.TIMEOUT else EXIT_UNSOLVABLE


def cmd_check_plan(ctx: Context) -> int:
    domain, problem = _load_pair(ctx.args.domain, ctx.args.problem)
    plan = parse_plan(_read(ctx.args.plan))
    try:
        check = validate_plan(domain, problem, plan)
    except PlannerError as exc:
        ctx.emit("check-plan", {"valid": False, "message": str(exc)})
        if not ctx.structured:
            print(exc, file=sys.stderr)
        return EXIT_FAIL
    ctx.emit("check-plan", {"valid": check.valid, "failed_step": check.failed_step, "message": check.message})
    if check.valid:
        ctx.say(f"valid plan of {len(plan)} step(s)")
        return EXIT_OK
    if not ctx.structured:
        print(check.message)
    return EXIT_FAIL


def _pipeline_config(ctx: Context) -> PipelineConfig:
    cot = ctx.opt("use_cot", True)
    if ctx.args.no_cot:
        cot = False
    return PipelineConfig(
        k_examples=int(ctx.opt("k_examples", 3)),
        max_corrections=int(ctx.opt("max_corrections", 2)),
        use_cot=bool(cot),
        mode=GenerationMode(ctx.opt("mode", "modular")),
        example_selector_seed=ctx.opt("example_selector_seed"),
        combination_index=int(ctx.opt("combination_index", 0)),
        score_threshold=float(ctx.opt("score_threshold", 0.3)),
        iou_dedup=float(ctx.opt("iou_dedup", 0.9)),
    )


def _backend_config(ctx: Context, bundle, default_mode: str) -> BackendConfig:
    mode = Mode(ctx.opt("backend_mode", default_mode))
    fixture_dir = ctx.opt("fixture_dir") or bundle.fixture_dir
    return BackendConfig(
        mode=mode,
        endpoint=ctx.opt("endpoint", "") or "",
        auth_env=ctx.opt("auth_env", "PDGEN_API_KEY"),
        fixture_dir=Path(fixture_dir) if fixture_dir and mode in (Mode.REPLAY, Mode.RECORD) else None,
        request_timeout=float(ctx.opt("request_timeout", 60.0)),
    )


def _bundle(path: str):
    try:
        return load_bundle(path)
    except DatasetError as exc:
        raise UsageError(str(exc)) from exc


def _run_case(ctx: Context, bundle, case_id: str, client: ModelClient):
    case = bundle.case(case_id)
    pipeline = Pipeline(bundle.domain, bundle.knowledge, client, _pipeline_config(ctx), _search(ctx))
    return pipeline.generate(case.instruction, case.scene, case.id)


def cmd_generate(ctx: Context) -> int:
    bundle = _bundle(ctx.args.bundle)
    try:
        bundle.case(ctx.args.case)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    backend = _backend_config(ctx, bundle, "replay")
    if backend.mode is Mode.SCRIPTED:
        raise UsageError("scripted mode is only available from the Python API")
    record = _run_case(ctx, bundle, ctx.args.case, ModelClient(backend))
    out = Path(ctx.opt("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{ctx.args.case}.record.json").write_text(record.to_json(), encoding="utf-8")
    (out / f"{ctx.args.case}.pddl").write_text(record.final_problem_text, encoding="utf-8")
    ctx.emit("generate", {"case_id": ctx.args.case, "success": record.success, "attempts": len(record.attempts),
                          "aborted": record.aborted, "record": str(out / f"{ctx.args.case}.record.json")})
    if record.aborted:
        if not ctx.structured:
            print(f"generation aborted: {record.aborted}", file=sys.stderr)
        return EXIT_TIMEOUT
    ctx.say(f"{ctx.args.case}: {'success' if record.success else 'failed'} after {len(record.attempts)} attempt(s)")
    return EXIT_OK if record.success else EXIT_FAIL


def cmd_record(ctx: Context) -> int:
    bundle = _bundle(ctx.args.bundle)
    backend = _backend_config(ctx, bundle, "record")
    if backend.mode is not Mode.RECORD:
        raise UsageError("the record command always runs in record mode")
    if backend.fixture_dir is None:
        raise UsageError("no fixture directory")
    ids = ctx.args.cases or [c.id for c in bundle.cases]
    failed = 0
    for cid in ids:
        try:
            case = bundle.case(cid)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from exc
        upstream = GroundTruthUpstream(case) if ctx.args.upstream == "ground-truth" else None
        client = ModelClient(backend, upstream=upstream, recorded_at=ctx.args.recorded_at)
        record = _run_case(ctx, bundle, cid, client)
        failed += not record.success
        ctx.say(f"{cid}: {len(client.calls.chat)} chat, {len(client.calls.detect)} detect, "
                f"{len(client.calls.caption)} caption call(s) recorded; success={record.success}")
        if record.aborted:
            print(f"{cid}: aborted: {record.aborted}", file=sys.stderr)
            return EXIT_TIMEOUT
    ctx.emit("record", {"cases": ids, "fixture_dir": str(backend.fixture_dir), "failed": failed})
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_evaluate(ctx: Context) -> int:
    bundle = _bundle(ctx.args.bundle)
    records_dir = Path(ctx.args.records)
    files = sorted(records_dir.glob("*.record.json")) if records_dir.is_dir() else []
    if not files:
        raise UsageError(f"no *.record.json files in {records_dir}")
    items = []
    for f in files:
        try:
            data = json.loads(f.read_text(encoding="utf-8"))
            cid = data["input"]["case_id"]
            items.append(EvalItem.from_record(data, bundle.case(cid).ground_truth, bundle.domain))
        except (ValueError, KeyError) as exc:
            raise UsageError(f"{f}: not a usable generation record ({exc.args[0] if exc.args else exc})") from exc
    report = evaluate(items, _search(ctx))
    if ctx.structured:
        print(report.to_json(), end="")
    elif not ctx.args.quiet:
        print(report.table(bundle.domain.name))
    return EXIT_OK


def cmd_scaffold(ctx: Context) -> int:
    try:
        bundle = scaffold_bundle(ctx.args.domain, ctx.args.count, ctx.args.seed, ctx.args.size)
    except (DatasetError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    root = write_bundle(bundle, ctx.args.out)
    report = verify_bundle(load_bundle(root), _search(ctx))
    ctx.emit("scaffold", {"out": str(root), "cases": [c.id for c in bundle.cases], "verified": report.ok})
    ctx.say(report.render())
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_verify(ctx: Context) -> int:
    bundle = _bundle(ctx.args.bundle)
    report = verify_bundle(bundle, _search(ctx))
    ctx.emit("verify", {"domain": report.domain, "checked": report.checked, "ok": report.ok,
                        "failures": [vars(f) for f in report.failures], "warnings": list(report.warnings),
                        "plan_lengths": report.plan_lengths})
    if not ctx.structured and (not ctx.args.quiet or not report.ok):
        print(report.render())
    return EXIT_OK if report.ok else EXIT_FAIL


# --------------------------------------------------------------------------
# Argument parsing


def _search_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search")
    g.add_argument("--algorithm", choices=[a.value for a in Algorithm], help="search algorithm (default gbfs)")
    g.add_argument("--heuristic", choices=[h.value for h in Heuristic], help="heuristic (default hadd)")
    g.add_argument("--timeout", type=parse_duration, help="search time limit, e.g. 10s or 500ms (default 30s)")
    g.add_argument("--max-expansions", type=int, help="expansion limit (default 5000000)")


def _generation_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generation")
    g.add_argument("--mode", choices=[m.value for m in GenerationMode], help="modular estimators or whole problem")
    g.add_argument("--no-cot", action="store_true", help="skip the error explanation step")
    g.add_argument("--max-corrections", type=int, help="refinement rounds after the first attempt (default 2)")
    g.add_argument("--k-examples", type=int, help="few-shot examples per prompt (default 3)")
    g.add_argument("--combination-index", type=int, help="which example combination to use (default 0)")
    g.add_argument("--example-selector-seed", type=int, help="seeded offset into the example combinations")
    g.add_argument("--score-threshold", type=float, help="minimum detection score (default 0.3)")
    b = p.add_argument_group("backends")
    b.add_argument("--backend-mode", choices=[m.value for m in Mode], help="live, replay, record or scripted")
    b.add_argument("--fixture-dir", help="fixture directory (default BUNDLE/fixtures)")
    b.add_argument("--endpoint", help="base URL of the model service")
    b.add_argument("--auth-env", help="environment variable holding the API key (default PDGEN_API_KEY)")
    b.add_argument("--request-timeout", type=parse_duration, help="per-request timeout (default 60s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdgen", description="PDDL problem generation, planning and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--output", choices=["human", "structured"], default="human",
                        help=f"human text or JSON (schema {OUTPUT_SCHEMA})")
    parser.add_argument("--config", help="JSON file with default option values; flags override it")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true", help="print only failures")
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("parse", help="parse a domain or problem file and print it canonically")
    p.add_argument("file")
    p.add_argument("--kind", choices=["auto", "domain", "problem"], default="auto")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="check a problem against its domain")
    p.add_argument("domain")
    p.add_argument("problem")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="search for a plan")
    p.add_argument("domain")
    p.add_argument("problem")
    p.add_argument("--plan-out", help="also write the plan to this file")
    _search_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("check-plan", help="simulate a plan file")
    p.add_argument("domain")
    p.add_argument("problem")
    p.add_argument("plan")
    p.set_defaults(func=cmd_check_plan)

    p = sub.add_parser("generate", help="generate the problem for one bundle case")
    p.add_argument("bundle")
    p.add_argument("case")
    p.add_argument("--out", help="directory for the record and problem files (default runs)")
    _generation_flags(p)
    _search_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("record", help="run generation in record mode and store replay fixtures")
    p.add_argument("bundle")
    p.add_argument("cases", nargs="*", help="case ids (default all)")
    p.add_argument("--upstream", choices=["live", "ground-truth"], default="live",
                   help="answer from the live service or from each case's ground truth")
    p.add_argument("--recorded-at", help="timestamp stored in new fixtures (default now)")
    _generation_flags(p)
    _search_flags(p)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("evaluate", help="score generation records against a bundle")
    p.add_argument("bundle")
    p.add_argument("records")
    _search_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scaffold", help="write a bundle of generated cases")
    p.add_argument("domain", choices=["blocksworld", "hanoi"])
    p.add_argument("--size", type=int, required=True, help="blocks (2-7) or disks (1-10)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _search_flags(p)
    p.set_defaults(func=cmd_scaffold)

    p = sub.add_parser("verify", help="check that every case of a bundle validates and solves")
    p.add_argument("bundle")
    _search_flags(p)
    p.set_defaults(func=cmd_verify)
    return parser


def _config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(_read(path))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        ctx = Context(args, _config_file(args.config))
        return args.func(ctx)
    except UsageError as exc:
        print(f"pdgen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PDDLError as exc:
        print(f"pdgen: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except BackendError as exc:
        print(f"pdgen: backend failure: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"pdgen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pdgen: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
