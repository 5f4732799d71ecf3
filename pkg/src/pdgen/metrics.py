"""Generation-quality metrics: R_syntax, R_plan, R_part (O, I, G) and R_all."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .pddl import Domain, PDDLError, Problem, flatten_goal, parse_problem
from .planner import Outcome, PlannerError, SearchConfig, ground, solve, validate_plan
from .validator import validate

REPORT_SCHEMA = "pdgen.metrics/1"


class EmptyBatch(ValueError):
    pass


class EmptyGroundTruthPart(UserWarning):
    """The ground truth has nothing in this part; recall is taken as 1.0."""


class Part(str, enum.Enum):
    O = "O"
    I = "I"
    G = "G"


@dataclass(frozen=True)
class EvalItem:
    case_id: str
    generated_text: str
    ground_truth: Problem
    domain: Domain

    @classmethod
    def from_record(cls, record, ground_truth: Problem, domain: Domain) -> "EvalItem":
        """Build from a ``GenerationRecord`` or its JSON dict."""
        if isinstance(record, dict):
            attempts = record.get("attempts") or []
            text = attempts[-1]["problem_text"] if attempts else ""
            return cls(record["input"]["case_id"], text, ground_truth, domain)
        return cls(record.case_id, record.final_problem_text, ground_truth, domain)


def _part_set(problem: Problem, part: Part) -> frozenset:
    if part is Part.O:
        return frozenset(o.name.lower() for o in problem.objects)
    if part is Part.I:
        return frozenset(problem.init)
    return flatten_goal(problem)


def recall_part(generated: Problem, ground_truth: Problem, part: Part | str) -> float:
    """Share of the ground-truth part found in the generated one (types ignored for objects)."""
    part = Part(part)
    want = _part_set(ground_truth, part)
    if not want:
        warnings.warn(f"ground truth {ground_truth.name} has an empty {part.value} part", EmptyGroundTruthPart,
                      stacklevel=2)
        return 1.0
    return len(want & _part_set(generated, part)) / len(want)


def _covers(generated: Problem, ground_truth: Problem) -> bool:
    return all(_part_set(ground_truth, p) <= _part_set(generated, p) for p in Part)


@dataclass(frozen=True)
class ItemScore:
    case_id: str
    parsed: bool
    syntax_ok: bool
    plan_ok: bool
    outcome: str  # solved / unsolvable / timeout / invalid-plan / not-checked
    recall: dict = field(default_factory=dict)
    complete: bool = False
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "parsed": self.parsed,
            "syntax_ok": self.syntax_ok,
            "plan_ok": self.plan_ok,
            "outcome": self.outcome,
            "recall": {k: self.recall.get(k, 0.0) for k in ("O", "I", "G")},
            "all": self.complete,
            "detail": self.detail,
        }


def score_item(item: EvalItem, search: SearchConfig = SearchConfig()) -> ItemScore:
    try:
        gen = parse_problem(item.generated_text)
    except PDDLError as exc:
        return ItemScore(item.case_id, False, False, False, "not-checked",
                         {p.value: 0.0 for p in Part}, False, f"parse error: {exc}")
    recall = {p.value: recall_part(gen, item.ground_truth, p) for p in Part}
    complete = _covers(gen, item.ground_truth)
    report = validate(item.domain, gen)
    if not report.ok:
        return ItemScore(item.case_id, True, False, False, "not-checked", recall, complete,
                         f"{len(report.issues)} validation issue(s)")
    result = solve(ground(item.domain, gen), search)
    if not result.solved:
        return ItemScore(item.case_id, True, True, False, result.outcome.value, recall, complete)
    try:
        check = validate_plan(item.domain, gen, result.plan)
    except PlannerError as exc:
        return ItemScore(item.case_id, True, True, False, "invalid-plan", recall, complete, str(exc))
    if not check.valid:
        return ItemScore(item.case_id, True, True, False, "invalid-plan", recall, complete, check.message)
    return ItemScore(item.case_id, True, True, True, Outcome.SOLVED.value, recall, complete)


Scored = Union[EvalItem, ItemScore]


def _scores(batch: Iterable[Scored], search: SearchConfig) -> list[ItemScore]:
    out = [b if isinstance(b, ItemScore) else score_item(b, search) for b in batch]
    if not out:
        raise EmptyBatch("cannot compute a ratio over an empty batch")
    return out


def r_syntax(batch: Sequence[Scored], search: SearchConfig = SearchConfig()) -> float:
    s = _scores(batch, search)
    return sum(x.syntax_ok for x in s) / len(s)


def r_plan(batch: Sequence[Scored], search: SearchConfig = SearchConfig()) -> float:
    s = _scores(batch, search)
    return sum(x.plan_ok for x in s) / len(s)


def r_part(batch: Sequence[Scored], part: Part | str, search: SearchConfig = SearchConfig()) -> float:
    """Macro average of per-item recall; unparsable items count as 0."""
    key = Part(part).value
    s = _scores(batch, search)
    return sum(x.recall.get(key, 0.0) for x in s) / len(s)


def r_all(batch: Sequence[Scored], search: SearchConfig = SearchConfig()) -> float:
    s = _scores(batch, search)
    return sum(x.complete for x in s) / len(s)


@dataclass(frozen=True)
class MetricsReport:
    r_syntax: float
    r_plan: float
    r_part: dict
    r_all: float
    per_item: tuple[ItemScore, ...] = ()

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "n": len(self.per_item),
            "r_syntax": self.r_syntax,
            "r_plan": self.r_plan,
            "r_part": dict(self.r_part),
            "r_all": self.r_all,
            "items": [x.to_dict() for x in self.per_item],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self, label: str = "") -> str:
        head = ["", "R_syntax", "R_plan", "R_part O", "R_part I", "R_part G", "R_all"]
        row = [label or f"n={len(self.per_item)}", self.r_syntax, self.r_plan,
               self.r_part["O"], self.r_part["I"], self.r_part["G"], self.r_all]
        cells = [row[0]] + [f"{v:.2f}" for v in row[1:]]
        widths = [max(len(h), len(c)) for h, c in zip(head, cells)]
        fmt = lambda xs: " | ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(xs, widths)))
        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(head), rule, fmt(cells)])


def evaluate(batch: Sequence[Scored], search: SearchConfig = SearchConfig()) -> MetricsReport:
    s = _scores(batch, search)
    return MetricsReport(
        r_syntax(s), r_plan(s), {p.value: r_part(s, p) for p in Part}, r_all(s), tuple(s),
    )
