"""Static checking of a problem against its domain, in the spirit of VAL."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

from .pddl import EQUALITY, ROOT_TYPE, Atom, Domain, Problem, is_subtype, is_variable


class IssueKind(str, enum.Enum):
    UNDEFINED_TYPE = "UndefinedType"
    UNDEFINED_PREDICATE = "UndefinedPredicate"
    ARITY_MISMATCH = "ArityMismatch"
    TYPE_MISMATCH = "TypeMismatch"
    UNDEFINED_OBJECT = "UndefinedObject"
    DUPLICATE_OBJECT = "DuplicateObject"
    UNGROUND_ATOM = "UngroundAtom"
    UNKNOWN_DOMAIN_REFERENCE = "UnknownDomainReference"


class Part(str, enum.Enum):
    OBJECTS = "objects"
    INIT = "init"
    GOAL = "goal"
    HEADER = "header"


class EmptyReport(ValueError):
    pass


@dataclass(frozen=True)
class ValidationIssue:
    kind: IssueKind
    part: Part
    message: str
    subject: str

    def render(self) -> str:
        return f"{self.kind.value} in :{self.part.value}: {self.message}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "part": self.part.value, "message": self.message, "subject": self.subject}


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def kinds(self) -> set[IssueKind]:
        return {i.kind for i in self.issues}

    def to_dict(self) -> dict:
        return {"ok": self.ok, "issues": [i.to_dict() for i in self.issues]}


def validate(domain: Domain, problem: Problem) -> ValidationReport:
    """Collect every issue in ``problem`` relative to ``domain``.

    Sections are checked in a fixed order (header, objects, init sorted,
    goal in order) so the report does not depend on how the input was
    written.
    """
    issues: list[ValidationIssue] = []
    if problem.domain_name != domain.name:
        issues.append(ValidationIssue(
            IssueKind.UNKNOWN_DOMAIN_REFERENCE, Part.HEADER,
            f"problem refers to domain {problem.domain_name} but the domain is {domain.name}",
            problem.domain_name,
        ))

    types: dict[str, str] = {}
    for obj in problem.objects:
        if obj.name in types:
            issues.append(ValidationIssue(
                IssueKind.DUPLICATE_OBJECT, Part.OBJECTS, f"object {obj.name} is declared more than once", obj.name))
            continue
        types[obj.name] = obj.type
        if not domain.has_type(obj.type):
            issues.append(ValidationIssue(
                IssueKind.UNDEFINED_TYPE, Part.OBJECTS, f"object {obj.name} has undefined type {obj.type}", obj.type))

    for atom in sorted(problem.init):
        issues.extend(_check_atom(domain, types, atom, Part.INIT))
    for lit in problem.goal:
        issues.extend(_check_atom(domain, types, lit.atom, Part.GOAL))
    return ValidationReport(tuple(issues))


def _check_atom(domain: Domain, types: dict[str, str], atom: Atom, part: Part) -> Iterable[ValidationIssue]:
    if not atom.is_ground:
        bad = " ".join(a for a in atom.args if is_variable(a))
        yield ValidationIssue(IssueKind.UNGROUND_ATOM, part, f"atom {atom} contains variable {bad}", str(atom))
    decl = domain.predicate(atom.predicate) if atom.predicate != EQUALITY else None
    if decl is None:
        yield ValidationIssue(
            IssueKind.UNDEFINED_PREDICATE, part, f"predicate {atom.predicate} in {atom} is not defined in the domain",
            atom.predicate)
    elif decl.arity != len(atom.args):
        yield ValidationIssue(
            IssueKind.ARITY_MISMATCH, part,
            f"{atom} has {len(atom.args)} argument(s) but {decl.name} takes {decl.arity}", str(atom))
        decl = None
    for i, arg in enumerate(atom.args):
        if is_variable(arg):
            continue
        if arg not in types:
            yield ValidationIssue(
                IssueKind.UNDEFINED_OBJECT, part, f"{arg} in {atom} is not listed in the objects", arg)
            continue
        if decl is None:
            continue
        want = decl.param_types[i]
        have = types[arg]
        if not domain.has_type(have) or not domain.has_type(want):
            continue  # undefined types are reported on the object / domain
        if want != ROOT_TYPE and not is_subtype(domain, have, want):
            yield ValidationIssue(
                IssueKind.TYPE_MISMATCH, part,
                f"{arg} in {atom} has type {have} but {decl.name} expects {want} at position {i + 1}", arg)


def render_error(report: ValidationReport) -> str:
    if report.ok:
        raise EmptyReport("nothing to render: the report has no issues")
    return "\n".join(issue.render() for issue in report.issues)
