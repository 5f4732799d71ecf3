"""Abstract syntax, reader and canonical printer for STRIPS+typing PDDL.

The parser is deliberately domain-agnostic: a problem is read without
looking at its domain, so semantically broken text (undefined objects,
wrong arities) still parses and can be reported on by :mod:`pdgen.validator`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

ROOT_TYPE = "object"
EQUALITY = "="

_NAME_RE = re.compile(r"^[a-z][a-z0-9_\-]*$")


class PDDLError(Exception):
    """Base class for everything raised while reading PDDL."""


class ParseError(PDDLError):
    def __init__(self, message: str, line: int = 0, column: int = 0, expected: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{where}{message}")


class UnsupportedFeature(PDDLError):
    def __init__(self, feature: str, line: int = 0, column: int = 0):
        self.feature = feature
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{where}unsupported PDDL feature {feature}")


class UnknownType(PDDLError):
    pass


def is_name(text: str) -> bool:
    return bool(_NAME_RE.match(text))


def is_variable(text: str) -> bool:
    return text.startswith("?")


# --------------------------------------------------------------------------
# Syntax tree


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predicate", self.predicate.lower())
        object.__setattr__(self, "args", tuple(a.lower() for a in self.args))

    @property
    def is_ground(self) -> bool:
        return not any(is_variable(a) for a in self.args)

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


@dataclass(frozen=True, order=True)
class Literal:
    atom: Atom
    negated: bool = False

    def __str__(self) -> str:
        return f"(not {self.atom})" if self.negated else str(self.atom)


@dataclass(frozen=True)
class Condition:
    """A conjunction of literals; duplicates collapse, order is kept."""

    literals: tuple[Literal, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(dict.fromkeys(self.literals)))

    @classmethod
    def of(cls, *atoms: Atom) -> "Condition":
        return cls(tuple(Literal(a) for a in atoms))

    def __iter__(self) -> Iterator[Literal]:
        return iter(self.literals)

    def __len__(self) -> int:
        return len(self.literals)

    @property
    def positive(self) -> tuple[Atom, ...]:
        return tuple(l.atom for l in self.literals if not l.negated)

    @property
    def negative(self) -> tuple[Atom, ...]:
        return tuple(l.atom for l in self.literals if l.negated)


@dataclass(frozen=True)
class TypedObject:
    name: str
    type: str = ROOT_TYPE

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower())
        object.__setattr__(self, "type", self.type.lower())


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    params: tuple[tuple[str, str], ...] = ()

    @property
    def arity(self) -> int:
        return len(self.params)

    @property
    def param_types(self) -> tuple[str, ...]:
        return tuple(t for _, t in self.params)


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]
    precondition: Condition
    add: tuple[Atom, ...]
    delete: tuple[Atom, ...]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.params)


@dataclass(frozen=True)
class Domain:
    name: str
    requirements: frozenset[str] = frozenset()
    # type -> supertype, in declaration order; the root type is implicit
    types: dict[str, str] = field(default_factory=dict)
    predicates: tuple[PredicateDecl, ...] = ()
    actions: tuple[ActionSchema, ...] = ()

    def predicate(self, name: str) -> PredicateDecl | None:
        for p in self.predicates:
            if p.name == name:
                return p
        return None

    def action(self, name: str) -> ActionSchema | None:
        for a in self.actions:
            if a.name == name:
                return a
        return None

    def has_type(self, name: str) -> bool:
        return name == ROOT_TYPE or name in self.types

    def static_predicates(self) -> frozenset[str]:
        changed = {a.predicate for act in self.actions for a in act.add + act.delete}
        return frozenset(p.name for p in self.predicates if p.name not in changed)


@dataclass(frozen=True)
class Problem:
    name: str
    domain_name: str
    objects: tuple[TypedObject, ...] = ()
    init: frozenset[Atom] = frozenset()
    goal: Condition = Condition()

    def object_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.objects)

    def object_types(self) -> dict[str, str]:
        return {o.name: o.type for o in self.objects}


@dataclass(frozen=True)
class GroundAction:
    schema: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "schema", self.schema.lower())
        object.__setattr__(self, "args", tuple(a.lower() for a in self.args))

    def __str__(self) -> str:
        return "(" + " ".join((self.schema,) + self.args) + ")"


@dataclass(frozen=True)
class Plan:
    steps: tuple[GroundAction, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[GroundAction]:
        return iter(self.steps)

    def to_text(self) -> str:
        return "".join(f"{s}\n" for s in self.steps)


# --------------------------------------------------------------------------
# S-expression reader


class Token(str):
    """A string that remembers where it came from."""

    line: int
    column: int

    def __new__(cls, text: str, line: int, column: int):
        tok = super().__new__(cls, text)
        tok.line = line
        tok.column = column
        return tok


class SList(list):
    line: int = 0
    column: int = 0


_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def _strip_comments(text: str) -> str:
    # keep line structure intact so positions stay meaningful
    return "\n".join(line.split(";", 1)[0] for line in text.split("\n"))


def tokenize(text: str) -> list[Token]:
    tokens = []
    for lineno, line in enumerate(_strip_comments(text).split("\n"), start=1):
        for m in _TOKEN_RE.finditer(line):
            tokens.append(Token(m.group().lower(), lineno, m.start() + 1))
    return tokens


def read_sexpr(text: str) -> SList:
    """Read exactly one s-expression from ``text``."""
    tokens = tokenize(text)
    if not tokens:
        raise ParseError("empty input", 1, 1, expected="(")
    pos = 0

    def read() -> SList | Token:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'", tok.line, tok.column, expected="( or atom")
        if tok != "(":
            return tok
        node = SList()
        node.line, node.column = tok.line, tok.column
        while True:
            if pos >= len(tokens):
                raise ParseError("unbalanced '(' never closed", tok.line, tok.column, expected=")")
            if tokens[pos] == ")":
                pos += 1
                return node
            node.append(read())

    first = tokens[0]
    if first != "(":
        raise ParseError(f"expected '(' but found {first!r}", first.line, first.column, expected="(")
    expr = read()
    if pos < len(tokens):
        extra = tokens[pos]
        raise ParseError(f"unexpected trailing {extra!r}", extra.line, extra.column, expected="end of input")
    return expr


def _pos(node) -> tuple[int, int]:
    return getattr(node, "line", 0), getattr(node, "column", 0)


def _fail(node, message: str, expected: str = "") -> ParseError:
    return ParseError(message, *_pos(node), expected=expected)


def _expect_list(node, what: str) -> SList:
    if not isinstance(node, list):
        raise _fail(node, f"expected {what}, found {node!r}", expected=what)
    return node


def _expect_name(node, what: str = "identifier") -> str:
    if isinstance(node, list) or not is_name(node):
        raise _fail(node, f"expected {what}, found {node!r}", expected=what)
    return str(node)


def _expect_term(node) -> str:
    if isinstance(node, list):
        raise _fail(node, "expected a term, found a list", expected="term")
    text = str(node)
    if is_variable(text):
        if not is_name(text[1:]):
            raise _fail(node, f"malformed variable {text!r}", expected="variable")
        return text
    return _expect_name(node, "term")


# --------------------------------------------------------------------------
# Shared pieces


_UNSUPPORTED_FORMULAS = {"or", "exists", "forall", "imply", "when", "increase", "decrease", "assign"}
_UNSUPPORTED_SECTIONS = {
    ":functions", ":constants", ":derived", ":durative-action", ":constraints", ":metric",
    ":axiom", ":process", ":event",
}


def _typed_list(items: Sequence, *, variables: bool) -> list[tuple[str, str]]:
    """Parse ``a b - t c - u d`` into (name, type) pairs; untyped names get ``object``."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, list):
            if item and item[0] == "either":
                raise UnsupportedFeature("either-types", *_pos(item))
            raise _fail(item, "unexpected list in typed list", expected="name")
        if item == "-":
            if i + 1 >= len(items) or not pending:
                raise _fail(item, "dangling '-' in typed list", expected="type name")
            type_node = items[i + 1]
            if isinstance(type_node, list) and type_node and type_node[0] == "either":
                raise UnsupportedFeature("either-types", *_pos(type_node))
            tname = _expect_name(type_node, "type name")
            out.extend((n, tname) for n in pending)
            pending = []
            i += 2
            continue
        if variables:
            if not is_variable(item):
                raise _fail(item, f"expected a variable, found {item!r}", expected="variable")
            _expect_term(item)
            pending.append(str(item))
        else:
            pending.append(_expect_name(item))
        i += 1
    out.extend((n, ROOT_TYPE) for n in pending)
    return out


def _parse_atom(node) -> Atom:
    node = _expect_list(node, "atom")
    if not node:
        raise _fail(node, "empty atom", expected="predicate")
    head = node[0]
    if isinstance(head, list):
        raise _fail(head, "expected predicate name", expected="predicate")
    if head in _UNSUPPORTED_FORMULAS:
        raise UnsupportedFeature(str(head), *_pos(node))
    if head == "and" or head == "not":
        raise _fail(node, f"unexpected {head!r} where an atom belongs", expected="atom")
    pred = str(head) if head == EQUALITY else _expect_name(head, "predicate")
    args = [_expect_term(a) for a in node[1:]]
    return Atom(pred, tuple(args))


def _parse_literal(node, *, allow_negation: bool) -> Literal:
    node = _expect_list(node, "literal")
    if node and node[0] == "not":
        if not allow_negation:
            raise UnsupportedFeature("negative-goals", *_pos(node))
        if len(node) != 2:
            raise _fail(node, "'not' takes exactly one atom", expected="atom")
        return Literal(_parse_atom(node[1]), True)
    return Literal(_parse_atom(node))


def _conjuncts(node) -> Iterator:
    """Yield the leaves of nested ``and`` forms."""
    node = _expect_list(node, "condition")
    if node and node[0] == "and":
        for child in node[1:]:
            yield from _conjuncts(child)
    else:
        yield node


def _parse_condition(node, *, allow_negation: bool) -> Condition:
    node = _expect_list(node, "condition")
    if not node:
        return Condition()
    return Condition(tuple(_parse_literal(c, allow_negation=allow_negation) for c in _conjuncts(node)))


def _sections(form: SList, start: int) -> Iterator[tuple[str, SList]]:
    for sec in form[start:]:
        sec = _expect_list(sec, "section")
        if not sec or isinstance(sec[0], list):
            raise _fail(sec, "section without a keyword", expected="section keyword")
        yield str(sec[0]), sec


def _header(expr: SList, kind: str) -> str:
    if len(expr) < 2 or expr[0] != "define":
        raise _fail(expr, "expected (define ...)", expected="define")
    head = _expect_list(expr[1], f"({kind} <name>)")
    if len(head) != 2 or head[0] != kind:
        raise _fail(head, f"expected ({kind} <name>)", expected=kind)
    return _expect_name(head[1], f"{kind} name")


# --------------------------------------------------------------------------
# Domains


def parse_domain(text: str) -> Domain:
    expr = read_sexpr(text)
    name = _header(expr, "domain")
    requirements: set[str] = set()
    types: dict[str, str] = {}
    predicates: list[PredicateDecl] = []
    actions: list[ActionSchema] = []
    for key, sec in _sections(expr, 2):
        if key == ":requirements":
            for tag in sec[1:]:
                if isinstance(tag, list) or not tag.startswith(":"):
                    raise _fail(tag, f"bad requirement {tag!r}", expected="requirement tag")
                requirements.add(str(tag))
        elif key == ":types":
            for tname, parent in _typed_list(sec[1:], variables=False):
                if tname == ROOT_TYPE:
                    continue
                if tname in types and types[tname] != parent:
                    raise _fail(sec, f"type {tname!r} declared twice", expected="unique type")
                types[tname] = parent
        elif key == ":predicates":
            for p in sec[1:]:
                p = _expect_list(p, "predicate declaration")
                if not p:
                    raise _fail(p, "empty predicate declaration", expected="predicate")
                pname = _expect_name(p[0], "predicate name")
                params = tuple(_typed_list(p[1:], variables=True))
                if len({v for v, _ in params}) != len(params):
                    raise _fail(p, f"repeated variable in predicate {pname!r}", expected="unique variables")
                if any(d.name == pname for d in predicates):
                    raise _fail(p, f"predicate {pname!r} declared twice", expected="unique predicate")
                predicates.append(PredicateDecl(pname, params))
        elif key == ":action":
            act = _parse_action(sec)
            if any(a.name == act.name for a in actions):
                raise _fail(sec, f"action {act.name!r} declared twice", expected="unique action")
            actions.append(act)
        elif key in _UNSUPPORTED_SECTIONS:
            raise UnsupportedFeature(key, *_pos(sec))
        else:
            raise _fail(sec, f"unknown domain section {key!r}", expected="domain section")
    # parents that are never declared themselves hang off the root
    for parent in list(types.values()):
        if parent != ROOT_TYPE and parent not in types:
            types[parent] = ROOT_TYPE
    _check_type_forest(types, expr)
    return Domain(name, frozenset(requirements), types, tuple(predicates), tuple(actions))


def _check_type_forest(types: dict[str, str], where) -> None:
    for start in types:
        seen = {start}
        t = types[start]
        while t != ROOT_TYPE:
            if t in seen:
                raise _fail(where, f"cyclic type hierarchy through {start!r}", expected="type forest")
            seen.add(t)
            t = types.get(t, ROOT_TYPE)


def _parse_action(sec: SList) -> ActionSchema:
    if len(sec) < 2:
        raise _fail(sec, "action without a name", expected="action name")
    name = _expect_name(sec[1], "action name")
    params: tuple[tuple[str, str], ...] = ()
    pre = Condition()
    add: list[Atom] = []
    delete: list[Atom] = []
    rest = sec[2:]
    if len(rest) % 2:
        raise _fail(sec, f"action {name!r} has an odd number of keyword items", expected="keyword/value pairs")
    for key, value in zip(rest[::2], rest[1::2]):
        if key == ":parameters":
            params = tuple(_typed_list(_expect_list(value, "parameter list"), variables=True))
            if len({v for v, _ in params}) != len(params):
                raise _fail(value, f"repeated parameter in action {name!r}", expected="unique parameters")
        elif key == ":precondition":
            pre = _parse_condition(value, allow_negation=True)
        elif key == ":effect":
            for lit in _parse_condition(value, allow_negation=True):
                (delete if lit.negated else add).append(lit.atom)
        else:
            raise _fail(key, f"unknown action keyword {key!r}", expected=":parameters/:precondition/:effect")
    declared = {v for v, _ in params}
    for atom in list(pre.positive) + list(pre.negative) + add + delete:
        for arg in atom.args:
            if is_variable(arg) and arg not in declared:
                raise _fail(sec, f"variable {arg} in action {name!r} is not a parameter", expected="declared variable")
    add = list(dict.fromkeys(add))
    delete = list(dict.fromkeys(delete))
    both = set(add) & set(delete)
    if both:
        clash = ", ".join(sorted(map(str, both)))
        raise _fail(sec, f"action {name!r} both adds and deletes {clash}", expected="disjoint effects")
    return ActionSchema(name, params, pre, tuple(add), tuple(delete))


# --------------------------------------------------------------------------
# Problems


def parse_problem(text: str) -> Problem:
    expr = read_sexpr(text)
    name = _header(expr, "problem")
    domain_name = ""
    objects: list[TypedObject] = []
    init: set[Atom] = set()
    goal = Condition()
    for key, sec in _sections(expr, 2):
        if key == ":domain":
            if len(sec) != 2:
                raise _fail(sec, "expected (:domain <name>)", expected="domain name")
            domain_name = _expect_name(sec[1], "domain name")
        elif key == ":requirements":
            continue
        elif key == ":objects":
            objects.extend(TypedObject(n, t) for n, t in _typed_list(sec[1:], variables=False))
        elif key == ":init":
            init.update(parse_init_body(sec[1:]))
        elif key == ":goal":
            if len(sec) != 2:
                raise _fail(sec, "expected exactly one goal formula", expected="goal formula")
            goal = _parse_condition(sec[1], allow_negation=False)
        elif key in _UNSUPPORTED_SECTIONS:
            raise UnsupportedFeature(key, *_pos(sec))
        else:
            raise _fail(sec, f"unknown problem section {key!r}", expected="problem section")
    if not domain_name:
        raise _fail(expr, "problem does not name its domain", expected="(:domain ...)")
    return Problem(name, domain_name, tuple(objects), frozenset(init), goal)


def parse_init_body(items: Iterable) -> list[Atom]:
    out = []
    for item in items:
        item = _expect_list(item, "init atom")
        if item and item[0] == "not":
            raise _fail(item, "negative literal in :init", expected="atom")
        if item and item[0] == EQUALITY:
            raise UnsupportedFeature("numeric-fluents", *_pos(item))
        out.append(_parse_atom(item))
    return out


def parse_init(text: str) -> frozenset[Atom]:
    """Read a standalone ``(:init ...)`` block."""
    expr = read_sexpr(text)
    if not expr or expr[0] != ":init":
        raise _fail(expr, "expected (:init ...)", expected=":init")
    return frozenset(parse_init_body(expr[1:]))


def parse_goal(text: str) -> Condition:
    """Read a standalone ``(:goal ...)`` block, a bare ``(and ...)`` or a single atom."""
    expr = read_sexpr(text)
    if expr and expr[0] == ":goal":
        if len(expr) != 2:
            raise _fail(expr, "expected exactly one goal formula", expected="goal formula")
        expr = expr[1]
    return _parse_condition(expr, allow_negation=False)


def parse_plan(text: str) -> Plan:
    """Read a plan file: one ``(action arg ...)`` per line; ``;`` comments allowed."""
    steps = []
    for node in tokenize_forms(text):
        node = _expect_list(node, "plan step")
        if not node:
            raise _fail(node, "empty plan step", expected="action")
        steps.append(GroundAction(_expect_name(node[0], "action name"), tuple(_expect_name(a, "object") for a in node[1:])))
    return Plan(tuple(steps))


def tokenize_forms(text: str) -> list:
    """Read a sequence of top-level s-expressions."""
    body = read_sexpr("(" + _strip_comments(text) + "\n)")
    return list(body)


def flatten_goal(problem: Problem) -> frozenset[Literal]:
    return frozenset(problem.goal.literals)


def is_subtype(domain: Domain, sub: str, sup: str) -> bool:
    for t in (sub, sup):
        if not domain.has_type(t):
            raise UnknownType(f"unknown type {t!r}")
    t = sub
    while True:
        if t == sup:
            return True
        if t == ROOT_TYPE:
            return False
        t = domain.types[t]


def type_ancestors(domain: Domain, name: str) -> list[str]:
    """``name`` followed by its supertypes up to the root."""
    out = [name]
    while out[-1] != ROOT_TYPE:
        out.append(domain.types.get(out[-1], ROOT_TYPE))
    return out


# --------------------------------------------------------------------------
# Canonical printing


def _typed(params: Iterable[tuple[str, str]]) -> str:
    return " ".join(f"{v} - {t}" for v, t in params)


def _condition_text(cond: Condition, indent: str) -> str:
    if not cond.literals:
        return "(and)"
    inner = "\n".join(f"{indent}  {lit}" for lit in cond)
    return f"(and\n{inner})"


def print_domain(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append("  (:requirements " + " ".join(sorted(domain.requirements)) + ")")
    if domain.types:
        body = "\n".join(f"    {t} - {p}" for t, p in domain.types.items())
        lines.append(f"  (:types\n{body})")
    if domain.predicates:
        body = "\n".join(
            f"    ({p.name}{' ' + _typed(p.params) if p.params else ''})" for p in domain.predicates
        )
        lines.append(f"  (:predicates\n{body})")
    for act in domain.actions:
        effect = Condition(tuple(Literal(a) for a in act.add) + tuple(Literal(a, True) for a in act.delete))
        lines.append(
            f"  (:action {act.name}\n"
            f"    :parameters ({_typed(act.params)})\n"
            f"    :precondition {_condition_text(act.precondition, '    ')}\n"
            f"    :effect {_condition_text(effect, '    ')})"
        )
    return "\n".join(lines) + ")\n"


def print_problem(problem: Problem) -> str:
    lines = [f"(define (problem {problem.name})", f"  (:domain {problem.domain_name})"]
    if problem.objects:
        body = "\n".join(f"    {o.name} - {o.type}" for o in problem.objects)
        lines.append(f"  (:objects\n{body})")
    else:
        lines.append("  (:objects)")
    if problem.init:
        body = "\n".join(f"    {a}" for a in sorted(problem.init))
        lines.append(f"  (:init\n{body})")
    else:
        lines.append("  (:init)")
    lines.append(f"  (:goal {_condition_text(problem.goal, '  ')})")
    return "\n".join(lines) + ")\n"


def print_init(atoms: Iterable[Atom]) -> str:
    atoms = sorted(set(atoms))
    if not atoms:
        return "(:init)"
    return "(:init\n" + "\n".join(f"  {a}" for a in atoms) + ")"


def print_goal(goal: Condition) -> str:
    return f"(:goal {_condition_text(goal, '')})"


def print_objects(objects: Iterable[TypedObject]) -> str:
    objects = list(objects)
    if not objects:
        return "(:objects)"
    return "(:objects\n" + "\n".join(f"  {o.name} - {o.type}" for o in objects) + ")"
