"""Seeded-error operators for the validator mutation suite.

Each operator takes a (domain, problem) pair and returns a broken copy of
the problem, or None when the problem offers nothing to break that way.
"""

from __future__ import annotations

from dataclasses import replace

from pdgen.pddl import Atom, Domain, Problem, TypedObject, is_subtype
from pdgen.validator import IssueKind


def _first_init(problem: Problem, pred=lambda a: bool(a.args)) -> Atom | None:
    return next((a for a in sorted(problem.init) if pred(a)), None)


def _swap_init(problem: Problem, old: Atom, new: Atom) -> Problem:
    return replace(problem, init=(problem.init - {old}) | {new})


def rename_object_away(domain: Domain, problem: Problem):
    atom = _first_init(problem)
    new = Atom(atom.predicate, ("ghost_thing",) + atom.args[1:])
    return _swap_init(problem, atom, new)


def drop_object_declaration(domain: Domain, problem: Problem):
    used = {a for atom in problem.init for a in atom.args}
    victim = next(o for o in problem.objects if o.name in used)
    return replace(problem, objects=tuple(o for o in problem.objects if o != victim))


def change_arity(domain: Domain, problem: Problem):
    atom = _first_init(problem)
    return _swap_init(problem, atom, Atom(atom.predicate, atom.args + atom.args[:1]))


def wrong_type_argument(domain: Domain, problem: Problem):
    types = problem.object_types()
    for atom in sorted(problem.init):
        decl = domain.predicate(atom.predicate)
        for i, want in enumerate(decl.param_types):
            for obj in problem.objects:
                if not is_subtype(domain, obj.type, want):
                    args = list(atom.args)
                    args[i] = obj.name
                    return _swap_init(problem, atom, Atom(atom.predicate, tuple(args)))
    return None


def duplicate_object(domain: Domain, problem: Problem):
    return replace(problem, objects=problem.objects + problem.objects[:1])


def variable_in_init(domain: Domain, problem: Problem):
    atom = _first_init(problem)
    return _swap_init(problem, atom, Atom(atom.predicate, ("?x",) + atom.args[1:]))


def undefined_predicate(domain: Domain, problem: Problem):
    atom = _first_init(problem)
    return _swap_init(problem, atom, Atom("mystery-" + atom.predicate, atom.args))


def undefined_type(domain: Domain, problem: Problem):
    first = problem.objects[0]
    return replace(problem, objects=(TypedObject(first.name, "gizmo"),) + problem.objects[1:])


def wrong_domain(domain: Domain, problem: Problem):
    return replace(problem, domain_name=problem.domain_name + "-other")


OPERATORS = {
    "rename_object_away": (rename_object_away, IssueKind.UNDEFINED_OBJECT),
    "drop_object_declaration": (drop_object_declaration, IssueKind.UNDEFINED_OBJECT),
    "change_arity": (change_arity, IssueKind.ARITY_MISMATCH),
    "wrong_type_argument": (wrong_type_argument, IssueKind.TYPE_MISMATCH),
    "duplicate_object": (duplicate_object, IssueKind.DUPLICATE_OBJECT),
    "variable_in_init": (variable_in_init, IssueKind.UNGROUND_ATOM),
    "undefined_predicate": (undefined_predicate, IssueKind.UNDEFINED_PREDICATE),
    "undefined_type": (undefined_type, IssueKind.UNDEFINED_TYPE),
    "wrong_domain": (wrong_domain, IssueKind.UNKNOWN_DOMAIN_REFERENCE),
}
