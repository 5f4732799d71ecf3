"""Grounding, heuristic forward search and plan simulation for STRIPS tasks.

States are Python ints used as bitsets over the task's fact universe.
Successors are generated in grounded-action index order and open lists
break ties by insertion sequence, so equal inputs give equal plans.
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

from .pddl import (
    EQUALITY,
    ROOT_TYPE,
    ActionSchema,
    Atom,
    Domain,
    GroundAction,
    Literal,
    Plan,
    Problem,
    flatten_goal,
    is_subtype,
    type_ancestors,
)
from . import _relax
from .validator import render_error, validate

INF = math.inf


class PlannerError(Exception):
    pass


class ValidationRequired(PlannerError):
    """Grounding was asked for a problem that does not validate."""


class UnknownAction(PlannerError):
    pass


class NotAnError(PlannerError):
    pass


class Algorithm(str, enum.Enum):
    BFS = "bfs"
    ASTAR = "astar"
    GBFS = "gbfs"


class Heuristic(str, enum.Enum):
    HMAX = "hmax"
    HADD = "hadd"
    GOALCOUNT = "goalcount"


class Outcome(str, enum.Enum):
    SOLVED = "solved"
    UNSOLVABLE = "unsolvable"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class SearchConfig:
    algorithm: Algorithm = Algorithm.GBFS
    heuristic: Heuristic = Heuristic.HADD
    timeout: float = 30.0
    max_expansions: int = 5_000_000

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "heuristic", Heuristic(self.heuristic))
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_expansions <= 0:
            raise ValueError("max_expansions must be positive")


def _bits(x: int) -> Iterator[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def _mask(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


@dataclass(frozen=True)
class GroundedAction:
    source: GroundAction
    pre: tuple[int, ...]
    pre_neg: tuple[int, ...]
    add: tuple[int, ...]
    delete: tuple[int, ...]

    @cached_property
    def pre_mask(self) -> int:
        return _mask(self.pre)

    @cached_property
    def neg_mask(self) -> int:
        return _mask(self.pre_neg)

    @cached_property
    def add_mask(self) -> int:
        return _mask(self.add)

    @cached_property
    def del_mask(self) -> int:
        return _mask(self.delete)


@dataclass(frozen=True)
class GroundTask:
    facts: tuple[Atom, ...]
    init: frozenset[int]
    goal: frozenset[int]
    actions: tuple[GroundedAction, ...]

    def __post_init__(self):
        n = len(self.facts)
        for f in list(self.init) + list(self.goal):
            if not 0 <= f < n:
                raise ValueError(f"fact index {f} outside universe of {n}")
        for a in self.actions:
            if set(a.add) & set(a.delete):
                raise ValueError(f"{a.source} both adds and deletes a fact")

    @cached_property
    def index(self) -> dict[Atom, int]:
        return {atom: i for i, atom in enumerate(self.facts)}

    @cached_property
    def init_mask(self) -> int:
        return _mask(self.init)

    @cached_property
    def goal_mask(self) -> int:
        return _mask(self.goal)

    def goal_atoms(self) -> tuple[Atom, ...]:
        return tuple(self.facts[i] for i in sorted(self.goal))

    def decode(self, state: int) -> frozenset[Atom]:
        return frozenset(self.facts[i] for i in _bits(state))


# --------------------------------------------------------------------------
# Grounding


def _objects_by_type(domain: Domain, problem: Problem) -> dict[str, list[str]]:
    by_type: dict[str, list[str]] = {t: [] for t in [ROOT_TYPE, *domain.types]}
    for obj in problem.objects:
        for t in type_ancestors(domain, obj.type):
            by_type.setdefault(t, []).append(obj.name)
    return by_type


def _instantiate(schema: ActionSchema, domain: Domain, problem: Problem, statics: frozenset[str],
                 by_type: dict[str, list[str]]) -> Iterator[dict[str, str]]:
    """Yield parameter bindings whose static preconditions hold."""
    params = schema.param_names
    # check each static literal as soon as its last variable is bound
    checks: list[list[Literal]] = [[] for _ in params]
    constant: list[Literal] = []
    for lit in schema.precondition:
        if lit.atom.predicate != EQUALITY and lit.atom.predicate not in statics:
            continue
        positions = [params.index(a) for a in lit.atom.args if a in params]
        if positions:
            checks[max(positions)].append(lit)
        else:
            constant.append(lit)
    init = problem.init

    def holds(lit: Literal, binding: dict[str, str]) -> bool:
        args = tuple(binding.get(a, a) for a in lit.atom.args)
        if lit.atom.predicate == EQUALITY:
            value = len(set(args)) == 1
        else:
            value = Atom(lit.atom.predicate, args) in init
        return value != lit.negated

    binding: dict[str, str] = {}

    def extend(i: int) -> Iterator[dict[str, str]]:
        if i == len(params):
            yield dict(binding)
            return
        var, vtype = schema.params[i]
        for obj in by_type.get(vtype, []):
            binding[var] = obj
            if all(holds(lit, binding) for lit in checks[i]):
                yield from extend(i + 1)
        binding.pop(var, None)

    if all(holds(lit, binding) for lit in constant):
        yield from extend(0)


def ground(domain: Domain, problem: Problem, prune: bool = True) -> GroundTask:
    report = validate(domain, problem)
    if not report.ok:
        raise ValidationRequired(render_error(report))
    statics = domain.static_predicates()
    by_type = _objects_by_type(domain, problem)

    candidates: list[tuple[GroundAction, list[Atom], list[Atom], list[Atom], list[Atom]]] = []
    for schema in domain.actions:
        for binding in _instantiate(schema, domain, problem, statics, by_type):
            def sub(atom: Atom) -> Atom:
                return Atom(atom.predicate, tuple(binding.get(a, a) for a in atom.args))
            pre = [sub(a) for a in schema.precondition.positive
                   if a.predicate != EQUALITY and a.predicate not in statics]
            neg = [sub(a) for a in schema.precondition.negative
                   if a.predicate != EQUALITY and a.predicate not in statics]
            add = [sub(a) for a in schema.add]
            dele = [sub(a) for a in schema.delete]
            source = GroundAction(schema.name, tuple(binding[v] for v in schema.param_names))
            candidates.append((source, list(dict.fromkeys(pre)), list(dict.fromkeys(neg)),
                               list(dict.fromkeys(add)), list(dict.fromkeys(dele))))

    goal_atoms = [lit.atom for lit in problem.goal if not lit.negated]
    if prune:
        reached = _relaxed_reachable(problem.init, candidates)
        candidates = [c for c in candidates if all(a in reached for a in c[1])]
        universe = set(problem.init) | reached | set(goal_atoms)
    else:
        universe = set(problem.init) | set(goal_atoms)
        for _, pre, neg, add, dele in candidates:
            universe.update(pre, neg, add, dele)

    facts = tuple(sorted(universe))
    index = {a: i for i, a in enumerate(facts)}
    actions = []
    for source, pre, neg, add, dele in candidates:
        add_set = set(add)
        actions.append(GroundedAction(
            source,
            tuple(index[a] for a in pre),
            # a negated fact outside the universe can never hold
            tuple(index[a] for a in neg if a in index),
            tuple(index[a] for a in add),
            # add-after-delete: an atom both deleted and added stays true
            tuple(index[a] for a in dele if a not in add_set and a in index),
        ))
    return GroundTask(
        facts,
        frozenset(index[a] for a in problem.init),
        frozenset(index[a] for a in goal_atoms),
        tuple(actions),
    )


def _relaxed_reachable(init, candidates) -> set[Atom]:
    reached = set(init)
    waiting: dict[Atom, list[int]] = {}
    missing = []
    queue = deque()
    for i, (_, pre, _, _, _) in enumerate(candidates):
        need = [a for a in pre if a not in reached]
        missing.append(len(need))
        for a in need:
            waiting.setdefault(a, []).append(i)
        if not need:
            queue.append(i)
    while queue:
        i = queue.popleft()
        for atom in candidates[i][3]:
            if atom in reached:
                continue
            reached.add(atom)
            for j in waiting.pop(atom, ()):
                missing[j] -= 1
                if missing[j] == 0:
                    queue.append(j)
    return reached


# --------------------------------------------------------------------------
# Heuristics


class _Relaxation:
    """Delete-relaxation cost estimates (hmax / hadd) with unit action costs.

    Uses the numba kernel from :mod:`pdgen._relax` when available; the
    pure Python path computes the same numbers.
    """

    def __init__(self, task: GroundTask, compiled: bool | None = None):
        n = len(task.facts)
        self.nfacts = n
        self.adds = [a.add for a in task.actions]
        self.npre = [len(a.pre) for a in task.actions]
        self.pre_of: list[list[int]] = [[] for _ in range(n)]
        for i, a in enumerate(task.actions):
            for f in a.pre:
                self.pre_of[f].append(i)
        self.no_pre = [i for i, k in enumerate(self.npre) if k == 0]
        self.goal = sorted(task.goal)
        self.is_goal = bytearray(n)
        for g in self.goal:
            self.is_goal[g] = 1
        if compiled is None:
            compiled = _relax.kernel is not None
        if compiled and _relax.kernel is None:
            raise RuntimeError("numba is not installed")
        self.compiled = compiled
        if compiled:
            self._arrays = (
                n,
                np.array(self.npre, np.int64),
                *_relax.csr(self.pre_of),
                *_relax.csr(self.adds),
                np.frombuffer(bytes(self.is_goal), np.uint8).astype(np.bool_),
                len(self.goal),
            )

    def __call__(self, state: int, use_max: bool) -> float:
        if not self.compiled:
            return self._evaluate(state, use_max)
        if not self.goal:
            return 0
        facts = np.fromiter(_bits(state), np.int64)
        value = _relax.kernel(facts, *self._arrays, use_max)
        return INF if value < 0 else int(value)

    def _evaluate(self, state: int, use_max: bool) -> float:
        if not self.goal:
            return 0
        # costs are small integers, so a bucket queue replaces the heap
        cost = [INF] * self.nfacts
        first = []
        for f in _bits(state):
            cost[f] = 0
            first.append(f)
        buckets = [first]
        adds = self.adds
        for a in self.no_pre:
            for g in adds[a]:
                if 1 < cost[g]:
                    cost[g] = 1
                    if len(buckets) < 2:
                        buckets.append([])
                    buckets[1].append(g)
        remaining = self.npre[:]
        acc = [0] * len(remaining)
        pre_of, is_goal = self.pre_of, self.is_goal
        goals_left = len(self.goal)
        c = 0
        while c < len(buckets) and goals_left:
            for f in buckets[c]:
                if cost[f] != c:
                    continue  # superseded by a cheaper entry
                if is_goal[f]:
                    goals_left -= 1
                    if not goals_left:
                        break
                for a in pre_of[f]:
                    if use_max:
                        if c > acc[a]:
                            acc[a] = c
                    else:
                        acc[a] += c
                    remaining[a] -= 1
                    if not remaining[a]:
                        ca = acc[a] + 1
                        for g in adds[a]:
                            if ca < cost[g]:
                                cost[g] = ca
                                while len(buckets) <= ca:
                                    buckets.append([])
                                buckets[ca].append(g)
            c += 1
        if goals_left:
            return INF
        values = [cost[g] for g in self.goal]
        return max(values) if use_max else sum(values)


def make_heuristic(task: GroundTask, kind: Heuristic | str):
    kind = Heuristic(kind)
    if kind is Heuristic.GOALCOUNT:
        goal = task.goal_mask
        return lambda state: bin(goal & ~state).count("1")
    relax = _Relaxation(task)
    use_max = kind is Heuristic.HMAX
    return lambda state: relax(state, use_max)


# --------------------------------------------------------------------------
# Search


@dataclass(frozen=True)
class PlannerResult:
    outcome: Outcome
    plan: Plan | None = None
    expansions: int = 0
    generated: int = 0
    elapsed: float = 0.0
    goal: tuple[Atom, ...] = ()
    limit: str = ""  # what stopped a timed-out search, e.g. "10s"

    @property
    def solved(self) -> bool:
        return self.outcome is Outcome.SOLVED

    def to_dict(self) -> dict:
        out = {"outcome": self.outcome.value, "expansions": self.expansions, "generated": self.generated}
        if self.plan is not None:
            out["plan"] = [str(s) for s in self.plan]
        if self.limit:
            out["limit"] = self.limit
        return out


class _Successors:
    def __init__(self, task: GroundTask):
        self.actions = task.actions
        users: dict[int, int] = {}
        for a in task.actions:
            for f in a.pre:
                users[f] = users.get(f, 0) + 1
        self.by_key: dict[int, list[int]] = {}
        self.always: list[int] = []
        for i, a in enumerate(task.actions):
            if a.pre:
                key = min(a.pre, key=lambda f: (users[f], f))
                self.by_key.setdefault(key, []).append(i)
            else:
                self.always.append(i)
        self.pre = [a.pre_mask for a in task.actions]
        self.neg = [a.neg_mask for a in task.actions]
        self.add = [a.add_mask for a in task.actions]
        self.dele = [a.del_mask for a in task.actions]

    def __call__(self, state: int) -> list[tuple[int, int]]:
        cands = list(self.always)
        by_key = self.by_key
        for f in _bits(state):
            group = by_key.get(f)
            if group:
                cands.extend(group)
        cands.sort()
        pre, neg, add, dele = self.pre, self.neg, self.add, self.dele
        out = []
        for i in cands:
            if state & pre[i] == pre[i] and not state & neg[i]:
                out.append((i, (state & ~dele[i]) | add[i]))
        return out


def format_duration(seconds: float) -> str:
    if seconds >= 1 and float(seconds).is_integer():
        return f"{int(seconds)}s"
    ms = seconds * 1000
    if abs(ms - round(ms)) < 1e-9:
        return f"{int(round(ms))}ms"
    return f"{seconds:g}s"


def solve(task: GroundTask, config: SearchConfig = SearchConfig()) -> PlannerResult:
    start = time.monotonic()
    deadline = start + config.timeout
    goal = task.goal_mask
    init = task.init_mask
    goal_atoms = task.goal_atoms()
    successors = _Successors(task)
    parents: dict[int, tuple[int, int] | None] = {init: None}
    expansions = generated = 0

    def finish(outcome: Outcome, state: int | None = None, limit: str = "") -> PlannerResult:
        plan = None
        if state is not None:
            steps = []
            while parents[state] is not None:
                prev, a = parents[state]
                steps.append(task.actions[a].source)
                state = prev
            plan = Plan(tuple(reversed(steps)))
        return PlannerResult(outcome, plan, expansions, generated, time.monotonic() - start, goal_atoms, limit)

    def out_of_budget() -> str:
        if expansions >= config.max_expansions:
            return f"{config.max_expansions} expansions"
        if time.monotonic() >= deadline:
            return format_duration(config.timeout)
        return ""

    if init & goal == goal:
        return finish(Outcome.SOLVED, init)

    if config.algorithm is Algorithm.BFS:
        queue = deque([init])
        while queue:
            limit = out_of_budget()
            if limit:
                return finish(Outcome.TIMEOUT, limit=limit)
            state = queue.popleft()
            expansions += 1
            for a, succ in successors(state):
                generated += 1
                if succ in parents:
                    continue
                parents[succ] = (state, a)
                if succ & goal == goal:
                    return finish(Outcome.SOLVED, succ)
                queue.append(succ)
        return finish(Outcome.UNSOLVABLE)

    h = make_heuristic(task, config.heuristic)
    h0 = h(init)
    if h0 == INF:
        return finish(Outcome.UNSOLVABLE)
    seq = 0
    if config.algorithm is Algorithm.GBFS:
        open_list = [(h0, seq, init)]
        while open_list:
            limit = out_of_budget()
            if limit:
                return finish(Outcome.TIMEOUT, limit=limit)
            _, _, state = heapq.heappop(open_list)
            expansions += 1
            for a, succ in successors(state):
                generated += 1
                if succ in parents:
                    continue
                parents[succ] = (state, a)
                if succ & goal == goal:
                    return finish(Outcome.SOLVED, succ)
                hs = h(succ)
                if hs == INF:
                    continue
                seq += 1
                heapq.heappush(open_list, (hs, seq, succ))
        return finish(Outcome.UNSOLVABLE)

    # A*: unit costs, reopening when a cheaper path turns up
    best_g = {init: 0}
    hcache = {init: h0}
    open_list = [(h0, seq, 0, init)]
    while open_list:
        limit = out_of_budget()
        if limit:
            return finish(Outcome.TIMEOUT, limit=limit)
        _, _, g, state = heapq.heappop(open_list)
        if g > best_g[state]:
            continue
        if state & goal == goal:
            return finish(Outcome.SOLVED, state)
        expansions += 1
        for a, succ in successors(state):
            generated += 1
            ng = g + 1
            if ng >= best_g.get(succ, INF):
                continue
            hs = hcache.get(succ)
            if hs is None:
                hs = hcache[succ] = h(succ)
            if hs == INF:
                continue
            best_g[succ] = ng
            parents[succ] = (state, a)
            seq += 1
            heapq.heappush(open_list, (ng + hs, seq, ng, succ))
    return finish(Outcome.UNSOLVABLE)


def plan_problem(domain: Domain, problem: Problem, config: SearchConfig = SearchConfig()) -> PlannerResult:
    return solve(ground(domain, problem), config)


def render_planner_error(result: PlannerResult) -> str:
    if result.outcome is Outcome.SOLVED:
        raise NotAnError("the search succeeded; there is no error to render")
    if result.outcome is Outcome.TIMEOUT:
        return f"timeout after {result.limit}"
    literals = " ".join(str(a) for a in result.goal)
    return f"unsolvable: goal {literals} unreachable from initial state"


# --------------------------------------------------------------------------
# Plan simulation


@dataclass(frozen=True)
class PlanValidation:
    valid: bool
    failed_step: int | None = None
    unmet: tuple[Literal, ...] = ()
    message: str = ""
    final_state: frozenset[Atom] = field(default=frozenset(), repr=False, compare=False)


def validate_plan(domain: Domain, problem: Problem, plan: Plan) -> PlanValidation:
    """Execute ``plan`` from the initial state on the lifted model.

    Independent of :func:`ground`: every step is re-instantiated from its
    schema, so grounding bugs cannot hide a bad plan.
    """
    types = problem.object_types()
    state = set(problem.init)
    for i, step in enumerate(plan):
        schema = domain.action(step.schema)
        if schema is None:
            raise UnknownAction(f"step {i}: {step.schema} is not an action of domain {domain.name}")
        if len(step.args) != len(schema.params):
            return PlanValidation(False, i, (), f"step {i} {step}: {schema.name} takes {len(schema.params)} argument(s)")
        for arg, (var, vtype) in zip(step.args, schema.params):
            if arg not in types:
                return PlanValidation(False, i, (), f"step {i} {step}: unknown object {arg}")
            if not (domain.has_type(types[arg]) and is_subtype(domain, types[arg], vtype)):
                return PlanValidation(False, i, (), f"step {i} {step}: {arg} is not of type {vtype}")
        binding = dict(zip(schema.param_names, step.args))

        def sub(atom: Atom) -> Atom:
            return Atom(atom.predicate, tuple(binding.get(a, a) for a in atom.args))

        unmet = []
        for lit in schema.precondition:
            atom = sub(lit.atom)
            if atom.predicate == EQUALITY:
                value = len(set(atom.args)) == 1
            else:
                value = atom in state
            if value == lit.negated:
                unmet.append(Literal(atom, lit.negated))
        if unmet:
            text = " ".join(map(str, unmet))
            return PlanValidation(False, i, tuple(unmet), f"step {i} {step}: precondition {text} does not hold")
        state.difference_update(sub(a) for a in schema.delete)
        state.update(sub(a) for a in schema.add)
    unmet = tuple(sorted(l for l in flatten_goal(problem) if (l.atom in state) == l.negated))
    if unmet:
        text = " ".join(map(str, unmet))
        return PlanValidation(False, len(plan), unmet, f"goal {text} not satisfied after the last step",
                              frozenset(state))
    return PlanValidation(True, final_state=frozenset(state))
