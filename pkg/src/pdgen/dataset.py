"""Dataset bundles: loading, verification, and synthetic Blocksworld and Hanoi cases.

Bundle layout::

    bundle/
      domain.pddl
      knowledge.json      {query_elaborations, type_map, fixed_objects, naming_rules, example_pool}
      examples/<id>/      optional, same files as a problem
      problems/<id>/instruction.txt
      problems/<id>/scene.json
      problems/<id>/problem.pddl
      fixtures/           optional replay fixtures
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from ._combinatorics import unrank_combination, unrank_permutation
from .pddl import (
    Atom,
    Condition,
    Domain,
    PDDLError,
    Problem,
    TypedObject,
    parse_domain,
    parse_problem,
    print_goal,
    print_init,
    print_problem,
)
from .planner import PlannerError, SearchConfig, ground, solve, validate_plan
from .scene import (
    BoundingBox,
    Detection,
    DomainKnowledge,
    Example,
    NamingRule,
    SceneAnnotation,
    detections_to_objects,
)
from .validator import render_error, validate

log = logging.getLogger(__name__)

SHIPPED = ("blocksworld", "cooking", "hanoi")


class DatasetError(Exception):
    pass


class LayoutError(DatasetError):
    pass


class BadCount(DatasetError, ValueError):
    pass


@dataclass(frozen=True)
class ProblemCase:
    id: str
    instruction: str
    scene: SceneAnnotation
    ground_truth: Problem

    def as_example(self) -> Example:
        return Example(self.id, self.instruction, self.scene, self.ground_truth)


@dataclass(frozen=True)
class DomainBundle:
    domain: Domain
    knowledge: DomainKnowledge
    cases: tuple[ProblemCase, ...] = ()
    domain_text: str = ""
    root: Path | None = None

    def case(self, case_id: str) -> ProblemCase:
        for c in self.cases:
            if c.id == case_id:
                return c
        raise KeyError(f"no case {case_id!r} in bundle {self.domain.name}")

    @property
    def fixture_dir(self) -> Path | None:
        return self.root / "fixtures" if self.root is not None else None


def shipped_bundle_path(name: str) -> Path:
    if name not in SHIPPED:
        raise KeyError(f"no shipped bundle {name!r} (have {', '.join(SHIPPED)})")
    return Path(str(resources.files("pdgen") / "data" / "bundles" / name))


# --------------------------------------------------------------------------
# Loading


def _read(path: Path) -> str:
    if not path.is_file():
        raise LayoutError(f"missing {path}")
    return path.read_text(encoding="utf-8")


def _parse_file(path: Path, parser: Callable):
    text = _read(path)
    try:
        return parser(text)
    except PDDLError as exc:
        exc.args = (f"{path}: {exc}",)
        raise


def load_case(case_dir: Path) -> ProblemCase:
    case_dir = Path(case_dir)
    try:
        scene = SceneAnnotation.from_dict(json.loads(_read(case_dir / "scene.json")))
    except (ValueError, KeyError) as exc:
        raise LayoutError(f"{case_dir / 'scene.json'}: {exc}") from exc
    return ProblemCase(
        case_dir.name,
        _read(case_dir / "instruction.txt").strip(),
        scene,
        _parse_file(case_dir / "problem.pddl", parse_problem),
    )


def knowledge_from_dict(data: dict, examples: Sequence[Example] = ()) -> DomainKnowledge:
    return DomainKnowledge(
        dict(data.get("query_elaborations", {})),
        dict(data.get("type_map", {})),
        tuple(TypedObject(o["name"], o.get("type", "object")) for o in data.get("fixed_objects", [])),
        {k: NamingRule(v) for k, v in data.get("naming_rules", {}).items()},
        tuple(examples),
    )


def load_bundle(directory: str | Path) -> DomainBundle:
    root = Path(directory)
    if not root.is_dir():
        raise LayoutError(f"{root} is not a directory")
    domain_text = _read(root / "domain.pddl")
    domain = _parse_file(root / "domain.pddl", parse_domain)
    try:
        kdata = json.loads(_read(root / "knowledge.json"))
    except ValueError as exc:
        raise LayoutError(f"{root / 'knowledge.json'}: {exc}") from exc
    problems = root / "problems"
    if not problems.is_dir():
        raise LayoutError(f"missing {problems}")
    cases = tuple(load_case(d) for d in sorted(problems.iterdir()) if d.is_dir())
    by_id = {c.id: c for c in cases}
    pool = []
    for cid in kdata.get("example_pool", []):
        if (root / "examples" / cid).is_dir():
            pool.append(load_case(root / "examples" / cid).as_example())
        elif cid in by_id:
            pool.append(by_id[cid].as_example())
        else:
            raise LayoutError(f"example {cid!r} named in knowledge.json has no directory")
    for o in kdata.get("fixed_objects", []):
        if not domain.has_type(o.get("type", "object")):
            raise LayoutError(f"fixed object {o['name']} has unknown type {o.get('type')}")
    return DomainBundle(domain, knowledge_from_dict(kdata, pool), cases, domain_text, root)


def write_case(case: ProblemCase, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "instruction.txt").write_text(case.instruction + "\n", encoding="utf-8")
    (directory / "scene.json").write_text(case.scene.to_json(), encoding="utf-8")
    (directory / "problem.pddl").write_text(print_problem(case.ground_truth), encoding="utf-8")


def write_bundle(bundle: DomainBundle, directory: str | Path) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "domain.pddl").write_text(bundle.domain_text, encoding="utf-8")
    (root / "knowledge.json").write_text(json.dumps(bundle.knowledge.to_dict(), indent=2) + "\n", encoding="utf-8")
    for case in bundle.cases:
        write_case(case, root / "problems" / case.id)
    return root


# --------------------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class CaseFailure:
    case_id: str
    stage: str  # validate / solve / plan
    message: str


@dataclass(frozen=True)
class BundleReport:
    domain: str
    checked: int
    failures: tuple[CaseFailure, ...] = ()
    warnings: tuple[str, ...] = ()
    plan_lengths: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def render(self) -> str:
        lines = [f"{self.domain}: {self.checked} case(s), {len(self.failures)} failure(s)"]
        lines += [f"  {f.case_id}: {f.stage}: {f.message}" for f in self.failures]
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def verify_case(domain: Domain, case: ProblemCase, search: SearchConfig = SearchConfig()) -> CaseFailure | int:
    """Plan length for a sound case, otherwise the first failure."""
    report = validate(domain, case.ground_truth)
    if not report.ok:
        return CaseFailure(case.id, "validate", render_error(report))
    result = solve(ground(domain, case.ground_truth), search)
    if not result.solved:
        return CaseFailure(case.id, "solve", f"search ended {result.outcome.value}")
    try:
        check = validate_plan(domain, case.ground_truth, result.plan)
    except PlannerError as exc:
        return CaseFailure(case.id, "plan", str(exc))
    if not check.valid:
        return CaseFailure(case.id, "plan", check.message)
    return len(result.plan)


def verify_bundle(bundle: DomainBundle, search: SearchConfig = SearchConfig()) -> BundleReport:
    failures, lengths = [], {}
    for case in bundle.cases:
        out = verify_case(bundle.domain, case, search)
        if isinstance(out, CaseFailure):
            failures.append(out)
        else:
            lengths[case.id] = out
    warnings = () if bundle.cases else ("bundle has no cases",)
    return BundleReport(bundle.domain.name, len(bundle.cases), tuple(failures), warnings, lengths)


def objects_match_scene(case: ProblemCase, knowledge: DomainKnowledge) -> bool:
    """Whether the rule-based objects of the case's scene are exactly its ground-truth objects."""
    return list(detections_to_objects(case.scene, knowledge)) == list(case.ground_truth.objects)


# --------------------------------------------------------------------------
# Shipped domains


@lru_cache(maxsize=None)
def shipped_domain_text(name: str) -> str:
    return (shipped_bundle_path(name) / "domain.pddl").read_text(encoding="utf-8")


def shipped_domain(name: str) -> Domain:
    return parse_domain(shipped_domain_text(name))


# --------------------------------------------------------------------------
# Blocksworld generator

BLOCK_COLORS = ("red", "orange", "yellow", "green", "blue", "purple", "pink")
BLOCK_SIZE = 60
IMAGE_W, IMAGE_H = 800, 600
TABLE_Y = 540


def blocksworld_knowledge(n_blocks: int = len(BLOCK_COLORS), examples: Sequence[Example] = ()) -> DomainKnowledge:
    colors = BLOCK_COLORS[:n_blocks]
    return DomainKnowledge(
        {f"{c}_block": f"{c} block" for c in colors},
        {f"{c}_block": "block" for c in colors},
        (TypedObject("robot", "robot"),),
        {},
        tuple(examples),
    )


@lru_cache(maxsize=None)
def count_configurations(n: int) -> int:
    """Number of ways to arrange n labelled blocks into towers on a table."""
    if n == 0:
        return 1
    return sum(math.comb(n - 1, k - 1) * math.factorial(k) * count_configurations(n - k) for k in range(1, n + 1))


def configuration_from_rank(blocks: Sequence[str], rank: int) -> list[list[str]]:
    """Bijection from range(count_configurations(n)) to tower sets (each tower listed bottom to top).

    The tower holding ``blocks[0]`` is decided first, then the rest recursively.
    """
    n = len(blocks)
    if not 0 <= rank < count_configurations(n):
        raise ValueError(f"rank {rank} out of range")
    if n == 0:
        return []
    first, rest = blocks[0], list(blocks[1:])
    for k in range(1, n + 1):
        tail = count_configurations(n - k)
        block = math.comb(n - 1, k - 1) * math.factorial(k) * tail
        if rank < block:
            break
        rank -= block
    rank, rest_rank = divmod(rank, tail)
    combo_rank, perm_rank = divmod(rank, math.factorial(k))
    picked = unrank_combination(n - 1, k - 1, combo_rank)
    members = [first] + [rest[i] for i in picked]
    tower = unrank_permutation(members, perm_rank)
    others = [b for i, b in enumerate(rest) if i not in set(picked)]
    return [tower] + configuration_from_rank(others, rest_rank)


def _tower_atoms(towers: Sequence[Sequence[str]]) -> set[Atom]:
    atoms = set()
    for t in towers:
        atoms.add(Atom("ontable", (t[0],)))
        atoms.add(Atom("clear", (t[-1],)))
        atoms.update(Atom("on", (up, down)) for down, up in zip(t, t[1:]))
    return atoms


def _on_goal(towers: Sequence[Sequence[str]]) -> list[Atom]:
    return [Atom("on", (up, down)) for t in towers for down, up in zip(t, t[1:])]


def _blocks_instruction(goal: Sequence[Atom]) -> str:
    parts = [f"the {a.args[0].replace('_', ' ')} on the {a.args[1].replace('_', ' ')}" for a in goal]
    if len(parts) == 1:
        body = parts[0]
    else:
        body = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"Put {body}."


def generate_blocksworld_case(n_blocks: int, seed: int, case_id: str | None = None,
                              verify: bool = True) -> ProblemCase:
    if not 2 <= n_blocks <= len(BLOCK_COLORS):
        raise BadCount(f"n_blocks must be in 2..{len(BLOCK_COLORS)}, got {n_blocks}")
    case_id = case_id or f"blocksworld-n{n_blocks}-s{seed}"
    rng = random.Random(seed)
    blocks = [f"{c}_block" for c in BLOCK_COLORS[:n_blocks]]
    total = count_configurations(n_blocks)
    init_towers = configuration_from_rank(blocks, rng.randrange(total))
    init_on = set(_on_goal(init_towers))
    while True:
        goal_towers = configuration_from_rank(blocks, rng.randrange(total))
        goal = _on_goal(goal_towers)
        if goal and not set(goal) <= init_on:
            break
    init_atoms = _tower_atoms(init_towers) | {Atom("handempty", ("robot",))}

    detections, captions = [], {}
    slots = rng.sample(range(len(BLOCK_COLORS)), len(init_towers))
    for tower, slot in sorted(zip(init_towers, slots), key=lambda ts: ts[1]):
        x = 40 + slot * 105
        for level, block in enumerate(tower):
            box = BoundingBox(x, TABLE_Y - BLOCK_SIZE * (level + 1), BLOCK_SIZE, BLOCK_SIZE)
            captions[len(detections)] = (f"a {block.replace('_', ' ')} on the table" if level == 0 else
                                         f"a {block.replace('_', ' ')} on top of the {tower[level - 1].replace('_', ' ')}")
            detections.append(Detection(block.replace("_", " "), box, round(rng.uniform(0.6, 0.99), 2)))
    scene = SceneAnnotation(f"images/{case_id}.png", IMAGE_W, IMAGE_H, tuple(detections), captions)
    knowledge = blocksworld_knowledge(n_blocks)
    problem = Problem(case_id, "blocksworld", tuple(detections_to_objects(scene, knowledge)),
                      frozenset(init_atoms), Condition.of(*goal))
    case = ProblemCase(case_id, _blocks_instruction(goal), scene, problem)
    if verify:
        _check_generated(shipped_domain("blocksworld"), case)
    return case


def _check_generated(domain: Domain, case: ProblemCase) -> None:
    out = verify_case(domain, case)
    if isinstance(out, CaseFailure):
        raise DatasetError(f"generated case {case.id} failed {out.stage}: {out.message}")


# --------------------------------------------------------------------------
# Hanoi generator

DISK_COLORS = ("red", "orange", "yellow", "green", "blue", "purple")
PEG_X = (150, 400, 650)
HANOI_INSTRUCTION = "Move all the disks onto the rightmost peg so that every disk sits on a larger one."
DISK_HEIGHT = 18
PEG_TOP = 200


def hanoi_knowledge(examples: Sequence[Example] = ()) -> DomainKnowledge:
    names = [f"{c}_disk" for c in DISK_COLORS] + ["peg"]
    return DomainKnowledge(
        {**{f"{c}_disk": f"{c} disk" for c in DISK_COLORS}, "peg": "wooden peg"},
        {**{f"{c}_disk": "disk" for c in DISK_COLORS}, "peg": "peg"},
        (),
        {n: NamingRule.NUMBER_BY_INCREASING_WIDTH for n in names[:-1]} | {"peg": NamingRule.NUMBER_LEFT_TO_RIGHT},
        tuple(examples),
    )


def disk_width(size: int) -> int:
    return 40 + 12 * size


def generate_hanoi_case(n_disks: int, n_pegs: int = 3, seed: int = 0, case_id: str | None = None,
                        canonical: bool = False, verify: bool = True) -> ProblemCase:
    """A Hanoi case with disks 1 (smallest) .. n; the goal stacks them all on the rightmost peg.

    ``canonical`` puts every disk on the leftmost peg instead of a random legal position.
    """
    if not 1 <= n_disks <= 10:
        raise BadCount(f"n_disks must be in 1..10, got {n_disks}")
    if n_pegs != 3:
        raise BadCount(f"only 3 pegs are supported, got {n_pegs}")
    rng = random.Random(seed)
    colors = [rng.choice(DISK_COLORS) for _ in range(n_disks)]
    while True:
        where = [0] * n_disks if canonical else [rng.randrange(3) for _ in range(n_disks)]
        if canonical or any(p != 2 for p in where):
            break

    # names follow the width rule within each color
    names = {}
    for color in DISK_COLORS:
        sizes = [s for s in range(1, n_disks + 1) if colors[s - 1] == color]
        for k, s in enumerate(sizes, start=1):
            names[s] = f"{color}_disk{k}"
    pegs = [f"peg{i}" for i in (1, 2, 3)]

    init = set()
    detections, captions = [], {}
    for p, peg in enumerate(pegs):
        captions[len(detections)] = "a wooden peg standing upright"
        detections.append(Detection("wooden peg", BoundingBox(PEG_X[p] - 5, PEG_TOP, 10, 560 - PEG_TOP),
                                    round(rng.uniform(0.6, 0.99), 2)))
        stack = sorted((s for s in range(1, n_disks + 1) if where[s - 1] == p), reverse=True)
        below = peg
        for level, s in enumerate(stack):
            init.add(Atom("on", (names[s], below)))
            below = names[s]
            w = disk_width(s)
            captions[len(detections)] = f"a {colors[s - 1]} disk"
            detections.append(Detection(f"{colors[s - 1]} disk",
                                        BoundingBox(PEG_X[p] - w // 2, 560 - DISK_HEIGHT * (level + 1), w, DISK_HEIGHT),
                                        round(rng.uniform(0.6, 0.99), 2)))
        init.add(Atom("clear", (below,)))
    for s in range(1, n_disks + 1):
        for peg in pegs:
            init.add(Atom("smaller", (names[s], peg)))
        for t in range(s + 1, n_disks + 1):
            init.add(Atom("smaller", (names[s], names[t])))

    goal = [Atom("on", (names[n_disks], pegs[2]))]
    goal += [Atom("on", (names[s], names[s + 1])) for s in range(n_disks - 1, 0, -1)]

    case_id = case_id or f"hanoi-n{n_disks}-s{seed}"
    scene = SceneAnnotation(f"images/{case_id}.png", IMAGE_W, IMAGE_H, tuple(detections), captions)
    problem = Problem(case_id, "hanoi", tuple(detections_to_objects(scene, hanoi_knowledge())),
                      frozenset(init), Condition.of(*goal))
    case = ProblemCase(case_id, HANOI_INSTRUCTION, scene, problem)
    if verify:
        _check_generated(shipped_domain("hanoi"), case)
    return case


def scaffold_bundle(domain: str, count: int, seed: int, size: int) -> DomainBundle:
    """A complete bundle of ``count`` generated cases; every case is also in the example pool."""
    if count < 1:
        raise BadCount("count must be at least 1")
    if domain == "blocksworld":
        cases = [generate_blocksworld_case(size, seed * 1000 + i, f"blocksworld-{i + 1:02d}") for i in range(count)]
        knowledge = blocksworld_knowledge(size, [c.as_example() for c in cases])
    elif domain == "hanoi":
        cases = [generate_hanoi_case(size, 3, seed * 1000 + i, f"hanoi-{i + 1:02d}") for i in range(count)]
        knowledge = hanoi_knowledge([c.as_example() for c in cases])
    else:
        raise ValueError(f"no generator for domain {domain!r}")
    return DomainBundle(shipped_domain(domain), knowledge, tuple(cases), shipped_domain_text(domain))


# --------------------------------------------------------------------------
# Fixture authoring


class GroundTruthUpstream:
    """Answers model requests from a case's ground truth.

    Used with record mode to author replay fixtures offline: the detector
    returns the annotated boxes, the captioner the annotated captions, and
    the chat model the matching part of the ground-truth problem.
    """

    def __init__(self, case: ProblemCase):
        self.case = case

    def detect(self, request) -> list[Detection]:
        return list(self.case.scene.detections)

    def caption(self, request) -> str:
        for i, det in enumerate(self.case.scene.detections):
            if det.box == request.box:
                return self.case.scene.captions.get(i, "")
        return ""

    def chat(self, request) -> str:
        gt = self.case.ground_truth
        if request.tag == "init":
            return "Here is the initial state.\n```pddl\n" + print_init(gt.init) + "\n```\n"
        if request.tag == "goal":
            return "```pddl\n" + print_goal(gt.goal) + "\n```\n"
        if request.tag in ("whole", "refine"):
            return "```pddl\n" + print_problem(gt) + "```\n"
        if request.tag == "cot":
            return "The problem does not match the scene; compare it with the instruction."
        raise ValueError(f"no ground-truth answer for a {request.tag or 'untagged'} chat request")
