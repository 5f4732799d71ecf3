"""Problem-description generation: object, initial-state and goal estimators,
problem assembly, and the corrective re-prompting loop."""

from __future__ import annotations

import enum
import json
import logging
import math
import random
import re
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from string import Template
from typing import Sequence

from ._combinatorics import unrank_combination
from .backends import BackendError, CaptionRequest, ChatRequest, DetectionRequest, Message, ModelClient, Role
from .pddl import (
    Atom,
    Condition,
    Domain,
    PDDLError,
    Problem,
    TypedObject,
    parse_goal,
    parse_init,
    parse_problem,
    print_domain,
    print_init,
    print_goal,
    print_objects,
    print_problem,
)
from .planner import PlannerResult, SearchConfig, ground, render_planner_error, solve
from .scene import (
    DEFAULT_IOU_DEDUP,
    DEFAULT_SCORE_THRESHOLD,
    DomainKnowledge,
    Example,
    SceneAnnotation,
    SceneError,
    build_query,
    caption_prompt,
    detections_to_objects,
    filter_detections,
    name_detections,
    object_phrase,
    scene_lines,
)
from .validator import ValidationReport, render_error, validate

log = logging.getLogger(__name__)

RECORD_SCHEMA = "pdgen.generation/1"
COT_QUESTION = "What part of the PDDL problem do you think is causing this error?"


class PipelineError(Exception):
    pass


class ExtractionFailure(PipelineError):
    pass


class PoolTooSmall(PipelineError):
    pass


class EmptyScene(PipelineError):
    pass


class GenerationMode(str, enum.Enum):
    MODULAR = "modular"
    WHOLE = "whole"


@dataclass(frozen=True)
class PipelineConfig:
    k_examples: int = 3
    max_corrections: int = 2
    use_cot: bool = True
    mode: GenerationMode = GenerationMode.MODULAR
    example_selector_seed: int | None = None
    combination_index: int = 0
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    iou_dedup: float = DEFAULT_IOU_DEDUP
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "mode", GenerationMode(self.mode))
        if self.k_examples < 0 or self.max_corrections < 0:
            raise ValueError("k_examples and max_corrections must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out


# --------------------------------------------------------------------------
# Templates and extraction


def template(name: str) -> Template:
    text = resources.files("pdgen.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


_HEAD_RE = {
    "define": re.compile(r"\(\s*define\b", re.I),
    ":init": re.compile(r"\(\s*:init\b", re.I),
    ":goal": re.compile(r"\(\s*:goal\b", re.I),
    "and": re.compile(r"\(\s*and\b", re.I),
}
_FENCE_RE = re.compile(r"```[^\n`]*\n?(.*?)```", re.S)
DEFAULT_HEADS = ("define", ":init", ":goal", "and")


def _balanced_from(text: str, start: int) -> str | None:
    depth = 0
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
        elif ch == ";":
            nl = text.find("\n", i)
            if nl < 0:
                return None
    return None


def _first_form(text: str, heads: Sequence[str]) -> str | None:
    hits = sorted((m.start(), h) for h in heads for m in _HEAD_RE[h].finditer(text))
    for start, _ in hits:
        block = _balanced_from(_strip_line_comments(text), start)
        if block is not None:
            return block
    return None


def _strip_line_comments(text: str) -> str:
    # blank out comments but keep offsets
    return re.sub(r";[^\n]*", lambda m: " " * len(m.group()), text)


def extract_pddl_block(llm_text: str, heads: Sequence[str] = DEFAULT_HEADS) -> str:
    """First balanced PDDL form in a model reply, looking inside code fences first."""
    for chunk in [m.group(1) for m in _FENCE_RE.finditer(llm_text)] + [llm_text]:
        block = _first_form(chunk, heads)
        if block is not None:
            return re.sub(r"\s+", " ", block).strip()
    raise ExtractionFailure(f"no {' / '.join('(' + h for h in heads)} form found in the model output")


# --------------------------------------------------------------------------
# Examples


def select_examples(pool: Sequence[Example], k: int, combination_index: int = 0,
                    exclude: str | None = None, seed: int | None = None) -> list[Example]:
    """The ``combination_index``-th k-combination (lexicographic) of the pool minus ``exclude``."""
    candidates = [e for e in pool if e.case_id != exclude]
    n = len(candidates)
    if k < 0:
        raise ValueError("k must be non-negative")
    if n < k:
        raise PoolTooSmall(f"need {k} examples but only {n} are available")
    if k == 0:
        return []
    total = math.comb(n, k)
    rank = combination_index
    if seed is not None:
        rank += random.Random(seed).randrange(total)
    chosen = unrank_combination(n, k, rank % total)
    return [candidates[i] for i in chosen]


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class AnnotatedScene:
    scene: SceneAnnotation
    names: tuple[str, ...]

    def text(self, captions=None) -> str:
        return scene_lines(self.scene, self.names, self.scene.captions if captions is None else captions)


@dataclass(frozen=True)
class Attempt:
    problem_text: str
    parsed: Problem | None = None
    validation: ValidationReport | None = None
    planning: PlannerResult | None = None
    error_message: str | None = None
    cot_explanation: str | None = None
    note: str | None = None

    @property
    def success(self) -> bool:
        return (self.validation is not None and self.validation.ok
                and self.planning is not None and self.planning.solved)

    def to_dict(self) -> dict:
        return {
            "problem_text": self.problem_text,
            "parsed": self.parsed is not None,
            "validation": self.validation.to_dict() if self.validation is not None else None,
            "planning": self.planning.to_dict() if self.planning is not None else None,
            "error_message": self.error_message,
            "cot_explanation": self.cot_explanation,
            "note": self.note,
        }


@dataclass(frozen=True)
class GenerationRecord:
    case_id: str
    instruction: str
    image_ref: str
    domain_name: str
    config: PipelineConfig
    attempts: tuple[Attempt, ...] = ()
    aborted: str | None = None
    search: SearchConfig = field(default_factory=SearchConfig)

    @property
    def final(self) -> int:
        return len(self.attempts) - 1

    @property
    def success(self) -> bool:
        return bool(self.attempts) and self.attempts[-1].success

    @property
    def final_problem_text(self) -> str:
        return self.attempts[-1].problem_text if self.attempts else ""

    def to_dict(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "input": {
                "case_id": self.case_id,
                "instruction": self.instruction,
                "image": self.image_ref,
                "domain": self.domain_name,
                "config": self.config.to_dict(),
                "search": {"algorithm": self.search.algorithm.value, "heuristic": self.search.heuristic.value,
                           "timeout": self.search.timeout, "max_expansions": self.search.max_expansions},
            },
            "attempts": [a.to_dict() for a in self.attempts],
            "final": self.final,
            "success": self.success,
            "aborted": self.aborted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def load_record(data: dict) -> dict:
    """Minimal view of a stored record, enough for scoring."""
    if data.get("schema") != RECORD_SCHEMA:
        raise ValueError(f"not a generation record (schema {data.get('schema')!r})")
    attempts = data.get("attempts") or []
    return {
        "case_id": data["input"]["case_id"],
        "final_problem_text": attempts[-1]["problem_text"] if attempts else "",
        "success": data.get("success", False),
    }


# --------------------------------------------------------------------------
# The pipeline


def _problem_name(case_id: str) -> str:
    name = re.sub(r"[^a-z0-9_\-]+", "_", case_id.lower()).strip("_") or "problem"
    return name if name[0].isalpha() else f"p{name}"


def assemble_problem(name: str, domain_name: str, objects: Sequence[TypedObject], init, goal: Condition) -> str:
    return print_problem(Problem(name, domain_name, tuple(objects), frozenset(init), goal))


class Pipeline:
    """Generates a problem description for one domain.

    ``client`` serves all model calls; its call log is how tests count
    chain-of-thought and refinement requests.
    """

    def __init__(self, domain: Domain, knowledge: DomainKnowledge, client: ModelClient,
                 config: PipelineConfig = PipelineConfig(), search: SearchConfig = SearchConfig()):
        self.domain = domain
        self.knowledge = knowledge
        self.client = client
        self.config = config
        self.search = search
        self._domain_text = print_domain(domain)

    # ---- prompts

    def _chat(self, system: str, turns: Sequence[tuple[str, str]], query: str, tag: str) -> str:
        messages = [Message(Role.SYSTEM, system)]
        for user, assistant in turns:
            messages += [Message(Role.USER, user), Message(Role.ASSISTANT, assistant)]
        messages.append(Message(Role.USER, query))
        request = ChatRequest(tuple(messages), self.config.temperature, self.config.max_tokens, tag=tag)
        return self.client.chat(request)

    def _system(self, name: str) -> str:
        return template(name).substitute(domain=self._domain_text.strip())

    def _example_scene(self, example: Example) -> AnnotatedScene:
        return AnnotatedScene(example.scene, tuple(name_detections(example.scene, self.knowledge)))

    # ---- estimators

    def estimate_objects(self, scene: SceneAnnotation | str) -> tuple[list[TypedObject], AnnotatedScene]:
        if isinstance(scene, str):
            scene = SceneAnnotation(scene)
        found = self.client.detect(DetectionRequest(scene.image_ref, build_query(self.knowledge)))
        kept = filter_detections(found, self.config.score_threshold, self.config.iou_dedup)
        if not kept:
            raise EmptyScene(f"no detection in {scene.image_ref} survives the score threshold")
        observed = SceneAnnotation(scene.image_ref, scene.width, scene.height, tuple(kept))
        names = tuple(name_detections(observed, self.knowledge))
        return detections_to_objects(observed, self.knowledge), AnnotatedScene(observed, names)

    def caption_scene(self, annotated: AnnotatedScene) -> dict[int, str]:
        captions = {}
        for i, det in enumerate(annotated.scene.detections):
            phrase = object_phrase(self.knowledge.canonical(det.label))
            captions[i] = self.client.caption(CaptionRequest(annotated.scene.image_ref, det.box, caption_prompt(phrase)))
        return captions

    def estimate_init(self, annotated: AnnotatedScene, objects: Sequence[TypedObject],
                      examples: Sequence[Example], captions: dict[int, str] | None = None) -> frozenset[Atom]:
        if not objects:
            raise PipelineError("no objects to describe")
        if captions is None:
            captions = self.caption_scene(annotated)
        fmt = template("init_input")
        turns = [
            (fmt.substitute(objects=print_objects(e.problem.objects), scene=self._example_scene(e).text()),
             print_init(e.problem.init))
            for e in examples
        ]
        query = fmt.substitute(objects=print_objects(objects), scene=annotated.text(captions))
        reply = self._chat(self._system("init_system"), turns, query, tag="init")
        block = extract_pddl_block(reply, (":init",))
        try:
            return parse_init(block)
        except PDDLError as exc:
            raise ExtractionFailure(f"initial state does not parse: {exc}") from exc

    def estimate_goal(self, instruction: str, objects: Sequence[TypedObject], init,
                      examples: Sequence[Example]) -> Condition:
        fmt = template("goal_input")
        turns = [
            (fmt.substitute(instruction=e.instruction, objects=print_objects(e.problem.objects),
                            init=print_init(e.problem.init)),
             print_goal(e.problem.goal))
            for e in examples
        ]
        query = fmt.substitute(instruction=instruction, objects=print_objects(objects), init=print_init(init))
        reply = self._chat(self._system("goal_system"), turns, query, tag="goal")
        block = extract_pddl_block(reply, (":goal", "and"))
        try:
            return parse_goal(block)
        except PDDLError as exc:
            raise ExtractionFailure(f"goal does not parse: {exc}") from exc

    def _whole_turns(self, examples: Sequence[Example]) -> list[tuple[str, str]]:
        fmt = template("whole_input")
        return [
            (fmt.substitute(instruction=e.instruction, scene=self._example_scene(e).text()), print_problem(e.problem))
            for e in examples
        ]

    def generate_whole(self, instruction: str, annotated: AnnotatedScene, examples: Sequence[Example],
                       captions: dict[int, str] | None = None) -> str:
        if captions is None:
            captions = self.caption_scene(annotated)
        query = template("whole_input").substitute(instruction=instruction, scene=annotated.text(captions))
        reply = self._chat(self._system("whole_system"), self._whole_turns(examples), query, tag="whole")
        return _tidy(extract_pddl_block(reply, ("define",)))

    # ---- corrective re-prompting

    def cot_explain(self, problem_text: str, error_message: str) -> str:
        if not error_message:
            raise ValueError("nothing to explain")
        query = template("cot").substitute(problem=problem_text.strip(), error=error_message.strip())
        return self._chat(self._system("refine_system"), [], query, tag="cot")

    def refine(self, examples: Sequence[Example], instruction: str, annotated: AnnotatedScene,
               captions: dict[int, str], problem_text: str, error_message: str,
               explanation: str | None = None) -> str:
        extra = template("explanation").substitute(explanation=explanation.strip()) if explanation else ""
        query = template("refine_input").substitute(
            instruction=instruction, scene=annotated.text(captions), problem=problem_text.strip(),
            error=error_message.strip(), explanation=extra,
        )
        reply = self._chat(self._system("refine_system"), self._whole_turns(examples), query, tag="refine")
        return _tidy(extract_pddl_block(reply, ("define",)))

    def check(self, problem_text: str) -> Attempt:
        """Parse, validate and plan; the error text is what re-prompting sees."""
        try:
            problem = parse_problem(problem_text)
        except PDDLError as exc:
            return Attempt(problem_text, error_message=f"syntax error: {exc}")
        report = validate(self.domain, problem)
        if not report.ok:
            return Attempt(problem_text, problem, report, error_message=render_error(report))
        result = solve(ground(self.domain, problem), self.search)
        error = None if result.solved else render_planner_error(result)
        return Attempt(problem_text, problem, report, result, error)

    # ---- end to end

    def generate(self, instruction: str, scene: SceneAnnotation | str, case_id: str = "generated") -> GenerationRecord:
        cfg = self.config
        image_ref = scene if isinstance(scene, str) else scene.image_ref
        record = GenerationRecord(case_id, instruction, image_ref, self.domain.name, cfg, search=self.search)
        attempts: list[Attempt] = []
        try:
            examples = select_examples(self.knowledge.example_pool, cfg.k_examples, cfg.combination_index,
                                       exclude=case_id, seed=cfg.example_selector_seed)
            objects, annotated = self.estimate_objects(scene)
            captions = self.caption_scene(annotated)
            try:
                if cfg.mode is GenerationMode.WHOLE:
                    text = self.generate_whole(instruction, annotated, examples, captions)
                else:
                    init = self.estimate_init(annotated, objects, examples, captions)
                    goal = self.estimate_goal(instruction, objects, init, examples)
                    text = assemble_problem(_problem_name(case_id), self.domain.name, objects, init, goal)
                attempts.append(self.check(text))
            except ExtractionFailure as exc:
                attempts.append(Attempt("", error_message=f"extraction failure: {exc}", note=str(exc)))

            while not attempts[-1].success and len(attempts) <= cfg.max_corrections:
                prev = attempts[-1]
                explanation = None
                if cfg.use_cot:
                    explanation = self.cot_explain(prev.problem_text, prev.error_message)
                    attempts[-1] = prev = replace(prev, cot_explanation=explanation)
                try:
                    text = self.refine(examples, instruction, annotated, captions, prev.problem_text,
                                       prev.error_message, explanation)
                    attempts.append(self.check(text))
                except ExtractionFailure as exc:
                    # the failed refinement still uses up a correction
                    attempts.append(replace(prev, cot_explanation=None,
                                            note=f"refinement could not be extracted: {exc}"))
        except (BackendError, SceneError, PipelineError) as exc:
            log.warning("generation for %s stopped: %s", case_id, exc)
            return replace(record, attempts=tuple(attempts), aborted=f"{type(exc).__name__}: {exc}")
        return replace(record, attempts=tuple(attempts))


def _tidy(block: str) -> str:
    """Canonical layout for a problem that parses; anything else is kept as is."""
    try:
        return print_problem(parse_problem(block))
    except PDDLError:
        return block
