import itertools
import json
import math

import pytest
from hypothesis import given, strategies as st

from pdgen.backends import BackendConfig, Mode, ModelClient, Role
from pdgen.dataset import GroundTruthUpstream
from pdgen.pddl import Atom, Condition, parse_problem, print_goal, print_init, print_problem
from pdgen.pipeline import (
    COT_QUESTION,
    EmptyScene,
    ExtractionFailure,
    GenerationMode,
    Pipeline,
    PipelineConfig,
    PoolTooSmall,
    assemble_problem,
    extract_pddl_block,
    select_examples,
)
from pdgen.scene import Detection, Example, SceneAnnotation


def scripted(case, chat):
    captions = [case.scene.captions.get(i, "") for i in range(len(case.scene.detections))]
    return ModelClient(chat=chat, detections=[list(case.scene.detections)], captions=captions)


def fence(text):
    return f"Sure, here it is:\n```pddl\n{text}\n```\nLet me know if you need more."


def modular_replies(problem):
    return [fence(print_init(problem.init)), fence(print_goal(problem.goal))]


def cucumber_mutant(problem):
    return problem.__class__(problem.name, problem.domain_name, problem.objects,
                             problem.init | {Atom("at", ("cucumber", "basket"))}, problem.goal)


def pipeline(bundle, client, **cfg):
    return Pipeline(bundle.domain, bundle.knowledge, client, PipelineConfig(**cfg))


# ---- examples


def test_select_examples_enumerates_all_combinations(cooking):
    pool = cooking.knowledge.example_pool
    exclude = pool[0].case_id
    rest = [e.case_id for e in pool if e.case_id != exclude]
    expected = list(itertools.combinations(rest, 3))
    assert len(expected) == math.comb(9, 3) == 84
    got = [tuple(e.case_id for e in select_examples(pool, 3, i, exclude)) for i in range(84)]
    assert got == expected
    assert select_examples(pool, 3, 84, exclude) == select_examples(pool, 3, 0, exclude)
    assert select_examples(pool, 0, 5, exclude) == []
    assert select_examples(pool, 3, 7, exclude) == select_examples(pool, 3, 7, exclude)


def test_select_examples_seed_offsets_index(cooking):
    pool = cooking.knowledge.example_pool
    seeded = select_examples(pool, 3, 0, "cooking-01", seed=5)
    assert seeded == select_examples(pool, 3, 0, "cooking-01", seed=5)
    assert seeded in [select_examples(pool, 3, i, "cooking-01") for i in range(84)]


def test_pool_too_small(cooking):
    with pytest.raises(PoolTooSmall):
        select_examples(cooking.knowledge.example_pool[:3], 3, 0, "cooking-01")


# ---- extraction


def test_extract_prefers_fenced_block():
    text = "Use (and (wrong)) maybe.\nHere is the problem:\n```\n(define (problem p)\n  (:domain d))\n```"
    assert extract_pddl_block(text) == "(define (problem p) (:domain d))"


def test_extract_bare_and():
    assert extract_pddl_block("(and (on a b))") == "(and (on a b))"


def test_extract_skips_unbalanced_and_fails_on_prose():
    assert extract_pddl_block("(:init (p a) (:init (q b))", (":init",)) == "(:init (q b))"
    with pytest.raises(ExtractionFailure):
        extract_pddl_block("I cannot answer.")


@given(st.text(alphabet=st.characters(blacklist_characters="()`"), max_size=40),
       st.text(alphabet=st.characters(blacklist_characters="()`"), max_size=40))
def test_extract_ignores_surrounding_prose(before, after):
    assert extract_pddl_block(f"{before}\n(:goal (and (at carrot bowl)))\n{after}") == "(:goal (and (at carrot bowl)))"


# ---- estimators


def test_estimate_objects(cooking):
    case = cooking.case("cooking-01")
    p = pipeline(cooking, scripted(case, []))
    objects, annotated = p.estimate_objects(case.scene.image_ref)
    assert {"carrot", "knife", "cutting_board", "a_bot", "b_bot"} <= {o.name for o in objects}
    assert annotated.names == ("tray", "cutting_board", "basket", "bowl", "carrot", "knife")
    assert p.client.calls.detect[0].query.startswith("orange carrot. green cucumber.")


def test_estimate_objects_hanoi_replay(hanoi):
    case = hanoi.cases[0]
    client = ModelClient(BackendConfig(Mode.REPLAY, fixture_dir=hanoi.fixture_dir))
    objects, _ = pipeline(hanoi, client).estimate_objects(case.scene)
    assert sum(o.type == "disk" for o in objects) == 10
    assert [o.name for o in objects if o.type == "peg"] == ["peg1", "peg2", "peg3"]


def test_empty_scene(cooking):
    case = cooking.case("cooking-01")
    low = [Detection(d.label, d.box, 0.1) for d in case.scene.detections]
    client = ModelClient(detections=[low])
    with pytest.raises(EmptyScene):
        pipeline(cooking, client).estimate_objects(case.scene)


def test_estimate_init_passthrough_and_prompt(cooking):
    case = cooking.case("cooking-01")
    reply = "(:init (is-whole carrot) (at carrot basket))"
    p = pipeline(cooking, scripted(case, [reply]))
    objects, annotated = p.estimate_objects(case.scene)
    examples = select_examples(cooking.knowledge.example_pool, 3, 0, case.id)
    init = p.estimate_init(annotated, objects, examples)
    assert init == {Atom("is-whole", ("carrot",)), Atom("at", ("carrot", "basket"))}
    messages = p.client.calls.chat[0].messages
    assert [m.role for m in messages] == [Role.SYSTEM] + [Role.USER, Role.ASSISTANT] * 3 + [Role.USER]
    assert "carrot: [" in messages[-1].content and "caption: a whole orange carrot" in messages[-1].content
    assert [r.prompt for r in p.client.calls.caption][0] == "Q: what does this tray describe? A: "
    assert p.client.calls.chat[0].tag == "init"


def test_estimate_goal(cooking):
    case = cooking.case("cooking-01")
    p = pipeline(cooking, scripted(case, ["The goal is\n(:goal (and (is-sliced carrot) (at carrot bowl)))"]))
    goal = p.estimate_goal("slice the carrot and put it in the bowl", case.ground_truth.objects,
                           case.ground_truth.init, [])
    assert goal == Condition.of(Atom("is-sliced", ("carrot",)), Atom("at", ("carrot", "bowl")))
    assert "Instruction: slice the carrot and put it in the bowl" in p.client.calls.chat[0].messages[-1].content


def test_estimate_goal_without_goal_form(cooking):
    case = cooking.case("cooking-01")
    p = pipeline(cooking, scripted(case, ["I am not sure what you want."]))
    with pytest.raises(ExtractionFailure):
        p.estimate_goal("do it", case.ground_truth.objects, case.ground_truth.init, [])


def test_hanoi_goals_differ_with_init(hanoi):
    # the instruction is shared; the goal is answered from each case's own state
    goals = set()
    for case in hanoi.cases[:3]:
        client = ModelClient(BackendConfig(Mode.LIVE), upstream=GroundTruthUpstream(case))
        p = pipeline(hanoi, client)
        goals.add(p.estimate_goal(case.instruction, case.ground_truth.objects, case.ground_truth.init, []))
    assert len({c.instruction for c in hanoi.cases}) == 1
    assert len(goals) == 3


def test_assemble_problem(cooking):
    gt = cooking.case("cooking-06").ground_truth
    assert assemble_problem(gt.name, gt.domain_name, gt.objects, gt.init, gt.goal) == print_problem(gt)
    text = assemble_problem("p", "cooking", gt.objects, frozenset(), gt.goal)
    assert "(:init)" in text and parse_problem(text).init == frozenset()
    goal = parse_problem(text).goal
    assert goal == gt.goal


def test_cot_prompt_contains_template_sentence(cooking):
    case = cooking.case("cooking-01")
    p = pipeline(cooking, scripted(case, ["cucumber is not an object"]))
    assert p.cot_explain("(define ...)", "UndefinedObject in :init: cucumber") == "cucumber is not an object"
    assert p.client.calls.chat[0].messages[-1].content.rstrip().endswith(COT_QUESTION)


# ---- generation loop


def test_first_try_success_makes_no_repair_calls(cooking):
    case = cooking.case("cooking-01")
    client = scripted(case, modular_replies(case.ground_truth))
    record = pipeline(cooking, client).generate(case.instruction, case.scene, case.id)
    assert record.success and len(record.attempts) == 1
    assert client.calls.chat_tags() == ["init", "goal"]
    assert record.final_problem_text == print_problem(case.ground_truth)


@pytest.mark.parametrize("use_cot", [True, False])
def test_undefined_object_then_fix(cooking, use_cot):
    case = cooking.case("cooking-01")
    bad = cucumber_mutant(case.ground_truth)
    replies = modular_replies(bad) + (["cucumber is not declared"] if use_cot else []) + [fence(print_problem(case.ground_truth))]
    client = scripted(case, replies)
    record = pipeline(cooking, client, use_cot=use_cot).generate(case.instruction, case.scene, case.id)
    assert record.success and len(record.attempts) == 2
    assert client.calls.chat_tags().count("cot") == (1 if use_cot else 0)
    assert client.calls.chat_tags().count("refine") == 1
    first = record.attempts[0]
    assert first.error_message.startswith("UndefinedObject in :init: cucumber")
    refine_prompt = client.calls.chat[-1].messages[-1].content
    assert first.error_message in refine_prompt
    assert ("Explanation of the error" in refine_prompt) == use_cot
    assert record.attempts[1].validation.ok and record.attempts[1].error_message is None


def test_correction_bound(cooking):
    case = cooking.case("cooking-01")
    bad = fence(print_problem(cucumber_mutant(case.ground_truth)))
    client = scripted(case, modular_replies(cucumber_mutant(case.ground_truth)) + ["why", bad, "why", bad])
    record = pipeline(cooking, client, max_corrections=2).generate(case.instruction, case.scene, case.id)
    assert len(record.attempts) == 3 and not record.success
    assert client.calls.chat_tags() == ["init", "goal", "cot", "refine", "cot", "refine"]


def test_no_corrections(cooking):
    case = cooking.case("cooking-01")
    client = scripted(case, modular_replies(cucumber_mutant(case.ground_truth)))
    record = pipeline(cooking, client, max_corrections=0, use_cot=False).generate(case.instruction, case.scene, case.id)
    assert len(record.attempts) == 1 and not record.success


def test_unsolvable_problem_enters_repair(cooking):
    case = cooking.case("cooking-01")
    gt = case.ground_truth
    stuck = gt.__class__(gt.name, gt.domain_name, gt.objects, gt.init - {Atom("can-cut", ("cutting_board",))}, gt.goal)
    client = scripted(case, modular_replies(stuck) + ["cutting needs can-cut", fence(print_problem(gt))])
    record = pipeline(cooking, client).generate(case.instruction, case.scene, case.id)
    assert record.attempts[0].error_message.startswith("unsolvable: goal ")
    assert record.success and len(record.attempts) == 2


def test_unparsable_refinement_uses_a_correction(cooking):
    case = cooking.case("cooking-01")
    bad = cucumber_mutant(case.ground_truth)
    client = scripted(case, modular_replies(bad) + ["hmm", "I give up", "hmm", fence(print_problem(case.ground_truth))])
    record = pipeline(cooking, client).generate(case.instruction, case.scene, case.id)
    assert len(record.attempts) == 3 and record.success
    assert record.attempts[1].problem_text == record.attempts[0].problem_text
    assert "could not be extracted" in record.attempts[1].note


def test_whole_mode_uses_one_generation_call(cooking):
    case = cooking.case("cooking-02")
    client = scripted(case, [fence(print_problem(case.ground_truth))])
    record = pipeline(cooking, client, mode="whole").generate(case.instruction, case.scene, case.id)
    assert record.success and client.calls.chat_tags() == ["whole"]
    parsed = record.attempts[0].parsed
    assert parsed.objects and parsed.init and parsed.goal


def test_whole_mode_repairs_too(cooking):
    case = cooking.case("cooking-01")
    client = scripted(case, [fence(print_problem(cucumber_mutant(case.ground_truth))), "why",
                             fence(print_problem(case.ground_truth))])
    record = pipeline(cooking, client, mode=GenerationMode.WHOLE).generate(case.instruction, case.scene, case.id)
    assert record.success and client.calls.chat_tags() == ["whole", "cot", "refine"]


def test_backend_failure_is_recorded(cooking):
    case = cooking.case("cooking-01")
    record = pipeline(cooking, scripted(case, [])).generate(case.instruction, case.scene, case.id)
    assert not record.success and record.aborted.startswith("QueueExhausted")


def test_record_serialization_is_deterministic(cooking):
    case = cooking.case("cooking-01")
    texts = []
    for _ in range(2):
        client = scripted(case, modular_replies(cucumber_mutant(case.ground_truth)) + ["x", fence(print_problem(case.ground_truth))])
        texts.append(pipeline(cooking, client).generate(case.instruction, case.scene, case.id).to_json())
    assert texts[0] == texts[1]
    data = json.loads(texts[0])
    assert data["schema"] == "pdgen.generation/1" and data["final"] == 1 and data["success"]
    assert "elapsed" not in texts[0]


def test_config_invariants():
    with pytest.raises(ValueError):
        PipelineConfig(k_examples=-1)
    with pytest.raises(ValueError):
        PipelineConfig(max_corrections=-1)
    assert PipelineConfig().k_examples == 3 and PipelineConfig().max_corrections == 2
