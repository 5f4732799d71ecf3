import pytest
from hypothesis import given, strategies as st

from pdgen.dataset import generate_hanoi_case, hanoi_knowledge
from pdgen.pddl import TypedObject
from pdgen.scene import (
    AmbiguousNaming,
    BoundingBox,
    Detection,
    DomainKnowledge,
    EmptyKnowledge,
    NamingRule,
    SceneAnnotation,
    SceneError,
    UnknownLabel,
    build_query,
    caption_prompt,
    detections_to_objects,
    filter_detections,
    name_detections,
    scene_lines,
)


def box(x=0, y=0, w=10, h=10):
    return BoundingBox(x, y, w, h)


def test_build_query_uses_elaborations_in_order():
    k = DomainKnowledge({"cutting_board": "round cutting board", "knife": "kitchen knife"}, {})
    assert build_query(k) == "round cutting board. kitchen knife."
    assert build_query(DomainKnowledge({"carrot": "orange carrot"}, {})) == "orange carrot."
    with pytest.raises(EmptyKnowledge):
        build_query(DomainKnowledge({}, {}))


def test_empty_phrase_rejected():
    with pytest.raises(SceneError):
        DomainKnowledge({"carrot": "  "}, {})


def test_box_and_score_invariants():
    with pytest.raises(SceneError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(SceneError):
        Detection("x", box(), 1.5)
    with pytest.raises(SceneError):
        SceneAnnotation("img", 100, 100, (Detection("x", box(95, 0, 10, 10)),))


def test_disks_numbered_by_width():
    k = hanoi_knowledge()
    dets = (Detection("blue disk", box(0, 0, 70, 10)), Detection("blue disk", box(0, 20, 40, 10)),
            Detection("blue disk", box(0, 40, 55, 10)))
    assert name_detections(SceneAnnotation("img", detections=dets), k) == ["blue_disk3", "blue_disk1", "blue_disk2"]


def test_pegs_numbered_left_to_right():
    k = hanoi_knowledge()
    dets = tuple(Detection("wooden peg", box(x, 0, 10, 100)) for x in (500, 100, 300))
    assert name_detections(SceneAnnotation("img", detections=dets), k) == ["peg3", "peg1", "peg2"]


def test_ties_are_ambiguous():
    k = hanoi_knowledge()
    dets = (Detection("red disk", box(0, 0, 50, 10)), Detection("red disk", box(0, 20, 50, 10)))
    with pytest.raises(AmbiguousNaming):
        name_detections(SceneAnnotation("img", detections=dets), k)


def test_unnumbered_duplicates_are_ambiguous(cooking):
    dets = (Detection("orange carrot", box()), Detection("orange carrot", box(20)))
    with pytest.raises(AmbiguousNaming):
        name_detections(SceneAnnotation("img", detections=dets), cooking.knowledge)


def test_unknown_label(cooking):
    with pytest.raises(UnknownLabel):
        detections_to_objects(SceneAnnotation("img", detections=(Detection("spatula", box()),)), cooking.knowledge)


def test_cooking_objects_include_robots(cooking):
    case = cooking.case("cooking-01")
    objs = detections_to_objects(case.scene, cooking.knowledge)
    assert {"carrot", "knife", "cutting_board", "a_bot", "b_bot"} <= {o.name for o in objs}
    assert TypedObject("a_bot", "robot") in objs


def test_canonical_accepts_phrase_or_name(cooking):
    k = cooking.knowledge
    assert k.canonical("round cutting board") == "cutting_board"
    assert k.canonical("cutting board") == "cutting_board"
    assert k.canonical("Cutting_Board") == "cutting_board"


def test_shipped_scenes_reproduce_ground_truth_objects(bundles):
    for bundle in bundles.values():
        for case in bundle.cases:
            assert detections_to_objects(case.scene, bundle.knowledge) == list(case.ground_truth.objects), case.id


def test_filter_detections():
    a, b = Detection("carrot", box(), 0.9), Detection("knife", box(50), 0.2)
    assert filter_detections([a, b], 0.3) == [a]
    assert filter_detections([a, b], 0.0) == [a, b]
    hi, lo = Detection("carrot", box(0, 0, 100, 100), 0.7), Detection("carrot", box(0, 0, 100, 95), 0.8)
    assert BoundingBox(0, 0, 100, 100).iou(BoundingBox(0, 0, 100, 95)) == pytest.approx(0.95)
    assert filter_detections([hi, lo]) == [lo]
    other = Detection("knife", box(0, 0, 100, 95), 0.5)
    assert filter_detections([hi, other]) == [hi, other]
    with pytest.raises(ValueError):
        filter_detections([a], 1.5)


def test_caption_prompt():
    assert caption_prompt("carrot") == "Q: what does this carrot describe? A: "


def test_scene_lines():
    scene = SceneAnnotation("img", detections=(Detection("carrot", BoundingBox(1, 2, 3.5, 4)),))
    assert scene_lines(scene, ["carrot"], {0: "a whole carrot"}) == "carrot: [1, 2, 3.5, 4]\ncaption: a whole carrot"


def test_scene_json_round_trip(cooking):
    scene = cooking.cases[0].scene
    assert SceneAnnotation.from_dict(scene.to_dict()) == scene


@given(st.integers(0, 10_000), st.randoms())
def test_naming_is_permutation_invariant(seed, rnd):
    case = generate_hanoi_case(10, seed=seed, verify=False)
    k = hanoi_knowledge()
    base = dict(zip(case.scene.detections, name_detections(case.scene, k)))
    dets = list(case.scene.detections)
    rnd.shuffle(dets)
    shuffled = SceneAnnotation("img", 800, 600, tuple(dets))
    assert dict(zip(dets, name_detections(shuffled, k))) == base
    assert detections_to_objects(shuffled, k) == list(case.ground_truth.objects)
