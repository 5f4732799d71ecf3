"""Writes the hand-authored cooking cases into the shipped bundle.

Run from the repository root: ``python3 tools/make_cooking.py``.
"""

import json
from pathlib import Path

from pdgen.dataset import ProblemCase, knowledge_from_dict, shipped_domain, verify_case, write_case
from pdgen.pddl import Atom, Condition, Problem
from pdgen.scene import BoundingBox, Detection, SceneAnnotation, detections_to_objects

ROOT = Path("src/pdgen/data/bundles/cooking")

KNOWLEDGE = {
    "query_elaborations": {
        "carrot": "orange carrot",
        "cucumber": "green cucumber",
        "tomato": "red tomato",
        "potato": "brown potato",
        "lettuce": "green lettuce leaf",
        "pepper": "yellow bell pepper",
        "knife": "kitchen knife",
        "cutting_board": "round cutting board",
        "bowl": "white bowl",
        "plate": "white plate",
        "tray": "metal tray",
        "basket": "wicker basket",
    },
    "type_map": {
        "carrot": "vegetable", "cucumber": "vegetable", "tomato": "vegetable", "potato": "vegetable",
        "lettuce": "vegetable", "pepper": "vegetable", "knife": "tool", "cutting_board": "location",
        "bowl": "location", "plate": "location", "tray": "location", "basket": "location",
    },
    "fixed_objects": [{"name": "a_bot", "type": "robot"}, {"name": "b_bot", "type": "robot"}],
    "naming_rules": {},
    "example_pool": [],
}

# left-arm and right-arm reach
REACH = {"a_bot": ("tray", "cutting_board"), "b_bot": ("cutting_board", "basket", "bowl", "plate")}

# location boxes (x, y, w, h) in a 1280x720 image
PLACES = {
    "tray": (60, 420, 260, 160),
    "cutting_board": (380, 380, 300, 220),
    "basket": (740, 380, 220, 200),
    "bowl": (1000, 430, 200, 140),
    "plate": (1000, 200, 220, 150),
}
ITEM_SIZE = {"carrot": (120, 30), "cucumber": (130, 36), "tomato": (50, 48), "potato": (60, 44),
             "lettuce": (90, 70), "pepper": (60, 62), "knife": (150, 24)}

CASES = [
    ("cooking-01", "Slice the carrot and put it in the bowl.",
     {"carrot": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket", "bowl"),
     [("is-sliced", "carrot"), ("at", "carrot", "bowl")]),
    ("cooking-02", "Cut the cucumber into slices and serve them on the plate.",
     {"cucumber": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket", "plate"),
     [("is-sliced", "cucumber"), ("at", "cucumber", "plate")]),
    ("cooking-03", "Please slice the tomato.",
     {"tomato": "cutting_board", "carrot": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket"),
     [("is-sliced", "tomato")]),
    ("cooking-04", "Put the carrot and the cucumber in the bowl.",
     {"carrot": "basket", "cucumber": "plate", "knife": "tray"}, ("tray", "cutting_board", "basket", "bowl", "plate"),
     [("at", "carrot", "bowl"), ("at", "cucumber", "bowl")]),
    ("cooking-05", "Slice the potato and leave it on the cutting board.",
     {"potato": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket"),
     [("is-sliced", "potato"), ("at", "potato", "cutting_board")]),
    ("cooking-06", "I want sliced carrot and sliced tomato in the bowl.",
     {"carrot": "basket", "tomato": "plate", "knife": "tray"}, ("tray", "cutting_board", "basket", "bowl", "plate"),
     [("is-sliced", "carrot"), ("at", "carrot", "bowl"), ("is-sliced", "tomato"), ("at", "tomato", "bowl")]),
    ("cooking-07", "Slice the cucumber, then put the knife back on the tray.",
     {"cucumber": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket"),
     [("is-sliced", "cucumber"), ("at", "knife", "tray")]),
    ("cooking-08", "Move the lettuce onto the plate and put the sliced tomato in the bowl.",
     {"lettuce": "basket", "tomato": "basket", "knife": "tray"}, ("tray", "cutting_board", "basket", "bowl", "plate"),
     [("at", "lettuce", "plate"), ("is-sliced", "tomato"), ("at", "tomato", "bowl")]),
    ("cooking-09", "Cut the bell pepper and place it on the plate.",
     {"pepper": "cutting_board", "knife": "tray"}, ("tray", "cutting_board", "plate"),
     [("is-sliced", "pepper"), ("at", "pepper", "plate")]),
    ("cooking-10", "Make a salad: slice the cucumber and the tomato and put both in the bowl with the lettuce.",
     {"cucumber": "basket", "tomato": "basket", "lettuce": "bowl", "knife": "tray"},
     ("tray", "cutting_board", "basket", "bowl"),
     [("is-sliced", "cucumber"), ("at", "cucumber", "bowl"), ("is-sliced", "tomato"), ("at", "tomato", "bowl"),
      ("at", "lettuce", "bowl")]),
]


def build(case_id, instruction, items, places, goal, knowledge):
    phrases = KNOWLEDGE["query_elaborations"]
    detections, captions = [], {}
    offsets = {}
    for place in places:
        captions[len(detections)] = f"a {phrases[place]} on the table"
        detections.append(Detection(phrases[place], BoundingBox(*PLACES[place]), 0.9))
    for item, place in items.items():
        px, py, pw, ph = PLACES[place]
        w, h = ITEM_SIZE[item]
        k = offsets.get(place, 0)
        offsets[place] = k + 1
        box = BoundingBox(px + 15 + 20 * k, py + 15 + (h + 8) * k, w, h)
        state = "" if item == "knife" else "whole "
        captions[len(detections)] = f"a {state}{phrases[item]} on the {phrases[place]}"
        detections.append(Detection(phrases[item], box, 0.85))
    scene = SceneAnnotation(f"images/{case_id}.png", 1280, 720, tuple(detections), captions)
    init = {Atom("free", ("a_bot",)), Atom("free", ("b_bot",)), Atom("can-cut", ("cutting_board",))}
    for robot, reach in REACH.items():
        init |= {Atom("at-workspace", (robot, loc)) for loc in reach if loc in places}
    for item, place in items.items():
        init |= {Atom("at", (item, place)), Atom("available", (item,))}
        if item != "knife":
            init.add(Atom("is-whole", (item,)))
    objects = tuple(detections_to_objects(scene, knowledge))
    problem = Problem(case_id, "cooking", objects, frozenset(init), Condition.of(*(Atom(g[0], g[1:]) for g in goal)))
    return ProblemCase(case_id, instruction, scene, problem)


def main():
    domain = shipped_domain("cooking")
    data = dict(KNOWLEDGE, example_pool=[c[0] for c in CASES])
    knowledge = knowledge_from_dict(data)
    for spec in CASES:
        case = build(*spec, knowledge)
        out = verify_case(domain, case)
        assert isinstance(out, int), out
        write_case(case, ROOT / "problems" / case.id)
        print(case.id, "plan length", out)
    (ROOT / "knowledge.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
