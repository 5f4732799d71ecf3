"""Scene annotations and the rule-based mapping from detections to PDDL objects."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .pddl import Problem, TypedObject, is_name

DEFAULT_SCORE_THRESHOLD = 0.3
DEFAULT_IOU_DEDUP = 0.9


class SceneError(ValueError):
    pass


class UnknownLabel(SceneError):
    pass


class AmbiguousNaming(SceneError):
    pass


class EmptyKnowledge(SceneError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise SceneError(f"box must have positive size, got w={self.w} h={self.h}")

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def area(self) -> float:
        return self.w * self.h

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0.0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0.0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        union = self.area() + other.area() - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class Detection:
    label: str
    box: BoundingBox
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise SceneError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"label": self.label, "box": _num(self.box.as_list()), "score": self.score}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Detection":
        return cls(str(data["label"]), BoundingBox(*data["box"]), float(data.get("score", 1.0)))


def _num(values):
    # ints stay ints in JSON so files round-trip byte for byte
    return [int(v) if float(v).is_integer() else v for v in values]


@dataclass(frozen=True)
class SceneAnnotation:
    image_ref: str
    width: int | None = None
    height: int | None = None
    detections: tuple[Detection, ...] = ()
    captions: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.width is None or self.height is None:
            return
        for i, d in enumerate(self.detections):
            b = d.box
            if b.x < 0 or b.y < 0 or b.x + b.w > self.width or b.y + b.h > self.height:
                raise SceneError(f"detection {i} ({d.label}) lies outside the {self.width}x{self.height} image")

    def to_dict(self) -> dict:
        out: dict = {"image": self.image_ref}
        if self.width is not None:
            out["width"] = self.width
            out["height"] = self.height
        out["detections"] = [d.to_dict() for d in self.detections]
        if self.captions:
            out["captions"] = {str(k): v for k, v in sorted(self.captions.items())}
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "SceneAnnotation":
        return cls(
            str(data["image"]),
            data.get("width"),
            data.get("height"),
            tuple(Detection.from_dict(d) for d in data.get("detections", [])),
            {int(k): str(v) for k, v in (data.get("captions") or {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_scene(path: str | Path) -> SceneAnnotation:
    return SceneAnnotation.from_dict(json.loads(Path(path).read_text()))


class NamingRule(str, enum.Enum):
    NONE = "none"
    NUMBER_BY_INCREASING_WIDTH = "number_by_increasing_width"
    NUMBER_LEFT_TO_RIGHT = "number_left_to_right"


@dataclass(frozen=True)
class Example:
    """A worked input/output pair used for few-shot prompting."""

    case_id: str
    instruction: str
    scene: SceneAnnotation
    problem: Problem


@dataclass(frozen=True)
class DomainKnowledge:
    query_elaborations: Mapping[str, str]
    type_map: Mapping[str, str]
    fixed_objects: tuple[TypedObject, ...] = ()
    naming_rules: Mapping[str, NamingRule] = field(default_factory=dict)
    example_pool: tuple[Example, ...] = ()

    def __post_init__(self):
        for name, phrase in self.query_elaborations.items():
            if not phrase.strip():
                raise SceneError(f"elaborated phrase for {name!r} is empty")

    def canonical(self, label: str) -> str:
        """Map a detector label (elaborated phrase or plain name) to its canonical class."""
        key = _norm(label)
        for name, phrase in self.query_elaborations.items():
            if key in (_norm(phrase), _norm(name)):
                return name
        raise UnknownLabel(f"no canonical object for detection label {label!r}")

    def rule(self, name: str) -> NamingRule:
        return NamingRule(self.naming_rules.get(name, NamingRule.NONE))

    def to_dict(self) -> dict:
        return {
            "query_elaborations": dict(self.query_elaborations),
            "type_map": dict(self.type_map),
            "fixed_objects": [{"name": o.name, "type": o.type} for o in self.fixed_objects],
            "naming_rules": {k: NamingRule(v).value for k, v in self.naming_rules.items()},
            "example_pool": [e.case_id for e in self.example_pool],
        }


def _norm(text: str) -> str:
    return re.sub(r"[\s_]+", " ", text.strip().lower())


def build_query(knowledge: DomainKnowledge) -> str:
    phrases = [p.strip() for p in knowledge.query_elaborations.values()]
    if not phrases:
        raise EmptyKnowledge("domain knowledge has no objects to query for")
    return " ".join(f"{p}." for p in phrases)


def filter_detections(detections: Sequence[Detection], threshold: float = DEFAULT_SCORE_THRESHOLD,
                      iou_dedup: float = DEFAULT_IOU_DEDUP) -> list[Detection]:
    """Drop low-scoring detections and near-duplicate boxes of the same label.

    Input order is kept for the survivors.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    kept = [d for d in detections if d.score >= threshold]
    order = sorted(range(len(kept)), key=lambda i: -kept[i].score)
    survivors: list[int] = []
    for i in order:
        d = kept[i]
        if any(kept[j].label == d.label and kept[j].box.iou(d.box) > iou_dedup for j in survivors):
            continue
        survivors.append(i)
    return [kept[i] for i in sorted(survivors)]


def name_detections(scene: SceneAnnotation, knowledge: DomainKnowledge) -> list[str]:
    """Assign each detection its PDDL object name (aligned with ``scene.detections``)."""
    groups: dict[str, list[int]] = {}
    for i, det in enumerate(scene.detections):
        groups.setdefault(knowledge.canonical(det.label), []).append(i)
    names = [""] * len(scene.detections)
    for cls, members in groups.items():
        rule = knowledge.rule(cls)
        if rule is NamingRule.NONE:
            if len(members) > 1:
                raise AmbiguousNaming(f"{len(members)} detections of {cls!r} but its names are not numbered")
            names[members[0]] = cls
            continue
        if rule is NamingRule.NUMBER_BY_INCREASING_WIDTH:
            key = lambda i: scene.detections[i].box.w
        else:
            key = lambda i: scene.detections[i].box.x
        ordered = sorted(members, key=key)
        for a, b in zip(ordered, ordered[1:]):
            if key(a) == key(b):
                raise AmbiguousNaming(f"two {cls!r} detections tie on the {rule.value} ordering key")
        for n, i in enumerate(ordered, start=1):
            names[i] = f"{cls}{n}"
    for n in names:
        if not is_name(n):
            raise SceneError(f"derived object name {n!r} is not a valid PDDL name")
    return names


def _class_and_number(name: str, classes: Sequence[str]) -> tuple[int, int]:
    for rank, cls in enumerate(classes):
        if name == cls:
            return rank, 0
        suffix = name[len(cls):]
        if name.startswith(cls) and suffix.isdigit():
            return rank, int(suffix)
    return len(classes), 0


def detections_to_objects(scene: SceneAnnotation, knowledge: DomainKnowledge) -> list[TypedObject]:
    """Typed objects for every detection plus the fixed objects.

    Output order depends only on the knowledge (class order, then number),
    never on the order of the detections.
    """
    names = name_detections(scene, knowledge)
    classes = list(knowledge.query_elaborations)
    objs = []
    for det, name in zip(scene.detections, names):
        cls = knowledge.canonical(det.label)
        objs.append(TypedObject(name, knowledge.type_map.get(cls, "object")))
    objs.sort(key=lambda o: _class_and_number(o.name, classes))
    out = objs + [o for o in knowledge.fixed_objects if o.name not in set(names)]
    if len({o.name for o in out}) != len(out):
        raise AmbiguousNaming("object names are not unique")
    return out


def caption_prompt(object_phrase: str) -> str:
    return f"Q: what does this {object_phrase} describe? A: "


def object_phrase(cls: str) -> str:
    return cls.replace("_", " ")


def scene_lines(scene: SceneAnnotation, names: Iterable[str], captions: Mapping[int, str]) -> str:
    """Boxes and captions as prompt text: ``name: [x, y, w, h]`` then ``caption: ...``."""
    lines = []
    for i, (det, name) in enumerate(zip(scene.detections, names)):
        lines.append(f"{name}: [{', '.join(str(v) for v in _num(det.box.as_list()))}]")
        if i in captions:
            lines.append(f"caption: {captions[i]}")
    return "\n".join(lines)
