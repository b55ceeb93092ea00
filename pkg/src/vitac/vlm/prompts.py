"""Prompt templates for the zero-shot classifier.

Templates use ``${slot}`` placeholders. The visuo-tactile template has
``${topk_refs}`` (the retrieved reference descriptions) and
``${test_time_classes}`` (the closed answer set); the vision-only baseline is
the same prompt with every tactile expression removed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Sequence

from ..errors import TemplateSlotMissing

VISUO_TACTILE_TEMPLATE = """\
The image shows an object placed in front of a robot.
The robot softly pressed the object with its gripper, and the object felt similar to ${topk_refs}.
Judge both how likely each class is given the appearance of the object in the image \
and how likely it is given the way the object felt when pressed.
The object belongs to exactly one of the following classes: ${test_time_classes}.
Reply with exactly one class label from this list and nothing else."""

VISION_ONLY_TEMPLATE = """\
The image shows an object placed in front of a robot.
Judge how likely each class is given the appearance of the object in the image.
The object belongs to exactly one of the following classes: ${test_time_classes}.
Reply with exactly one class label from this list and nothing else."""

TACTILE_WORDS = ("tactile", "touch", "pressed", "similar to")

_SLOT = re.compile(r"\$\{(\w+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    slots: tuple[str, ...] = field(default=("topk_refs", "test_time_classes"))

    def __post_init__(self):
        found = _SLOT.findall(self.text)
        for slot in self.slots:
            if found.count(slot) != 1:
                raise TemplateSlotMissing(f"template must contain ${{{slot}}} exactly once")
        extra = set(found) - set(self.slots)
        if extra:
            raise TemplateSlotMissing(f"unexpected slots {sorted(extra)}")

    @classmethod
    def from_file(cls, path: str | Path, slots: Sequence[str]) -> "PromptTemplate":
        return cls(Path(path).read_text(), tuple(slots))

    def fill(self, **values: str) -> str:
        try:
            return Template(self.text).substitute(**values)
        except KeyError as exc:
            raise TemplateSlotMissing(f"no value for slot {exc.args[0]!r}") from None


DEFAULT_VISUO_TACTILE = PromptTemplate(VISUO_TACTILE_TEMPLATE)
DEFAULT_VISION_ONLY = PromptTemplate(VISION_ONLY_TEMPLATE, slots=("test_time_classes",))


def format_classes(labels: Sequence[str]) -> str:
    return ", ".join(labels)


def build_prompt(
    req,
    visuo_tactile: PromptTemplate = DEFAULT_VISUO_TACTILE,
    vision_only: PromptTemplate = DEFAULT_VISION_ONLY,
) -> str:
    classes = format_classes(req.candidate_labels)
    if req.tactile_description:
        return visuo_tactile.fill(topk_refs=req.tactile_description, test_time_classes=classes)
    return vision_only.fill(test_time_classes=classes)
