"""Human-to-humanoid joint correspondences."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..skeleton import Skeleton

PRESETS = ("unihsi", "roam", "core4d")


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class JointMapping:
    """Ordered ``(human_index, humanoid_index)`` pairs.

    One human joint may drive several humanoid joints (a *group*), e.g. a
    human hip drives the H1 hip-yaw and hip-roll joints.
    """

    pairs: tuple[tuple[int, int], ...]
    human_skeleton: str = ""
    humanoid_skeleton: str = ""

    def __post_init__(self):
        seen = set()
        for a, b in self.pairs:
            if a < 0 or b < 0:
                raise MappingError(f"negative index in pair ({a}, {b})")
            if b in seen:
                raise MappingError(f"humanoid joint {b} is mapped more than once")
            seen.add(b)

    @property
    def human_indices(self) -> list[int]:
        return [a for a, _ in self.pairs]

    @property
    def humanoid_indices(self) -> list[int]:
        return [b for _, b in self.pairs]

    def groups(self) -> dict[int, list[int]]:
        """Human joint -> humanoid joints it drives, in humanoid tree order."""
        out: dict[int, list[int]] = {}
        for a, b in self.pairs:
            out.setdefault(a, []).append(b)
        return {a: sorted(bs) for a, bs in out.items()}

    def validate(self, human: Skeleton, humanoid: Skeleton) -> None:
        for a, b in self.pairs:
            if a >= human.num_joints:
                raise MappingError(f"human index {a} out of range for {human.name!r} ({human.num_joints} joints)")
            if b >= humanoid.num_joints:
                raise MappingError(
                    f"humanoid index {b} out of range for {humanoid.name!r} ({humanoid.num_joints} joints)"
                )

    def to_dict(self) -> dict:
        return {
            "human_skeleton": self.human_skeleton,
            "humanoid_skeleton": self.humanoid_skeleton,
            "pairs": [list(p) for p in self.pairs],
        }


def mapping_from_dict(doc: dict) -> JointMapping:
    try:
        pairs = tuple((int(a), int(b)) for a, b in doc["pairs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MappingError(f"malformed mapping: {exc}") from None
    return JointMapping(pairs, doc.get("human_skeleton", ""), doc.get("humanoid_skeleton", ""))


def load_mapping(preset_or_path: str | Path) -> JointMapping:
    """Bundled preset (``unihsi``, ``roam``, ``core4d``) or a mapping file."""
    name = str(preset_or_path)
    if name in PRESETS:
        text = resources.files("skilltransfer.data").joinpath(f"mappings/{name}.json").read_text(encoding="utf-8")
        return mapping_from_dict(json.loads(text))
    path = Path(name)
    if path.suffix == ".json" and path.is_file():
        return mapping_from_dict(json.loads(path.read_text(encoding="utf-8")))
    raise LookupError(f"unknown mapping preset {name!r}; available presets: {', '.join(PRESETS)}")


def save_mapping(mapping: JointMapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mapping.to_dict(), indent=2) + "\n", encoding="utf-8")
