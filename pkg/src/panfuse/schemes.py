"""Class scheme registry and remapping tables.

A scheme is an ordered list of (index, name, group) entries. Index 0 is always
the background class. Groups partition the classes: plain tissue/nuclei
schemes tag their foregrounds ``foreground``; the extended 11-class tissue
scheme tags them ``primary`` / ``metastatic`` so the frame classifier can
count them separately.

The numeric index order defined here is the single source of truth for the
whole engine; files only ever carry indices plus the scheme id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UnknownSchemeError, ValidationError

GROUPS = ("background", "primary", "metastatic", "foreground")


@dataclass(frozen=True)
class SchemeClass:
    index: int
    name: str
    group: str


@dataclass(frozen=True)
class ClassScheme:
    """Immutable, validated class scheme."""

    scheme_id: str
    classes: tuple[SchemeClass, ...]

    def __post_init__(self) -> None:
        if not self.classes:
            raise ValidationError(f"scheme {self.scheme_id!r} has no classes")
        indices = [c.index for c in self.classes]
        if indices != list(range(len(self.classes))):
            raise ValidationError(
                f"scheme {self.scheme_id!r} indices must be contiguous from 0"
            )
        if self.classes[0].group != "background":
            raise ValidationError(
                f"scheme {self.scheme_id!r}: index 0 must be the background class"
            )
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValidationError(f"scheme {self.scheme_id!r} has duplicate class names")
        for c in self.classes:
            if c.group not in GROUPS:
                raise ValidationError(
                    f"scheme {self.scheme_id!r}: unknown group {c.group!r}"
                )

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def name_of(self, index: int) -> str:
        return self.classes[index].name

    def index_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.index
        raise ValidationError(f"scheme {self.scheme_id!r} has no class named {name!r}")

    def group_of(self, index: int) -> str:
        return self.classes[index].group

    def indices_in_group(self, group: str) -> tuple[int, ...]:
        return tuple(c.index for c in self.classes if c.group == group)

    def foreground_indices(self) -> tuple[int, ...]:
        return tuple(c.index for c in self.classes if c.group != "background")

    def foreground_groups(self) -> tuple[str, ...]:
        """Non-background groups present in this scheme, in first-seen order."""
        seen: list[str] = []
        for c in self.classes:
            if c.group != "background" and c.group not in seen:
                seen.append(c.group)
        return tuple(seen)


@dataclass(frozen=True)
class RemapTable:
    """Total index mapping between two schemes, with an optional drop set.

    Any source index in ``drop_set`` invalidates the whole image (used to
    exclude images containing classes the target scheme cannot absorb).
    """

    source: str
    target: str
    mapping: dict[int, int]
    drop_set: frozenset[int] = field(default_factory=frozenset)

    def validate_against(self, src: ClassScheme, dst: ClassScheme) -> None:
        for i in range(src.class_count):
            if i not in self.mapping:
                raise ValidationError(
                    f"remap {self.source}->{self.target} undefined for source index {i}"
                )
            if not 0 <= self.mapping[i] < dst.class_count:
                raise ValidationError(
                    f"remap {self.source}->{self.target} sends {i} outside target scheme"
                )


def _scheme(scheme_id: str, entries: list[tuple[str, str]]) -> ClassScheme:
    classes = tuple(
        SchemeClass(index=i, name=name, group=group)
        for i, (name, group) in enumerate(entries)
    )
    return ClassScheme(scheme_id=scheme_id, classes=classes)


_TISSUE6_NAMES = ["tumor", "stroma", "epidermis", "necrosis", "blood_vessel"]

# Canonical index orders. puma_tissue6: 0 background, 1 tumor, 2 stroma,
# 3 epidermis, 4 necrosis, 5 blood_vessel. puma_ext11 mirrors the same five
# foregrounds twice: 1-5 primary, 6-10 metastatic.
_BUILTIN_SCHEMES: dict[str, ClassScheme] = {}


def _register_builtin(scheme: ClassScheme) -> None:
    _BUILTIN_SCHEMES[scheme.scheme_id] = scheme


_register_builtin(
    _scheme(
        "puma_tissue6",
        [("background", "background")] + [(n, "foreground") for n in _TISSUE6_NAMES],
    )
)

_register_builtin(
    _scheme(
        "puma_ext11",
        [("background", "background")]
        + [(f"{n}_primary", "primary") for n in _TISSUE6_NAMES]
        + [(f"{n}_metastatic", "metastatic") for n in _TISSUE6_NAMES],
    )
)

_register_builtin(
    _scheme(
        "nuclei_track1",
        [
            ("background", "background"),
            ("tumor", "foreground"),
            ("lymphocyte", "foreground"),
            ("other", "foreground"),
        ],
    )
)

_register_builtin(
    _scheme(
        "nuclei_track2",
        [("background", "background")]
        + [
            (n, "foreground")
            for n in [
                "tumor",
                "lymphocyte",
                "plasma",
                "histiocyte",
                "melanophage",
                "neutrophil",
                "stroma",
                "endothelium",
                "epithelium",
                "apoptotic",
            ]
        ],
    )
)

_register_builtin(
    _scheme(
        "monusac_nuclei",
        [("background", "background")]
        + [
            (n, "foreground")
            for n in ["epithelial", "lymphocyte", "macrophage", "neutrophil"]
        ],
    )
)

_register_builtin(
    _scheme(
        "panoptils_tissue9",
        [
            ("exclude", "background"),
            ("cancerous_epithelium", "foreground"),
            ("stroma", "foreground"),
            ("tils", "foreground"),
            ("normal_epithelium", "foreground"),
            ("necrosis", "foreground"),
            ("blood_vessel", "foreground"),
            ("other", "foreground"),
            ("whitespace", "foreground"),
        ],
    )
)

# Two-class scheme for plain component maps.
_register_builtin(
    _scheme("binary2", [("background", "background"), ("foreground", "foreground")])
)

_registry: dict[str, ClassScheme] = dict(_BUILTIN_SCHEMES)


def get_scheme(scheme_id: str) -> ClassScheme:
    try:
        return _registry[scheme_id]
    except KeyError:
        raise UnknownSchemeError(f"unknown scheme id {scheme_id!r}") from None


def register_scheme(scheme: ClassScheme, *, overwrite: bool = False) -> None:
    if scheme.scheme_id in _registry and not overwrite:
        raise ValidationError(f"scheme {scheme.scheme_id!r} is already registered")
    _registry[scheme.scheme_id] = scheme


def registered_scheme_ids() -> list[str]:
    return sorted(_registry)


def load_scheme_json(path: str | Path, *, register: bool = True) -> ClassScheme:
    """Load a scheme from ``{"scheme_id":..., "classes":[{index,name,group}]}``."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        entries = sorted(raw["classes"], key=lambda c: c["index"])
        classes = tuple(
            SchemeClass(index=c["index"], name=c["name"], group=c["group"])
            for c in entries
        )
        scheme = ClassScheme(scheme_id=raw["scheme_id"], classes=classes)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scheme file {path}: {exc}") from exc
    if register:
        register_scheme(scheme, overwrite=True)
    return scheme


def scheme_to_json_dict(scheme: ClassScheme) -> dict:
    return {
        "scheme_id": scheme.scheme_id,
        "classes": [
            {"index": c.index, "name": c.name, "group": c.group} for c in scheme.classes
        ],
    }


def identity_table(scheme_id: str) -> RemapTable:
    scheme = get_scheme(scheme_id)
    return RemapTable(
        source=scheme_id,
        target=scheme_id,
        mapping={i: i for i in range(scheme.class_count)},
    )


def ext11_to_tissue6() -> RemapTable:
    """Projection of the extended 11-class scheme onto the base 6-class one.

    Index i and i+5 both map to i for the five foreground classes.
    """
    mapping = {0: 0}
    for i in range(1, 6):
        mapping[i] = i
        mapping[i + 5] = i
    return RemapTable(source="puma_ext11", target="puma_tissue6", mapping=mapping)


def panoptils_to_puma() -> RemapTable:
    """Label merge used when pre-training on the breast-TME source dataset.

    exclude/other/whitespace collapse to background, cancerous epithelium
    becomes tumor, TILs merge into stroma. Images containing normal
    epithelium are rejected outright.
    """
    src = get_scheme("panoptils_tissue9")
    dst = get_scheme("puma_tissue6")
    mapping = {
        src.index_of("exclude"): 0,
        src.index_of("cancerous_epithelium"): dst.index_of("tumor"),
        src.index_of("stroma"): dst.index_of("stroma"),
        src.index_of("tils"): dst.index_of("stroma"),
        src.index_of("normal_epithelium"): 0,
        src.index_of("necrosis"): dst.index_of("necrosis"),
        src.index_of("blood_vessel"): dst.index_of("blood_vessel"),
        src.index_of("other"): 0,
        src.index_of("whitespace"): 0,
    }
    return RemapTable(
        source="panoptils_tissue9",
        target="puma_tissue6",
        mapping=mapping,
        drop_set=frozenset({src.index_of("normal_epithelium")}),
    )
