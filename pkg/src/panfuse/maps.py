"""Core raster value types: probability maps, label maps, instance maps.

Arrays are treated as immutable once wrapped; operations always allocate new
arrays. Validation happens at construction so a map object in hand is always
internally consistent with its scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ImageRejected, ValidationError
from .schemes import RemapTable, get_scheme


@dataclass(frozen=True)
class ProbabilityMap:
    """H x W x C float scores per class, each value finite and in [0, 1].

    Channel count must equal the class count of the scheme. Per-pixel vectors
    are not required to sum to one; the fusion rules break normalization
    anyway and argmax never needs it.
    """

    scheme_id: str
    data: np.ndarray  # (H, W, C) float32

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        if data.ndim != 3:
            raise ValidationError(f"probability map must be H x W x C, got {data.shape}")
        scheme = get_scheme(self.scheme_id)
        if data.shape[2] != scheme.class_count:
            raise ValidationError(
                f"probability map has {data.shape[2]} channels but scheme "
                f"{self.scheme_id!r} defines {scheme.class_count} classes"
            )
        if not np.isfinite(data).all():
            raise ValidationError("probability map contains non-finite values")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValidationError("probability map values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """H x W integer class ids under a named scheme."""

    scheme_id: str
    data: np.ndarray  # (H, W) int32

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError("label map data must be integral")
        data = np.ascontiguousarray(data, dtype=np.int32)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ValidationError(f"label map must be H x W, got {data.shape}")
        scheme = get_scheme(self.scheme_id)
        if data.size and (data.min() < 0 or data.max() >= scheme.class_count):
            raise ValidationError(
                f"label map values must lie in [0, {scheme.class_count - 1}] "
                f"for scheme {self.scheme_id!r}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class InstanceMap:
    """H x W instance ids (0 = background) plus an instance -> class table."""

    scheme_id: str
    ids: np.ndarray  # (H, W) int32
    classes: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise ValidationError("instance ids must be integral")
        ids = np.ascontiguousarray(ids, dtype=np.int32)
        object.__setattr__(self, "ids", ids)
        if ids.ndim != 2:
            raise ValidationError(f"instance map must be H x W, got {ids.shape}")
        if ids.size and ids.min() < 0:
            raise ValidationError("instance ids must be non-negative")
        if 0 in self.classes:
            raise ValidationError("instance class table must not contain id 0")
        scheme = get_scheme(self.scheme_id)
        for inst_id, cls in self.classes.items():
            if not 0 < cls < scheme.class_count:
                raise ValidationError(
                    f"instance {inst_id} has class {cls} outside scheme "
                    f"{self.scheme_id!r} foreground range"
                )
        present = set(np.unique(ids).tolist()) - {0}
        missing = present - set(self.classes)
        if missing:
            raise ValidationError(
                f"instance ids without class entries: {sorted(missing)[:10]}"
            )

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def present_ids(self) -> list[int]:
        ids = np.unique(self.ids)
        return [int(i) for i in ids if i != 0]


def argmax(pmap: ProbabilityMap) -> LabelMap:
    """Per-pixel label = smallest channel index attaining the maximum score."""
    labels = np.argmax(pmap.data, axis=2).astype(np.int32)
    return LabelMap(scheme_id=pmap.scheme_id, data=labels)


def remap_labels(label_map: LabelMap, table: RemapTable) -> LabelMap:
    """Apply a total index mapping; raise ImageRejected on dropped classes."""
    if label_map.scheme_id != table.source:
        raise ValidationError(
            f"remap expects scheme {table.source!r}, got {label_map.scheme_id!r}"
        )
    src = get_scheme(table.source)
    dst = get_scheme(table.target)
    table.validate_against(src, dst)
    if table.drop_set:
        hit = np.isin(label_map.data, list(table.drop_set))
        if hit.any():
            names = sorted(src.name_of(i) for i in table.drop_set)
            raise ImageRejected(
                f"image contains dropped source classes ({', '.join(names)})"
            )
    lut = np.zeros(src.class_count, dtype=np.int32)
    for i, j in table.mapping.items():
        lut[i] = j
    return LabelMap(scheme_id=table.target, data=lut[label_map.data])


def group_counts(label_map: LabelMap) -> dict[str, int]:
    """Pixel counts per non-background group; together with the background
    count they partition H x W."""
    scheme = get_scheme(label_map.scheme_id)
    per_class = np.bincount(label_map.data.ravel(), minlength=scheme.class_count)
    counts: dict[str, int] = {g: 0 for g in scheme.foreground_groups()}
    for c in scheme.classes:
        if c.group != "background":
            counts[c.group] += int(per_class[c.index])
    return counts


def instance_semantics(inst: InstanceMap) -> LabelMap:
    """Render an instance map to per-pixel class labels (0 where no instance)."""
    if inst.ids.size == 0 or inst.ids.max() == 0:
        return LabelMap(scheme_id=inst.scheme_id, data=np.zeros_like(inst.ids))
    lut = np.zeros(int(inst.ids.max()) + 1, dtype=np.int32)
    for inst_id, cls in inst.classes.items():
        if inst_id < lut.size:
            lut[inst_id] = cls
    return LabelMap(scheme_id=inst.scheme_id, data=lut[inst.ids])
