"""Nuclei-side fusion: re-classify instances by pixel majority vote against a
class map, and rebuild instances inside the frame border band.

Both operations leave interior geometry untouched; only class assignments
(majority vote) or the border band (border correction) change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .maps import InstanceMap, LabelMap
from .metrics import label_components
from .schemes import get_scheme

__all__ = [
    "VoteParams",
    "majority_vote_classify",
    "BorderParams",
    "border_correct",
]

_FALLBACKS = ("keep_original", "lowest_foreground")


@dataclass(frozen=True)
class VoteParams:
    """fallback_policy decides an instance's class when every one of its
    pixels votes background."""

    fallback_policy: str = "keep_original"

    def __post_init__(self):
        if self.fallback_policy not in _FALLBACKS:
            raise ValidationError(
                f"unknown fallback_policy {self.fallback_policy!r}; "
                f"expected one of {_FALLBACKS}"
            )


def majority_vote_classify(
    inst: InstanceMap, classmap: LabelMap, params: VoteParams = VoteParams()
) -> InstanceMap:
    """Assign each instance the class most frequent among its pixels in
    ``classmap``, ignoring background pixels. Ties go to the lowest class
    index. Instance geometry is returned unchanged.
    """
    if inst.scheme_id != classmap.scheme_id:
        raise ValidationError(
            f"instance/classmap schemes differ "
            f"({inst.scheme_id!r} vs {classmap.scheme_id!r})"
        )
    if inst.ids.shape != classmap.data.shape:
        raise ValidationError(
            f"instance/classmap shapes differ "
            f"({inst.ids.shape} vs {classmap.data.shape})"
        )
    scheme = get_scheme(inst.scheme_id)
    n_cls = scheme.class_count
    ids = inst.ids
    present = inst.present_ids()
    if not present:
        return InstanceMap(scheme_id=inst.scheme_id, ids=ids.copy(), classes={})

    max_id = int(ids.max())
    # joint histogram over (instance id, voted class) in one bincount
    sel = ids > 0
    joint = np.bincount(
        ids[sel].astype(np.int64) * n_cls + classmap.data[sel].astype(np.int64),
        minlength=(max_id + 1) * n_cls,
    ).reshape(max_id + 1, n_cls)
    joint[:, 0] = 0  # background pixels carry no vote
    winners = np.argmax(joint, axis=1)  # lowest index wins ties
    has_votes = joint.sum(axis=1) > 0

    classes: dict[int, int] = {}
    for i in present:
        if has_votes[i]:
            classes[i] = int(winners[i])
        elif params.fallback_policy == "keep_original":
            classes[i] = inst.classes[i]
        else:
            classes[i] = scheme.foreground_indices()[0]
    return InstanceMap(scheme_id=inst.scheme_id, ids=ids.copy(), classes=classes)


@dataclass(frozen=True)
class BorderParams:
    """margin: width in pixels of the band along each image edge that gets
    rebuilt from the class map. 0 disables the correction."""

    margin: int = 16

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError(f"margin must be >= 0, got {self.margin}")


def _band_mask(shape: tuple[int, int], margin: int) -> np.ndarray:
    band = np.zeros(shape, dtype=bool)
    band[:margin, :] = True
    band[-margin:, :] = True
    band[:, :margin] = True
    band[:, -margin:] = True
    return band


def border_correct(
    inst: InstanceMap, classmap: LabelMap, params: BorderParams = BorderParams()
) -> InstanceMap:
    """Rebuild instances inside the border band from the class map.

    Steps: erase instance pixels inside the band; take 8-connected components
    of the class map's foreground (over the full image); every component that
    intersects the band overwrites the band portion of the canvas. A component
    8-adjacent to exactly surviving instances merges into the one with the
    largest contact area (lowest id on ties); otherwise it becomes a new
    instance with a fresh id. Pixels outside the band are never modified.
    """
    if inst.scheme_id != classmap.scheme_id:
        raise ValidationError(
            f"instance/classmap schemes differ "
            f"({inst.scheme_id!r} vs {classmap.scheme_id!r})"
        )
    if inst.ids.shape != classmap.data.shape:
        raise ValidationError(
            f"instance/classmap shapes differ "
            f"({inst.ids.shape} vs {classmap.data.shape})"
        )
    h, w = inst.ids.shape
    if params.margin == 0:
        return InstanceMap(
            scheme_id=inst.scheme_id, ids=inst.ids.copy(), classes=dict(inst.classes)
        )
    if params.margin >= (min(h, w) + 1) // 2:
        raise ValidationError(
            f"margin {params.margin} leaves no interior for a {h}x{w} image"
        )

    band = _band_mask((h, w), params.margin)
    ids = inst.ids.copy()
    ids[band] = 0  # erase the band; interior ids survive as anchors

    comp_labels, n_comp = label_components(classmap.data > 0)
    if n_comp == 0:
        classes = {i: inst.classes[i] for i in np.unique(ids) if i != 0}
        return InstanceMap(scheme_id=inst.scheme_id, ids=ids, classes=classes)

    in_band = np.unique(comp_labels[band & (comp_labels > 0)])
    next_id = int(inst.ids.max()) + 1
    n_cls = get_scheme(inst.scheme_id).class_count
    fresh_classes: dict[int, int] = {}

    for comp in in_band.tolist():
        comp_mask = comp_labels == comp
        write_mask = comp_mask & band
        if not write_mask.any():
            continue
        # contact area with surviving instances across the 8-neighbourhood;
        # fresh ids written earlier can never touch a different component
        contact: dict[int, int] = {}
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                shifted = np.zeros_like(ids)
                src = shifted[
                    max(dr, 0) : h + min(dr, 0), max(dc, 0) : w + min(dc, 0)
                ]
                src[...] = ids[max(-dr, 0) : h - max(dr, 0), max(-dc, 0) : w - max(dc, 0)]
                touch = shifted[comp_mask]
                touch = touch[touch > 0]
                if touch.size:
                    for i, c in zip(*np.unique(touch, return_counts=True)):
                        contact[int(i)] = contact.get(int(i), 0) + int(c)
        if contact:
            best = max(contact.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            ids[write_mask] = best
        else:
            ids[write_mask] = next_id
            votes = np.bincount(classmap.data[comp_mask], minlength=n_cls)
            votes[0] = 0
            fresh_classes[next_id] = int(np.argmax(votes))
            next_id += 1

    classes: dict[int, int] = {}
    for i in np.unique(ids):
        i = int(i)
        if i == 0:
            continue
        classes[i] = inst.classes[i] if i in inst.classes else fresh_classes[i]
    return InstanceMap(scheme_id=inst.scheme_id, ids=ids, classes=classes)
