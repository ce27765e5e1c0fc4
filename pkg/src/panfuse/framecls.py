"""Frame-type rule classifier on the extended 11-class tissue scheme.

Two handcrafted rules, applied to per-class pixel counts of the argmax
segmentation: a frame is primary if any primary-epidermis pixels are present
(epidermis only occurs in skin), otherwise primary if primary-group pixels
strictly outnumber metastatic-group pixels, otherwise metastatic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .maps import LabelMap
from .schemes import get_scheme

EXT_SCHEME_ID = "puma_ext11"


class FrameType(enum.Enum):
    PRIMARY = "primary"
    METASTATIC = "metastatic"


@dataclass(frozen=True)
class ClassifierParams:
    """Epidermis presence threshold; 1 pixel by default, configurable because
    single-pixel noise is plausible on real argmax maps."""

    epidermis_min_pixels: int = 1

    def __post_init__(self) -> None:
        if self.epidermis_min_pixels < 1:
            raise ValidationError("epidermis_min_pixels must be >= 1")


def classify_frame(
    ext_map: LabelMap,
    params: ClassifierParams = ClassifierParams(),
    *,
    epidermis_rule: bool = True,
) -> FrameType:
    """Decide Primary vs Metastatic from per-class pixel counts.

    ``epidermis_rule=False`` disables rule 1 and decides on pixel counts
    alone (ablation switch). Ties in the count rule fall to Metastatic.
    """
    if ext_map.scheme_id != EXT_SCHEME_ID:
        raise ValidationError(
            f"frame classifier expects scheme {EXT_SCHEME_ID!r}, "
            f"got {ext_map.scheme_id!r}"
        )
    scheme = get_scheme(EXT_SCHEME_ID)
    counts = np.bincount(ext_map.data.ravel(), minlength=scheme.class_count)

    if epidermis_rule:
        epidermis_idx = scheme.index_of("epidermis_primary")
        if counts[epidermis_idx] >= params.epidermis_min_pixels:
            return FrameType.PRIMARY

    primary_total = int(counts[list(scheme.indices_in_group("primary"))].sum())
    metastatic_total = int(counts[list(scheme.indices_in_group("metastatic"))].sum())
    if primary_total > metastatic_total:
        return FrameType.PRIMARY
    return FrameType.METASTATIC
