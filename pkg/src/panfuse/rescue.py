"""Stage-4 tissue repair: transfer whole early-stage components of one class
into the final map wherever they overlap the final map's pixels of that class.

Targets under-segmentation of a class (necrosis by default) that the later
refinement stage shrinks but the earlier stage still covers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .maps import LabelMap
from .metrics import label_components
from .schemes import get_scheme

__all__ = ["RescueParams", "necrosis_rescue"]


@dataclass(frozen=True)
class RescueParams:
    enabled: bool = True
    target_class: int = 4  # necrosis in the 6-class tissue scheme

    def __post_init__(self):
        if self.target_class < 1:
            raise ValidationError(
                f"target_class must be a foreground class, got {self.target_class}"
            )


def necrosis_rescue(
    stage1: LabelMap, stage4: LabelMap, params: RescueParams = RescueParams()
) -> LabelMap:
    """Overwrite stage4 with every 8-connected stage1 component of the target
    class that shares at least one pixel with stage4's target pixels.

    Disabled params return stage4 unchanged. Pixels that stage1 does not
    label as the target class are never modified.
    """
    if stage1.scheme_id != stage4.scheme_id:
        raise ValidationError(
            f"stage1/stage4 schemes differ "
            f"({stage1.scheme_id!r} vs {stage4.scheme_id!r})"
        )
    if stage1.data.shape != stage4.data.shape:
        raise ValidationError(
            f"stage1/stage4 shapes differ "
            f"({stage1.data.shape} vs {stage4.data.shape})"
        )
    scheme = get_scheme(stage4.scheme_id)
    if params.target_class >= scheme.class_count:
        raise ValidationError(
            f"target_class {params.target_class} not in scheme {scheme.scheme_id!r}"
        )
    if not params.enabled:
        return LabelMap(scheme_id=stage4.scheme_id, data=stage4.data.copy())

    target = params.target_class
    comps, count = label_components(stage1.data == target)
    out = stage4.data.copy()
    if count == 0:
        return LabelMap(scheme_id=stage4.scheme_id, data=out)

    hit = np.unique(comps[(stage4.data == target) & (comps > 0)])
    if hit.size:
        keep = np.zeros(count + 1, dtype=bool)
        keep[hit] = True
        out[keep[comps]] = target
    return LabelMap(scheme_id=stage4.scheme_id, data=out)
