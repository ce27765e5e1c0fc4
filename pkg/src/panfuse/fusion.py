"""Tissue ensemble fusion and auto-context input composition.

The ensemble combines two segmenters' probability maps channel by channel:
epidermis and necrosis are averaged, blood vessel comes straight from the
second model (the vessel specialist), tumor and stroma straight from the
first. The same rule set serves the initial and the final tissue stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError, ValidationError
from .maps import LabelMap, ProbabilityMap, argmax
from .schemes import get_scheme

SOURCES = ("segformer_only", "unet_only", "mean")


@dataclass(frozen=True)
class FusionRuleSet:
    """Per-class source selection over a tissue scheme.

    ``rules`` maps every foreground class name to one of ``segformer_only``,
    ``unet_only`` or ``mean``; the background channel has its own source.
    """

    scheme_id: str
    rules: dict[str, str]
    background_source: str = "segformer_only"

    def __post_init__(self) -> None:
        scheme = get_scheme(self.scheme_id)
        foreground = {scheme.name_of(i) for i in scheme.foreground_indices()}
        if set(self.rules) != foreground:
            missing = foreground - set(self.rules)
            extra = set(self.rules) - foreground
            raise ValidationError(
                f"fusion rules must cover every foreground class exactly once "
                f"(missing {sorted(missing)}, extra {sorted(extra)})"
            )
        for name, source in self.rules.items():
            if source not in SOURCES:
                raise ValidationError(f"unknown fusion source {source!r} for {name!r}")
        if self.background_source not in SOURCES:
            raise ValidationError(
                f"unknown background source {self.background_source!r}"
            )

    def source_of(self, index: int) -> str:
        scheme = get_scheme(self.scheme_id)
        if index == 0:
            return self.background_source
        return self.rules[scheme.name_of(index)]

    def needs_unet(self) -> bool:
        sources = set(self.rules.values()) | {self.background_source}
        return bool(sources & {"unet_only", "mean"})


def default_rules(scheme_id: str = "puma_tissue6") -> FusionRuleSet:
    """The published ensemble: mean for epidermis/necrosis, vessel from the
    U-Net, tumor/stroma (and background) from the SegFormer."""
    return FusionRuleSet(
        scheme_id=scheme_id,
        rules={
            "epidermis": "mean",
            "necrosis": "mean",
            "blood_vessel": "unet_only",
            "tumor": "segformer_only",
            "stroma": "segformer_only",
        },
    )


def segformer_only_rules(scheme_id: str = "puma_tissue6") -> FusionRuleSet:
    scheme = get_scheme(scheme_id)
    return FusionRuleSet(
        scheme_id=scheme_id,
        rules={scheme.name_of(i): "segformer_only" for i in scheme.foreground_indices()},
    )


def vessel_only_rules(scheme_id: str = "puma_tissue6") -> FusionRuleSet:
    """U-Net branch without the averaging rules: only the blood-vessel
    channel is replaced."""
    scheme = get_scheme(scheme_id)
    rules = {scheme.name_of(i): "segformer_only" for i in scheme.foreground_indices()}
    rules["blood_vessel"] = "unet_only"
    return FusionRuleSet(scheme_id=scheme_id, rules=rules)


NAMED_RULESETS = {
    "default": default_rules,
    "segformer-only": segformer_only_rules,
    "vessel-unet": vessel_only_rules,
}


def ruleset_by_name(name: str, scheme_id: str = "puma_tissue6") -> FusionRuleSet:
    try:
        return NAMED_RULESETS[name](scheme_id)
    except KeyError:
        raise UsageError(
            f"unknown rule set {name!r}; expected one of {sorted(NAMED_RULESETS)}"
        ) from None


def fuse_tissue(
    segformer: ProbabilityMap, unet: ProbabilityMap | None, rules: FusionRuleSet
) -> ProbabilityMap:
    """Combine two probability maps channel-wise per the rule set.

    Mean channels are computed in float32 as 0.5 * (a + b); source channels
    are copied bitwise from the selected model. ``unet`` may be omitted only
    when no rule reads it.
    """
    if unet is None:
        if rules.needs_unet():
            raise ValidationError(
                "rule set reads the second model but no map was given"
            )
    else:
        if segformer.scheme_id != unet.scheme_id:
            raise ValidationError(
                f"cannot fuse maps under different schemes "
                f"({segformer.scheme_id!r} vs {unet.scheme_id!r})"
            )
        if segformer.data.shape != unet.data.shape:
            raise ValidationError(
                f"cannot fuse maps of different shapes "
                f"({segformer.data.shape} vs {unet.data.shape})"
            )
    if segformer.scheme_id != rules.scheme_id:
        raise ValidationError(
            f"rule set is for scheme {rules.scheme_id!r}, maps are "
            f"{segformer.scheme_id!r}"
        )
    fused = np.empty_like(segformer.data)
    half = np.float32(0.5)
    for ch in range(segformer.channels):
        source = rules.source_of(ch)
        if source == "segformer_only":
            fused[:, :, ch] = segformer.data[:, :, ch]
        elif source == "unet_only":
            fused[:, :, ch] = unet.data[:, :, ch]
        else:
            fused[:, :, ch] = (segformer.data[:, :, ch] + unet.data[:, :, ch]) * half
    return ProbabilityMap(scheme_id=segformer.scheme_id, data=fused)


def tissue_label(fused: ProbabilityMap) -> LabelMap:
    """Argmax over the fused scores; ties resolve to the lower index."""
    return argmax(fused)


@dataclass(frozen=True)
class AutoContextInput:
    """RGB plus one context channel, all values in [0, 1]."""

    context_scheme_id: str
    data: np.ndarray  # (H, W, 4) float32

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        if data.ndim != 3 or data.shape[2] != 4:
            raise ValidationError(f"auto-context input must be H x W x 4, got {data.shape}")
        if not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0:
            raise ValidationError("auto-context values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def compose_autocontext(rgb: np.ndarray, context: LabelMap) -> AutoContextInput:
    """Stack a label map onto an RGB image as a fourth channel.

    The context channel encodes the class index linearly: index / (K - 1)
    where K is the scheme's class count, so distinct labels stay distinct.
    """
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"RGB input must be H x W x 3, got {rgb.shape}")
    if rgb.shape[:2] != context.data.shape:
        raise ValidationError(
            f"RGB shape {rgb.shape[:2]} does not match context {context.data.shape}"
        )
    if not np.isfinite(rgb).all() or rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValidationError("RGB values must lie in [0, 1]")
    k = get_scheme(context.scheme_id).class_count
    channel = context.data.astype(np.float32) / np.float32(k - 1)
    data = np.concatenate([rgb, channel[:, :, None]], axis=2)
    return AutoContextInput(context_scheme_id=context.scheme_id, data=data)
