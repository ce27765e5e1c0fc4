"""Four-stage orchestration over a manifest of per-frame model outputs.

Stage order per frame: route the frame (rule classifier or override), fuse
the initial tissue maps, classify nuclei instances by majority vote, fuse
the refined tissue maps, then post-process (border rebuild for nuclei,
component rescue for tissue). Ablation toggles switch each piece off in the
same combinations as the module study.

Frames are independent; any parallelism degree gives byte-identical outputs
because all aggregation happens in manifest order and reports contain no
timestamps or absolute paths.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError, ValidationError
from .framecls import ClassifierParams, FrameType, classify_frame
from .fusion import (
    FusionRuleSet,
    compose_autocontext,
    default_rules,
    fuse_tissue,
    segformer_only_rules,
    tissue_label,
    vessel_only_rules,
)
from .imgio import (
    read_instances,
    read_label_png,
    read_pmap,
    read_rgb_png,
    write_instances,
    write_label_png,
)
from .maps import InstanceMap, LabelMap, argmax, instance_semantics, remap_labels
from .metrics import (
    detection_f1,
    mean_track_score,
    micro_dice,
    micro_pq,
    panoptic_quality,
)
from .nucfuse import BorderParams, VoteParams, border_correct, majority_vote_classify
from .rescue import RescueParams, necrosis_rescue
from .schemes import ext11_to_tissue6

__all__ = [
    "Toggles",
    "PipelineParams",
    "PipelineConfig",
    "FrameBundle",
    "config_hash",
    "config_from_dict",
    "load_config",
    "load_manifest",
    "run_pipeline",
    "load_tissue_pairs",
    "load_instance_lists",
    "eval_report",
]

_TOGGLE_NAMES = (
    "classifier",
    "classification_rules",
    "unet_branch",
    "stage4",
    "tissue_ensemble_rules",
    "post_processing",
)


@dataclass(frozen=True)
class Toggles:
    classifier: bool = True
    classification_rules: bool = True
    unet_branch: bool = True
    stage4: bool = True
    tissue_ensemble_rules: bool = True
    post_processing: bool = True

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in _TOGGLE_NAMES}


@dataclass(frozen=True)
class PipelineParams:
    epidermis_min_pixels: int = 1
    border_margin: int = 16
    rescue_enabled: bool | None = None  # None: on for track 2 when reachable
    rescue_class: int = 4
    radius: float = 15.0
    iou_threshold: float = 0.5
    vote_fallback: str = "keep_original"

    def to_json_dict(self) -> dict:
        return {
            "epidermis_min_pixels": self.epidermis_min_pixels,
            "border_margin": self.border_margin,
            "rescue_enabled": self.rescue_enabled,
            "rescue_class": self.rescue_class,
            "radius": self.radius,
            "iou_threshold": self.iou_threshold,
            "vote_fallback": self.vote_fallback,
        }


@dataclass(frozen=True)
class PipelineConfig:
    manifest: str
    track: int = 2
    toggles: Toggles = field(default_factory=Toggles)
    params: PipelineParams = field(default_factory=PipelineParams)
    frame_type_override: str | None = None

    def __post_init__(self):
        if self.track not in (1, 2):
            raise ConfigError(f"track must be 1 or 2, got {self.track!r}")
        if self.frame_type_override is not None:
            values = {t.value for t in FrameType}
            if self.frame_type_override not in values:
                raise ConfigError(
                    f"frame_type_override must be one of {sorted(values)}, "
                    f"got {self.frame_type_override!r}"
                )
        t = self.toggles
        routed = t.classifier or self.frame_type_override is not None
        if t.stage4 and not routed:
            raise ConfigError(
                "stage4 requires a frame type: enable the classifier or set "
                "frame_type_override"
            )
        if self.params.rescue_enabled:
            if not t.stage4:
                raise ConfigError("rescue_enabled requires the stage4 toggle")
            if not t.post_processing:
                raise ConfigError("rescue_enabled requires the post_processing toggle")
        # surface bad parameter values as config problems up front
        try:
            ClassifierParams(epidermis_min_pixels=self.params.epidermis_min_pixels)
            BorderParams(margin=self.params.border_margin)
            VoteParams(fallback_policy=self.params.vote_fallback)
            RescueParams(enabled=True, target_class=self.params.rescue_class)
        except ValidationError as e:
            raise ConfigError(str(e)) from None
        if not self.params.radius > 0:
            raise ConfigError(f"radius must be > 0, got {self.params.radius}")
        if not 0.0 <= self.params.iou_threshold < 1.0:
            raise ConfigError(
                f"iou_threshold must lie in [0, 1), got {self.params.iou_threshold}"
            )

    def rescue_active(self) -> bool:
        t = self.toggles
        if not (t.stage4 and t.post_processing):
            return False
        if self.params.rescue_enabled is None:
            return self.track == 2
        return self.params.rescue_enabled

    def ruleset(self) -> FusionRuleSet:
        t = self.toggles
        if not t.unet_branch:
            return segformer_only_rules()
        if not t.tissue_ensemble_rules:
            return vessel_only_rules()
        return default_rules()

    def to_json_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "track": self.track,
            "toggles": self.toggles.to_json_dict(),
            "params": self.params.to_json_dict(),
            "frame_type_override": self.frame_type_override,
        }


def config_hash(config: PipelineConfig) -> str:
    """Hash of the semantic configuration (manifest location excluded, so
    relocating inputs does not change run identity)."""
    payload = config.to_json_dict()
    payload.pop("manifest")
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_from_dict(raw: dict, *, manifest_default: str | None = None) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {"manifest", "track", "toggles", "params", "frame_type_override"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    manifest = raw.get("manifest", manifest_default)
    if not manifest:
        raise ConfigError("config is missing 'manifest'")
    toggles_raw = raw.get("toggles", {})
    bad = set(toggles_raw) - set(_TOGGLE_NAMES)
    if bad:
        raise ConfigError(f"unknown toggles: {sorted(bad)}")
    toggles = Toggles(**{k: bool(v) for k, v in toggles_raw.items()})
    params_raw = raw.get("params", {})
    defaults = PipelineParams()
    bad = set(params_raw) - set(defaults.to_json_dict())
    if bad:
        raise ConfigError(f"unknown params: {sorted(bad)}")
    params = replace(defaults, **params_raw)
    try:
        return PipelineConfig(
            manifest=str(manifest),
            track=raw.get("track", 2),
            toggles=toggles,
            params=params,
            frame_type_override=raw.get("frame_type_override"),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    # relative manifest paths resolve against the config file's directory
    cfg = config_from_dict(raw)
    manifest = Path(cfg.manifest)
    if not manifest.is_absolute():
        cfg = replace(cfg, manifest=str(path.parent / manifest))
    return cfg


@dataclass(frozen=True)
class FrameBundle:
    """Resolved per-frame input paths; gt entries may be None."""

    frame_id: str
    rgb: Path
    ext11_pmap: Path
    segformer_s2: dict
    segformer_s4: dict
    unet_pmap: Path | None
    instances_png: Path
    instances_json: Path
    classmap_pmap: Path
    gt_tissue_png: Path | None
    gt_instances_png: Path | None
    gt_instances_json: Path | None


def _resolve(base: Path, rel, *, frame_id: str, stage: str) -> Path:
    if not isinstance(rel, str) or not rel:
        raise ConfigError(f"frame {frame_id!r}: missing path for {stage}")
    p = base / rel
    if not p.is_file():
        raise ConfigError(f"frame {frame_id!r}: {stage} file not found: {p}")
    return p


def load_manifest(manifest_path: str | Path, config: PipelineConfig) -> list[FrameBundle]:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ConfigError(f"manifest not found: {manifest_path}")
    try:
        records = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(records, list) or not records:
        raise ConfigError("manifest must be a non-empty JSON list of frame records")
    base = manifest_path.parent
    t = config.toggles
    routed = t.classifier or config.frame_type_override is not None
    needs_unet = routed and config.ruleset().needs_unet()

    seen: set[str] = set()
    bundles: list[FrameBundle] = []
    for idx, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ConfigError(f"manifest entry {idx} is not an object")
        fid = rec.get("frame_id")
        if not isinstance(fid, str) or not fid:
            raise ConfigError(f"manifest entry {idx} lacks a frame_id")
        if fid in seen:
            raise ConfigError(f"duplicate frame_id {fid!r} in manifest")
        seen.add(fid)

        def need(key, stage, rec=rec, fid=fid):
            return _resolve(base, rec.get(key), frame_id=fid, stage=stage)

        def need_pair(key, stage, rec=rec, fid=fid):
            sub = rec.get(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"frame {fid!r}: missing {stage} model paths")
            return {
                kind: _resolve(base, sub.get(kind), frame_id=fid, stage=f"{stage}.{kind}")
                for kind in ("primary", "metastatic")
            }

        def optional(png_key, rec=rec, fid=fid, stage="ground truth"):
            rel = rec.get(png_key)
            if rel is None:
                return None
            return _resolve(base, rel, frame_id=fid, stage=stage)

        seg_s2 = need_pair("segformer_s2", "stage2") if routed else {}
        seg_s4 = need_pair("segformer_s4", "stage4") if t.stage4 else {}
        unet = (
            need("unet_pmap", "stage2 vessel branch")
            if needs_unet
            else optional("unet_pmap", stage="stage2 vessel branch")
        )
        gt_inst_png = optional("gt_instances_png")
        gt_inst_json = optional("gt_instances_json")
        if (gt_inst_png is None) != (gt_inst_json is None):
            raise ConfigError(
                f"frame {fid!r}: gt instance png and json must come together"
            )
        bundles.append(
            FrameBundle(
                frame_id=fid,
                rgb=need("rgb", "auto-context input"),
                ext11_pmap=need("ext11_pmap", "stage1"),
                segformer_s2=seg_s2,
                segformer_s4=seg_s4,
                unet_pmap=unet,
                instances_png=need("instances_png", "stage3 instances"),
                instances_json=need("instances_json", "stage3 instances"),
                classmap_pmap=need("classmap_pmap", "stage3 class map"),
                gt_tissue_png=optional("gt_tissue_png"),
                gt_instances_png=gt_inst_png,
                gt_instances_json=gt_inst_json,
            )
        )
    return bundles


@dataclass
class _FrameResult:
    entry: dict
    tissue: LabelMap
    nuclei: InstanceMap
    gt_tissue: LabelMap | None
    gt_instances: InstanceMap | None


def _check_shape(frame_id: str, name: str, shape, expected) -> None:
    if shape != expected:
        raise ValidationError(
            f"frame {frame_id!r}: {name} shape {shape} does not match {expected}"
        )


def _save_npy(arr: np.ndarray, path: Path) -> None:
    with open(path, "wb") as f:
        np.save(f, arr)


def _run_frame(bundle: FrameBundle, config: PipelineConfig, out_dir: Path) -> _FrameResult:
    t = config.toggles
    fid = bundle.frame_id
    fdir = out_dir / "frames" / fid
    fdir.mkdir(parents=True, exist_ok=True)
    rel = f"frames/{fid}"
    artifacts: dict[str, str] = {}

    ext_pmap = read_pmap(bundle.ext11_pmap)
    shape = (ext_pmap.height, ext_pmap.width)
    ext_labels = argmax(ext_pmap)
    stage1_tissue = remap_labels(ext_labels, ext11_to_tissue6())
    write_label_png(stage1_tissue, fdir / "stage1_tissue.png")
    artifacts["stage1_tissue"] = f"{rel}/stage1_tissue.png"

    rgb = read_rgb_png(bundle.rgb)
    _check_shape(fid, "rgb", rgb.shape[:2], shape)

    if config.frame_type_override is not None:
        frame_type = FrameType(config.frame_type_override)
    elif t.classifier:
        frame_type = classify_frame(
            ext_labels,
            ClassifierParams(epidermis_min_pixels=config.params.epidermis_min_pixels),
            epidermis_rule=t.classification_rules,
        )
    else:
        frame_type = None

    unet = None
    if bundle.unet_pmap is not None and frame_type is not None:
        ruleset = config.ruleset()
        if ruleset.needs_unet():
            unet = read_pmap(bundle.unet_pmap)
            _check_shape(fid, "unet pmap", (unet.height, unet.width), shape)

    if frame_type is None:
        tissue_s2 = stage1_tissue
    else:
        seg2 = read_pmap(bundle.segformer_s2[frame_type.value])
        _check_shape(fid, "stage2 pmap", (seg2.height, seg2.width), shape)
        tissue_s2 = tissue_label(fuse_tissue(seg2, unet, config.ruleset()))
    write_label_png(tissue_s2, fdir / "stage2_tissue.png")
    artifacts["stage2_tissue"] = f"{rel}/stage2_tissue.png"

    ctx3 = compose_autocontext(rgb, tissue_s2)
    _save_npy(ctx3.data, fdir / "autocontext_s3.npy")
    artifacts["autocontext_s3"] = f"{rel}/autocontext_s3.npy"

    inst = read_instances(bundle.instances_png, bundle.instances_json)
    _check_shape(fid, "instances", inst.ids.shape, shape)
    class_pmap = read_pmap(bundle.classmap_pmap)
    _check_shape(fid, "class map", (class_pmap.height, class_pmap.width), shape)
    classmap = argmax(class_pmap)
    nuclei = majority_vote_classify(
        inst, classmap, VoteParams(fallback_policy=config.params.vote_fallback)
    )
    if t.post_processing:
        nuclei = border_correct(
            nuclei, classmap, BorderParams(margin=config.params.border_margin)
        )
    write_instances(nuclei, fdir / "nuclei.png", fdir / "nuclei.json")
    artifacts["nuclei_png"] = f"{rel}/nuclei.png"
    artifacts["nuclei_json"] = f"{rel}/nuclei.json"

    ctx4 = compose_autocontext(rgb, instance_semantics(nuclei))
    _save_npy(ctx4.data, fdir / "autocontext_s4.npy")
    artifacts["autocontext_s4"] = f"{rel}/autocontext_s4.npy"

    if t.stage4:
        seg4 = read_pmap(bundle.segformer_s4[frame_type.value])
        _check_shape(fid, "stage4 pmap", (seg4.height, seg4.width), shape)
        tissue_final = tissue_label(fuse_tissue(seg4, unet, config.ruleset()))
        write_label_png(tissue_final, fdir / "stage4_tissue.png")
        artifacts["stage4_tissue"] = f"{rel}/stage4_tissue.png"
        if config.rescue_active():
            tissue_final = necrosis_rescue(
                stage1_tissue,
                tissue_final,
                RescueParams(enabled=True, target_class=config.params.rescue_class),
            )
    else:
        tissue_final = tissue_s2

    write_label_png(tissue_final, fdir / "tissue.png")
    artifacts["tissue"] = f"{rel}/tissue.png"

    gt_tissue = None
    if bundle.gt_tissue_png is not None:
        gt_tissue = read_label_png(bundle.gt_tissue_png, tissue_final.scheme_id)
        _check_shape(fid, "gt tissue", gt_tissue.data.shape, shape)
    gt_instances = None
    if bundle.gt_instances_png is not None:
        gt_instances = read_instances(bundle.gt_instances_png, bundle.gt_instances_json)
        _check_shape(fid, "gt instances", gt_instances.ids.shape, shape)

    entry = {
        "frame_id": fid,
        "frame_type": frame_type.value if frame_type is not None else None,
        "artifacts": artifacts,
    }
    return _FrameResult(
        entry=entry,
        tissue=tissue_final,
        nuclei=nuclei,
        gt_tissue=gt_tissue,
        gt_instances=gt_instances,
    )


def run_pipeline(
    config: PipelineConfig, out_dir: str | Path, *, jobs: int = 1
) -> dict:
    """Execute all frames, write artifacts and report.json under out_dir,
    and return the report."""
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs}")
    bundles = load_manifest(config.manifest, config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if jobs == 1:
        results = [_run_frame(b, config, out_dir) for b in bundles]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_frame, b, config, out_dir) for b in bundles]
            # surface the first failure in manifest order, deterministically
            results = [f.result() for f in futures]

    report: dict = {
        "config_hash": config_hash(config),
        "config": config.to_json_dict(),
        "frames": [r.entry for r in results],
        "metrics": {},
    }

    with_gt_tissue = [r for r in results if r.gt_tissue is not None]
    with_gt_inst = [r for r in results if r.gt_instances is not None]
    metrics = report["metrics"]
    if with_gt_tissue:
        dice = micro_dice([(r.tissue, r.gt_tissue) for r in with_gt_tissue])
        metrics["micro_dice"] = dice.to_json_dict()
    if with_gt_inst:
        pred = [r.nuclei for r in with_gt_inst]
        gt = [r.gt_instances for r in with_gt_inst]
        f1 = detection_f1(pred, gt, radius=config.params.radius)
        metrics["detection_f1"] = f1.to_json_dict()
        metrics["panoptic_quality"] = panoptic_quality(
            pred, gt, iou_threshold=config.params.iou_threshold
        ).to_json_dict()
        metrics["micro_pq"] = micro_pq(
            pred, gt, iou_threshold=config.params.iou_threshold
        ).to_json_dict()
    if with_gt_tissue and with_gt_inst:
        metrics["mean_track_score"] = mean_track_score(
            metrics["micro_dice"]["aggregate"], metrics["detection_f1"]["aggregate"]
        )

    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    return report


def _collect(root: Path, suffix: str) -> dict[str, Path]:
    return {
        str(p.relative_to(root)): p
        for p in sorted(root.rglob(f"*{suffix}"))
        if p.is_file()
    }


def _check_aligned(pred_map: dict, gt_map: dict, kind: str) -> None:
    orphans_pred = sorted(set(pred_map) - set(gt_map))
    orphans_gt = sorted(set(gt_map) - set(pred_map))
    if orphans_pred or orphans_gt:
        raise UsageError(
            f"{kind} files do not align: only in pred {orphans_pred}, "
            f"only in gt {orphans_gt}"
        )


def load_tissue_pairs(
    pred_dir: str | Path, gt_dir: str | Path, scheme_id: str = "puma_tissue6"
) -> list[tuple[LabelMap, LabelMap]]:
    """Pair ``*.tissue.png`` files by relative path. Orphans on either side
    are a usage error; so is an empty ground truth."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    pred = _collect(pred_dir, ".tissue.png")
    gt = _collect(gt_dir, ".tissue.png")
    if not gt:
        raise UsageError(f"no *.tissue.png ground truth under {gt_dir}")
    _check_aligned(pred, gt, "tissue")
    return [
        (read_label_png(pred[k], scheme_id), read_label_png(gt[k], scheme_id))
        for k in sorted(gt)
    ]


def load_instance_lists(
    pred_dir: str | Path, gt_dir: str | Path
) -> tuple[list[InstanceMap], list[InstanceMap]]:
    """Pair ``*.nuclei.png`` + ``*.nuclei.json`` files by relative path."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    pred = _collect(pred_dir, ".nuclei.png")
    gt = _collect(gt_dir, ".nuclei.png")
    if not gt:
        raise UsageError(f"no *.nuclei.png ground truth under {gt_dir}")
    _check_aligned(pred, gt, "nuclei")

    def load(d: Path, k: str) -> InstanceMap:
        png = d / k
        return read_instances(png, png.with_suffix(".json"))

    keys = sorted(gt)
    return [load(pred_dir, k) for k in keys], [load(gt_dir, k) for k in keys]


def eval_report(
    pred_dir: str | Path,
    gt_dir: str | Path,
    *,
    tissue_scheme: str = "puma_tissue6",
    radius: float = 15.0,
    iou_threshold: float = 0.5,
) -> dict:
    """Score a prediction directory against a ground-truth directory.

    Files pair by relative path: tissue maps end in ``.tissue.png``, nuclei
    instances in ``.nuclei.png`` with a ``.nuclei.json`` sidecar. The result
    combines the tissue and nuclei metrics plus their mean when both sides
    are present.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    has_tissue = bool(_collect(gt_dir, ".tissue.png"))
    has_nuclei = bool(_collect(gt_dir, ".nuclei.png"))
    if not has_tissue and not has_nuclei:
        raise UsageError(
            f"no *.tissue.png or *.nuclei.png ground truth under {gt_dir}"
        )

    metrics: dict = {}
    if has_tissue:
        pairs = load_tissue_pairs(pred_dir, gt_dir, tissue_scheme)
        metrics["micro_dice"] = micro_dice(pairs).to_json_dict()
    if has_nuclei:
        pred, gt = load_instance_lists(pred_dir, gt_dir)
        metrics["detection_f1"] = detection_f1(pred, gt, radius=radius).to_json_dict()
        metrics["panoptic_quality"] = panoptic_quality(
            pred, gt, iou_threshold=iou_threshold
        ).to_json_dict()
        metrics["micro_pq"] = micro_pq(
            pred, gt, iou_threshold=iou_threshold
        ).to_json_dict()
    if "micro_dice" in metrics and "detection_f1" in metrics:
        metrics["mean_track_score"] = mean_track_score(
            metrics["micro_dice"]["aggregate"], metrics["detection_f1"]["aggregate"]
        )
    return {"metrics": metrics}
