"""Deterministic fusion engine for panoptic histopathology outputs.

Core layout: ``schemes`` and ``maps`` define the label vocabulary and array
containers, ``imgio`` the on-disk formats, ``framecls``/``fusion``/
``nucfuse``/``rescue`` the four pipeline stages, ``metrics`` the evaluation
suite, ``pipeline`` the manifest runner, ``synth`` the fixture generator.
The HTTP layer lives in ``panfuse.service`` and the command line in
``panfuse.cli``; neither is imported here so the engine stays usable
without them.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConsistencyError,
    CorruptionError,
    EngineError,
    FormatError,
    ImageRejected,
    UnknownSchemeError,
    UsageError,
    ValidationError,
)
from .framecls import ClassifierParams, FrameType, classify_frame
from .fusion import (
    FusionRuleSet,
    compose_autocontext,
    default_rules,
    fuse_tissue,
    ruleset_by_name,
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
    write_pmap,
    write_rgb_png,
)
from .maps import (
    InstanceMap,
    LabelMap,
    ProbabilityMap,
    argmax,
    group_counts,
    instance_semantics,
    remap_labels,
)
from .metrics import (
    centroids,
    connected_components,
    detection_f1,
    label_components,
    match_detections,
    mean_track_score,
    micro_dice,
    micro_pq,
    panoptic_quality,
    MetricReport,
)
from .nucfuse import BorderParams, VoteParams, border_correct, majority_vote_classify
from .pipeline import (
    PipelineConfig,
    PipelineParams,
    Toggles,
    config_from_dict,
    config_hash,
    eval_report,
    load_config,
    load_instance_lists,
    load_manifest,
    load_tissue_pairs,
    run_pipeline,
)
from .rescue import RescueParams, necrosis_rescue
from .schemes import (
    ClassScheme,
    RemapTable,
    SchemeClass,
    ext11_to_tissue6,
    get_scheme,
    identity_table,
    load_scheme_json,
    panoptils_to_puma,
    register_scheme,
    registered_scheme_ids,
    scheme_to_json_dict,
)
from .synth import DEFECTS, synth_fixtures

__all__ = [
    "__version__",
    "EngineError",
    "FormatError",
    "CorruptionError",
    "ValidationError",
    "ConsistencyError",
    "UnknownSchemeError",
    "UsageError",
    "ConfigError",
    "ImageRejected",
    "FrameType",
    "ClassifierParams",
    "classify_frame",
    "FusionRuleSet",
    "default_rules",
    "segformer_only_rules",
    "vessel_only_rules",
    "ruleset_by_name",
    "fuse_tissue",
    "tissue_label",
    "compose_autocontext",
    "read_pmap",
    "write_pmap",
    "read_label_png",
    "write_label_png",
    "read_instances",
    "write_instances",
    "read_rgb_png",
    "write_rgb_png",
    "ProbabilityMap",
    "LabelMap",
    "InstanceMap",
    "argmax",
    "remap_labels",
    "group_counts",
    "instance_semantics",
    "MetricReport",
    "label_components",
    "connected_components",
    "centroids",
    "match_detections",
    "micro_dice",
    "detection_f1",
    "panoptic_quality",
    "micro_pq",
    "mean_track_score",
    "VoteParams",
    "majority_vote_classify",
    "BorderParams",
    "border_correct",
    "RescueParams",
    "necrosis_rescue",
    "Toggles",
    "PipelineParams",
    "PipelineConfig",
    "config_hash",
    "config_from_dict",
    "load_config",
    "load_manifest",
    "load_tissue_pairs",
    "load_instance_lists",
    "run_pipeline",
    "eval_report",
    "ClassScheme",
    "SchemeClass",
    "RemapTable",
    "get_scheme",
    "register_scheme",
    "registered_scheme_ids",
    "load_scheme_json",
    "scheme_to_json_dict",
    "identity_table",
    "ext11_to_tissue6",
    "panoptils_to_puma",
    "DEFECTS",
    "synth_fixtures",
]
