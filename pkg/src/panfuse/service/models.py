"""Request and response schemas for the HTTP service.

All heavy payloads stay on disk; requests carry file paths visible to the
server process plus the small scalar knobs. Responses embed metric or run
reports as plain JSON objects.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    category: str
    detail: str


class HealthResponse(BaseModel):
    status: str
    version: str


class SchemeClassModel(BaseModel):
    index: int
    name: str
    group: str


class SchemeResponse(BaseModel):
    scheme_id: str
    classes: list[SchemeClassModel]


class ClassifyRequest(BaseModel):
    pmap: Optional[str] = None
    labels: Optional[str] = None
    epidermis_min_pixels: int = 1
    use_epidermis_rule: bool = True


class ClassifyResponse(BaseModel):
    frame_type: Literal["primary", "metastatic"]


class FuseRequest(BaseModel):
    segformer: str
    unet: Optional[str] = None
    rules: str = "default"
    out: str
    labels_out: Optional[str] = None


class FuseResponse(BaseModel):
    out: str
    labels_out: Optional[str] = None


class NucleiRequest(BaseModel):
    instances_png: str
    instances_json: str
    classmap_png: Optional[str] = None
    classmap_pmap: Optional[str] = None
    scheme: Optional[str] = None
    margin: int = 16
    fallback_policy: str = "keep_original"
    out_png: str
    out_json: str


class NucleiResponse(BaseModel):
    out_png: str
    out_json: str
    instance_count: int


class RescueRequest(BaseModel):
    stage1: str
    stage4: str
    scheme: str = "puma_tissue6"
    target_class: str = "necrosis"
    out: str


class RescueResponse(BaseModel):
    out: str
    rescued_pixels: int


class EvalRequest(BaseModel):
    pred: str
    gt: str
    scheme: str = "puma_tissue6"
    radius: float = Field(default=15.0, gt=0)
    iou: float = Field(default=0.5, ge=0.0, lt=1.0)


class MetricResponse(BaseModel):
    metric: str
    per_class: dict[str, float]
    aggregate: float
    counts: dict[str, dict[str, float]]
    params: dict
    metadata: dict


class CombinedEvalResponse(BaseModel):
    metrics: dict


class PipelineRequest(BaseModel):
    config: Optional[dict] = None
    config_path: Optional[str] = None
    out_dir: str
    jobs: int = Field(default=1, ge=1)


class PipelineResponse(BaseModel):
    report: dict


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    frames: int = 4
    size: int = 128
    track: int = 2
    defects: list[str] = Field(default_factory=list)
    instances: int = 5


class SynthResponse(BaseModel):
    manifest: str
