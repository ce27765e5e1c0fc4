"""HTTP facade over the fusion engine.

Every operation the CLI exposes is a route here; the CLI itself is a thin
client. Payloads stay on disk (requests carry paths the server can see),
so the JSON bodies stay small and runs are reproducible from the same
request. Engine errors map to 400 for caller mistakes (usage, config) and
422 for data that parsed but failed validation.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import EngineError, UsageError
from ..framecls import ClassifierParams, classify_frame
from ..fusion import fuse_tissue, ruleset_by_name, tissue_label
from ..imgio import (
    read_instances,
    read_label_png,
    read_pmap,
    write_instances,
    write_label_png,
    write_pmap,
)
from ..maps import argmax
from ..metrics import detection_f1, micro_dice, micro_pq, panoptic_quality
from ..nucfuse import BorderParams, VoteParams, border_correct, majority_vote_classify
from ..pipeline import (
    config_from_dict,
    eval_report,
    load_config,
    load_instance_lists,
    load_tissue_pairs,
    run_pipeline,
)
from ..rescue import RescueParams, necrosis_rescue
from ..schemes import get_scheme, registered_scheme_ids
from ..synth import synth_fixtures
from .models import (
    ClassifyRequest,
    ClassifyResponse,
    CombinedEvalResponse,
    EvalRequest,
    FuseRequest,
    FuseResponse,
    HealthResponse,
    MetricResponse,
    NucleiRequest,
    NucleiResponse,
    PipelineRequest,
    PipelineResponse,
    RescueRequest,
    RescueResponse,
    SchemeResponse,
    SynthRequest,
    SynthResponse,
)

__all__ = ["create_app"]

_BAD_REQUEST_CATEGORIES = {"usage", "config"}


def _error_status(exc: EngineError) -> int:
    return 400 if exc.category in _BAD_REQUEST_CATEGORIES else 422


def _require_one(pairs: dict[str, object]) -> str:
    given = [name for name, value in pairs.items() if value is not None]
    if len(given) != 1:
        raise UsageError(
            f"exactly one of {sorted(pairs)} is required, got {sorted(given)}"
        )
    return given[0]


def create_app() -> FastAPI:
    app = FastAPI(title="panfuse", version=__version__)

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        return JSONResponse(
            status_code=_error_status(exc),
            content={"error": {"category": exc.category, "detail": str(exc)}},
        )

    @app.exception_handler(FileNotFoundError)
    async def missing_file_handler(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content={"error": {"category": "usage", "detail": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/schemes")
    def schemes() -> dict:
        return {"schemes": registered_scheme_ids()}

    @app.get("/schemes/{scheme_id}", response_model=SchemeResponse)
    def scheme_detail(scheme_id: str) -> SchemeResponse:
        scheme = get_scheme(scheme_id)
        return SchemeResponse(
            scheme_id=scheme.scheme_id,
            classes=[
                {"index": c.index, "name": c.name, "group": c.group}
                for c in scheme.classes
            ],
        )

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(req: ClassifyRequest) -> ClassifyResponse:
        which = _require_one({"pmap": req.pmap, "labels": req.labels})
        if which == "pmap":
            ext = argmax(read_pmap(req.pmap))
        else:
            ext = read_label_png(req.labels, "puma_ext11")
        frame_type = classify_frame(
            ext,
            ClassifierParams(epidermis_min_pixels=req.epidermis_min_pixels),
            epidermis_rule=req.use_epidermis_rule,
        )
        return ClassifyResponse(frame_type=frame_type.value)

    @app.post("/fuse", response_model=FuseResponse)
    def fuse(req: FuseRequest) -> FuseResponse:
        segformer = read_pmap(req.segformer)
        rules = ruleset_by_name(req.rules, scheme_id=segformer.scheme_id)
        unet = read_pmap(req.unet) if req.unet is not None else None
        fused = fuse_tissue(segformer, unet, rules)
        write_pmap(fused, req.out)
        if req.labels_out is not None:
            write_label_png(tissue_label(fused), req.labels_out)
        return FuseResponse(out=req.out, labels_out=req.labels_out)

    @app.post("/nuclei", response_model=NucleiResponse)
    def nuclei(req: NucleiRequest) -> NucleiResponse:
        inst = read_instances(req.instances_png, req.instances_json)
        which = _require_one(
            {"classmap_png": req.classmap_png, "classmap_pmap": req.classmap_pmap}
        )
        if which == "classmap_pmap":
            classmap = argmax(read_pmap(req.classmap_pmap))
        else:
            if req.scheme is None:
                raise UsageError("classmap_png requires 'scheme'")
            classmap = read_label_png(req.classmap_png, req.scheme)
        voted = majority_vote_classify(
            inst, classmap, VoteParams(fallback_policy=req.fallback_policy)
        )
        out = border_correct(voted, classmap, BorderParams(margin=req.margin))
        write_instances(out, req.out_png, req.out_json)
        return NucleiResponse(
            out_png=req.out_png,
            out_json=req.out_json,
            instance_count=len(out.classes),
        )

    @app.post("/rescue", response_model=RescueResponse)
    def rescue(req: RescueRequest) -> RescueResponse:
        stage1 = read_label_png(req.stage1, req.scheme)
        stage4 = read_label_png(req.stage4, req.scheme)
        scheme = get_scheme(req.scheme)
        name = req.target_class
        target = int(name) if name.isdigit() else scheme.index_of(name)
        out = necrosis_rescue(stage1, stage4, RescueParams(target_class=target))
        write_label_png(out, req.out)
        rescued = int(np.count_nonzero(out.data != stage4.data))
        return RescueResponse(out=req.out, rescued_pixels=rescued)

    @app.post("/eval/report", response_model=CombinedEvalResponse)
    def eval_combined(req: EvalRequest) -> CombinedEvalResponse:
        report = eval_report(
            req.pred,
            req.gt,
            tissue_scheme=req.scheme,
            radius=req.radius,
            iou_threshold=req.iou,
        )
        return CombinedEvalResponse(metrics=report["metrics"])

    @app.post("/eval/{metric}", response_model=MetricResponse)
    def eval_metric(metric: str, req: EvalRequest) -> MetricResponse:
        if metric == "dice":
            pairs = load_tissue_pairs(req.pred, req.gt, req.scheme)
            report = micro_dice(pairs)
        elif metric in ("f1", "pq", "micropq"):
            pred, gt = load_instance_lists(req.pred, req.gt)
            if metric == "f1":
                report = detection_f1(pred, gt, radius=req.radius)
            elif metric == "pq":
                report = panoptic_quality(pred, gt, iou_threshold=req.iou)
            else:
                report = micro_pq(pred, gt, iou_threshold=req.iou)
        else:
            raise UsageError(
                f"unknown metric {metric!r}; expected dice, f1, pq or micropq"
            )
        return MetricResponse(**report.to_json_dict())

    @app.post("/pipeline/run", response_model=PipelineResponse)
    def pipeline_run(req: PipelineRequest) -> PipelineResponse:
        which = _require_one({"config": req.config, "config_path": req.config_path})
        if which == "config_path":
            config = load_config(req.config_path)
        else:
            config = config_from_dict(req.config)
        report = run_pipeline(config, req.out_dir, jobs=req.jobs)
        return PipelineResponse(report=report)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        manifest = synth_fixtures(
            req.out_dir,
            seed=req.seed,
            frames=req.frames,
            size=req.size,
            track=req.track,
            defects=tuple(req.defects),
            instances=req.instances,
        )
        return SynthResponse(manifest=str(manifest))

    return app
