"""HTTP facade tests: route behavior and error mapping."""

import json
import shutil

import numpy as np
import pytest
from fastapi.testclient import TestClient

import panfuse
from panfuse import (
    LabelMap,
    default_rules,
    fuse_tissue,
    read_instances,
    read_label_png,
    read_pmap,
    run_pipeline,
    synth_fixtures,
    write_label_png,
)
from panfuse.pipeline import PipelineConfig
from panfuse.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    manifest = synth_fixtures(root, seed=5, frames=2, size=48, instances=4)
    return root, manifest


@pytest.fixture(scope="module")
def eval_dirs(data, tmp_path_factory):
    root, manifest = data
    out = tmp_path_factory.mktemp("svc_eval")
    run_pipeline(PipelineConfig(manifest=str(manifest)), out / "run")
    pred = out / "pred"
    gt = out / "gt"
    pred.mkdir()
    gt.mkdir()
    for fdir in sorted((out / "run" / "frames").iterdir()):
        fid = fdir.name
        shutil.copy(fdir / "tissue.png", pred / f"{fid}.tissue.png")
        shutil.copy(fdir / "nuclei.png", pred / f"{fid}.nuclei.png")
        shutil.copy(fdir / "nuclei.json", pred / f"{fid}.nuclei.json")
        src = root / "frames" / fid
        shutil.copy(src / "gt_tissue.png", gt / f"{fid}.tissue.png")
        shutil.copy(src / "gt_instances.png", gt / f"{fid}.nuclei.png")
        shutil.copy(src / "gt_instances.json", gt / f"{fid}.nuclei.json")
    return pred, gt


def _frame(data, fid):
    return data[0] / "frames" / fid


def _error(resp):
    body = resp.json()
    assert set(body) == {"error"}
    assert set(body["error"]) == {"category", "detail"}
    return body["error"]


# ---------------------------------------------------------------- basics


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "version": panfuse.__version__}


def test_schemes_listing_and_detail(client):
    listed = client.get("/schemes").json()["schemes"]
    assert "puma_tissue6" in listed and "puma_ext11" in listed
    detail = client.get("/schemes/puma_tissue6")
    assert detail.status_code == 200
    names = [c["name"] for c in detail.json()["classes"]]
    assert names == [
        "background",
        "tumor",
        "stroma",
        "epidermis",
        "necrosis",
        "blood_vessel",
    ]


def test_schemes_unknown_id(client):
    resp = client.get("/schemes/nope")
    assert resp.status_code == 422
    assert _error(resp)["category"] == "scheme"


# ---------------------------------------------------------------- classify


def test_classify_pmap_routes_frames(client, data):
    for fid, expected in (("f000", "primary"), ("f001", "metastatic")):
        resp = client.post(
            "/classify", json={"pmap": str(_frame(data, fid) / "ext11.pmap")}
        )
        assert resp.status_code == 200
        assert resp.json() == {"frame_type": expected}


def test_classify_labels_variant(client, data, tmp_path):
    from panfuse import argmax

    ext = argmax(read_pmap(_frame(data, "f000") / "ext11.pmap"))
    path = tmp_path / "ext.png"
    write_label_png(ext, path)
    resp = client.post("/classify", json={"labels": str(path)})
    assert resp.json() == {"frame_type": "primary"}


def test_classify_requires_exactly_one_source(client, data):
    resp = client.post("/classify", json={})
    assert resp.status_code == 400
    assert _error(resp)["category"] == "usage"
    both = client.post(
        "/classify",
        json={
            "pmap": str(_frame(data, "f000") / "ext11.pmap"),
            "labels": str(_frame(data, "f000") / "gt_tissue.png"),
        },
    )
    assert both.status_code == 400


def test_classify_missing_file_maps_to_usage(client):
    resp = client.post("/classify", json={"pmap": "/nowhere/ext.pmap"})
    assert resp.status_code == 400
    assert _error(resp)["category"] == "usage"


def test_classify_corrupt_pmap_maps_to_422(client, tmp_path):
    bad = tmp_path / "bad.pmap"
    bad.write_bytes(b"NOTPMAP0" + b"\x00" * 16)
    resp = client.post("/classify", json={"pmap": str(bad)})
    assert resp.status_code == 422
    assert _error(resp)["category"] == "format"


# ---------------------------------------------------------------- fuse


def test_fuse_writes_ensemble(client, data, tmp_path):
    seg = _frame(data, "f000") / "segformer_primary_s2.pmap"
    unet = _frame(data, "f000") / "unet.pmap"
    out = tmp_path / "fused.pmap"
    labels = tmp_path / "fused.png"
    resp = client.post(
        "/fuse",
        json={
            "segformer": str(seg),
            "unet": str(unet),
            "out": str(out),
            "labels_out": str(labels),
        },
    )
    assert resp.status_code == 200
    assert resp.json() == {"out": str(out), "labels_out": str(labels)}
    expected = fuse_tissue(read_pmap(seg), read_pmap(unet), default_rules())
    got = read_pmap(out)
    assert np.array_equal(got.data, expected.data)
    gt = read_label_png(_frame(data, "f000") / "gt_tissue.png", "puma_tissue6")
    assert np.array_equal(
        read_label_png(labels, "puma_tissue6").data, gt.data
    )


def test_fuse_unknown_ruleset(client, data, tmp_path):
    resp = client.post(
        "/fuse",
        json={
            "segformer": str(_frame(data, "f000") / "segformer_primary_s2.pmap"),
            "rules": "fancy",
            "out": str(tmp_path / "x.pmap"),
        },
    )
    assert resp.status_code == 400
    assert _error(resp)["category"] == "usage"


def test_fuse_missing_unet_for_default_rules(client, data, tmp_path):
    resp = client.post(
        "/fuse",
        json={
            "segformer": str(_frame(data, "f000") / "segformer_primary_s2.pmap"),
            "out": str(tmp_path / "x.pmap"),
        },
    )
    assert resp.status_code == 422
    assert _error(resp)["category"] == "validation"


def test_fuse_segformer_only_needs_no_unet(client, data, tmp_path):
    out = tmp_path / "solo.pmap"
    resp = client.post(
        "/fuse",
        json={
            "segformer": str(_frame(data, "f000") / "segformer_primary_s2.pmap"),
            "rules": "segformer-only",
            "out": str(out),
        },
    )
    assert resp.status_code == 200
    assert out.is_file()


# ---------------------------------------------------------------- nuclei


def test_nuclei_vote_and_border(client, data, tmp_path):
    f = _frame(data, "f000")
    out_png = tmp_path / "n.png"
    out_json = tmp_path / "n.json"
    resp = client.post(
        "/nuclei",
        json={
            "instances_png": str(f / "instances.png"),
            "instances_json": str(f / "instances.json"),
            "classmap_pmap": str(f / "classmap.pmap"),
            "out_png": str(out_png),
            "out_json": str(out_json),
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    got = read_instances(out_png, out_json)
    assert body["instance_count"] == len(got.classes)
    gt = read_instances(f / "gt_instances.png", f / "gt_instances.json")
    assert np.array_equal(got.ids > 0, gt.ids > 0)


def test_nuclei_classmap_png_needs_scheme(client, data, tmp_path):
    f = _frame(data, "f000")
    resp = client.post(
        "/nuclei",
        json={
            "instances_png": str(f / "instances.png"),
            "instances_json": str(f / "instances.json"),
            "classmap_png": str(f / "gt_tissue.png"),
            "out_png": str(tmp_path / "n.png"),
            "out_json": str(tmp_path / "n.json"),
        },
    )
    assert resp.status_code == 400
    assert "scheme" in _error(resp)["detail"]


def test_nuclei_requires_exactly_one_classmap(client, data, tmp_path):
    f = _frame(data, "f000")
    resp = client.post(
        "/nuclei",
        json={
            "instances_png": str(f / "instances.png"),
            "instances_json": str(f / "instances.json"),
            "out_png": str(tmp_path / "n.png"),
            "out_json": str(tmp_path / "n.json"),
        },
    )
    assert resp.status_code == 400


def test_nuclei_margin_too_large(client, data, tmp_path):
    f = _frame(data, "f000")
    resp = client.post(
        "/nuclei",
        json={
            "instances_png": str(f / "instances.png"),
            "instances_json": str(f / "instances.json"),
            "classmap_pmap": str(f / "classmap.pmap"),
            "margin": 24,
            "out_png": str(tmp_path / "n.png"),
            "out_json": str(tmp_path / "n.json"),
        },
    )
    assert resp.status_code == 422
    assert _error(resp)["category"] == "validation"


# ---------------------------------------------------------------- rescue


def _write_tissue(path, data):
    write_label_png(
        LabelMap(data=np.asarray(data, dtype=np.uint16), scheme_id="puma_tissue6"),
        path,
    )


def test_rescue_route(client, tmp_path):
    s1 = np.zeros((12, 12), dtype=np.uint16)
    s1[2:6, 2:6] = 4
    s4 = np.zeros((12, 12), dtype=np.uint16)
    s4[3, 3] = 4
    _write_tissue(tmp_path / "s1.png", s1)
    _write_tissue(tmp_path / "s4.png", s4)
    out = tmp_path / "out.png"
    resp = client.post(
        "/rescue",
        json={
            "stage1": str(tmp_path / "s1.png"),
            "stage4": str(tmp_path / "s4.png"),
            "out": str(out),
        },
    )
    assert resp.status_code == 200
    assert resp.json() == {"out": str(out), "rescued_pixels": 15}
    assert np.array_equal(read_label_png(out, "puma_tissue6").data, s1)

    numeric = client.post(
        "/rescue",
        json={
            "stage1": str(tmp_path / "s1.png"),
            "stage4": str(tmp_path / "s4.png"),
            "target_class": "4",
            "out": str(out),
        },
    )
    assert numeric.json()["rescued_pixels"] == 15


def test_rescue_unknown_class_name(client, tmp_path):
    _write_tissue(tmp_path / "a.png", np.zeros((4, 4), dtype=np.uint16))
    resp = client.post(
        "/rescue",
        json={
            "stage1": str(tmp_path / "a.png"),
            "stage4": str(tmp_path / "a.png"),
            "target_class": "plasma",
            "out": str(tmp_path / "o.png"),
        },
    )
    assert resp.status_code == 422
    assert _error(resp)["category"] == "validation"


# ---------------------------------------------------------------- eval


def test_eval_report_route(client, eval_dirs):
    pred, gt = eval_dirs
    resp = client.post("/eval/report", json={"pred": str(pred), "gt": str(gt)})
    assert resp.status_code == 200
    metrics = resp.json()["metrics"]
    assert metrics["micro_dice"]["aggregate"] == 1.0
    assert metrics["mean_track_score"] == 1.0


@pytest.mark.parametrize("metric", ["dice", "f1", "pq", "micropq"])
def test_eval_single_metric_routes(client, eval_dirs, metric):
    pred, gt = eval_dirs
    resp = client.post(f"/eval/{metric}", json={"pred": str(pred), "gt": str(gt)})
    assert resp.status_code == 200
    body = resp.json()
    assert body["aggregate"] == 1.0
    assert set(body) == {
        "metric",
        "per_class",
        "aggregate",
        "counts",
        "params",
        "metadata",
    }


def test_eval_unknown_metric(client, eval_dirs):
    pred, gt = eval_dirs
    resp = client.post("/eval/jaccard", json={"pred": str(pred), "gt": str(gt)})
    assert resp.status_code == 400
    assert "unknown metric" in _error(resp)["detail"]


def test_eval_misaligned_dirs(client, eval_dirs, tmp_path):
    pred, gt = eval_dirs
    partial = tmp_path / "partial"
    partial.mkdir()
    for p in pred.iterdir():
        if not p.name.startswith("f000"):
            shutil.copy(p, partial / p.name)
    resp = client.post("/eval/dice", json={"pred": str(partial), "gt": str(gt)})
    assert resp.status_code == 400
    assert _error(resp)["category"] == "usage"


def test_eval_bad_radius_rejected_by_schema(client, eval_dirs):
    pred, gt = eval_dirs
    resp = client.post(
        "/eval/f1", json={"pred": str(pred), "gt": str(gt), "radius": 0}
    )
    assert resp.status_code == 422
    assert "detail" in resp.json()


# ---------------------------------------------------------------- pipeline


def test_pipeline_run_inline_config(client, data, tmp_path):
    _, manifest = data
    resp = client.post(
        "/pipeline/run",
        json={"config": {"manifest": str(manifest)}, "out_dir": str(tmp_path / "r")},
    )
    assert resp.status_code == 200
    report = resp.json()["report"]
    assert report["metrics"]["mean_track_score"] == 1.0
    assert (tmp_path / "r" / "report.json").is_file()


def test_pipeline_run_config_path(client, data, tmp_path):
    _, manifest = data
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"manifest": str(manifest)}))
    resp = client.post(
        "/pipeline/run",
        json={"config_path": str(cfg), "out_dir": str(tmp_path / "r")},
    )
    assert resp.status_code == 200


def test_pipeline_run_requires_exactly_one_config(client, tmp_path):
    resp = client.post("/pipeline/run", json={"out_dir": str(tmp_path)})
    assert resp.status_code == 400


def test_pipeline_run_bad_config_is_400(client, data, tmp_path):
    _, manifest = data
    resp = client.post(
        "/pipeline/run",
        json={
            "config": {"manifest": str(manifest), "toggles": {"stage5": True}},
            "out_dir": str(tmp_path / "r"),
        },
    )
    assert resp.status_code == 400
    assert _error(resp)["category"] == "config"


def test_pipeline_run_jobs_schema(client, data, tmp_path):
    _, manifest = data
    resp = client.post(
        "/pipeline/run",
        json={
            "config": {"manifest": str(manifest)},
            "out_dir": str(tmp_path / "r"),
            "jobs": 0,
        },
    )
    assert resp.status_code == 422


# ---------------------------------------------------------------- synth


def test_synth_route(client, tmp_path):
    resp = client.post(
        "/synth", json={"out_dir": str(tmp_path), "frames": 1, "size": 32}
    )
    assert resp.status_code == 200
    manifest = resp.json()["manifest"]
    assert json.loads(open(manifest).read())[0]["frame_id"] == "f000"


def test_synth_bad_defect(client, tmp_path):
    resp = client.post(
        "/synth", json={"out_dir": str(tmp_path), "defects": ["smudge"]}
    )
    assert resp.status_code == 400
    assert _error(resp)["category"] == "usage"
