"""Orchestration tests: config validation, manifest loading, run identity."""

import filecmp
import json
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from panfuse import (
    ConfigError,
    PipelineConfig,
    PipelineParams,
    Toggles,
    UsageError,
    config_from_dict,
    config_hash,
    eval_report,
    load_config,
    load_instance_lists,
    load_manifest,
    load_tissue_pairs,
    run_pipeline,
    synth_fixtures,
)


@pytest.fixture(scope="module")
def clean_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean")
    return synth_fixtures(root, seed=7, frames=4, size=48, instances=4)


@pytest.fixture(scope="module")
def route_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("route")
    return synth_fixtures(
        root, seed=11, frames=4, size=48, instances=4, defects=("route",)
    )


@pytest.fixture(scope="module")
def defect_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("defects")
    return synth_fixtures(
        root, seed=3, frames=2, size=48, instances=4, defects=("border", "necrosis")
    )


def _cfg(manifest, **kw):
    return PipelineConfig(manifest=str(manifest), **kw)


# ---------------------------------------------------------------- config


def test_config_defaults_valid(clean_manifest):
    cfg = _cfg(clean_manifest)
    assert cfg.track == 2
    assert cfg.rescue_active()
    assert cfg.ruleset().needs_unet()


def test_config_track_rejected(clean_manifest):
    with pytest.raises(ConfigError):
        _cfg(clean_manifest, track=3)


def test_config_override_values(clean_manifest):
    _cfg(clean_manifest, frame_type_override="primary")
    _cfg(clean_manifest, frame_type_override="metastatic")
    with pytest.raises(ConfigError):
        _cfg(clean_manifest, frame_type_override="both")


def test_config_stage4_needs_routing(clean_manifest):
    with pytest.raises(ConfigError):
        _cfg(clean_manifest, toggles=Toggles(classifier=False))
    # an explicit frame type substitutes for the classifier
    _cfg(
        clean_manifest,
        toggles=Toggles(classifier=False),
        frame_type_override="primary",
    )
    # and with stage4 off no routing is needed at all
    _cfg(clean_manifest, toggles=Toggles(classifier=False, stage4=False))


def test_config_rescue_toggle_dependencies(clean_manifest):
    on = PipelineParams(rescue_enabled=True)
    _cfg(clean_manifest, params=on)
    with pytest.raises(ConfigError):
        _cfg(
            clean_manifest,
            toggles=Toggles(classifier=False, stage4=False),
            params=on,
        )
    with pytest.raises(ConfigError):
        _cfg(clean_manifest, toggles=Toggles(post_processing=False), params=on)


@pytest.mark.parametrize(
    "params",
    [
        {"epidermis_min_pixels": 0},
        {"border_margin": -1},
        {"vote_fallback": "nearest"},
        {"rescue_class": 0},
        {"radius": 0.0},
        {"radius": -2.0},
        {"iou_threshold": 1.0},
        {"iou_threshold": -0.1},
    ],
)
def test_config_bad_params_fail_eagerly(clean_manifest, params):
    with pytest.raises(ConfigError):
        _cfg(clean_manifest, params=PipelineParams(**params))


def test_rescue_active_matrix(clean_manifest):
    assert _cfg(clean_manifest).rescue_active()
    assert not _cfg(clean_manifest, track=1).rescue_active()
    assert _cfg(
        clean_manifest, track=1, params=PipelineParams(rescue_enabled=True)
    ).rescue_active()
    assert not _cfg(
        clean_manifest, params=PipelineParams(rescue_enabled=False)
    ).rescue_active()
    assert not _cfg(
        clean_manifest, toggles=Toggles(stage4=False)
    ).rescue_active()
    assert not _cfg(
        clean_manifest, toggles=Toggles(post_processing=False)
    ).rescue_active()


def test_ruleset_ladder(clean_manifest):
    default = _cfg(clean_manifest).ruleset()
    no_unet = _cfg(clean_manifest, toggles=Toggles(unet_branch=False)).ruleset()
    no_rules = _cfg(
        clean_manifest, toggles=Toggles(tissue_ensemble_rules=False)
    ).ruleset()
    assert default.needs_unet() and no_rules.needs_unet()
    assert not no_unet.needs_unet()
    assert default.rules["epidermis"] == "mean"
    assert no_rules.rules["epidermis"] == "segformer_only"
    assert no_rules.rules["blood_vessel"] == "unet_only"


# ---------------------------------------------------------------- config io


def test_config_from_dict_roundtrip(clean_manifest):
    cfg = _cfg(
        clean_manifest,
        track=1,
        toggles=Toggles(stage4=False, unet_branch=False),
        params=PipelineParams(border_margin=4, radius=9.5),
        frame_type_override="primary",
    )
    assert config_from_dict(cfg.to_json_dict()) == cfg


def test_config_from_dict_rejects_unknowns(clean_manifest):
    base = {"manifest": str(clean_manifest)}
    with pytest.raises(ConfigError):
        config_from_dict({**base, "mode": "fast"})
    with pytest.raises(ConfigError):
        config_from_dict({**base, "toggles": {"stage5": True}})
    with pytest.raises(ConfigError):
        config_from_dict({**base, "params": {"margin": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({})
    with pytest.raises(ConfigError):
        config_from_dict([str(clean_manifest)])


def test_config_from_dict_manifest_default(clean_manifest):
    cfg = config_from_dict({}, manifest_default=str(clean_manifest))
    assert cfg.manifest == str(clean_manifest)


def test_config_hash_ignores_manifest_location(clean_manifest):
    a = _cfg(clean_manifest)
    b = replace(a, manifest="/elsewhere/manifest.json")
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 64
    c = replace(a, params=PipelineParams(border_margin=8))
    d = replace(a, toggles=Toggles(stage4=False))
    assert config_hash(c) != config_hash(a)
    assert config_hash(d) != config_hash(a)


def test_load_config_resolves_relative_manifest(clean_manifest, tmp_path):
    cfg_path = tmp_path / "cfg" / "run.json"
    cfg_path.parent.mkdir()
    shutil.copytree(clean_manifest.parent, tmp_path / "cfg" / "data")
    cfg_path.write_text(json.dumps({"manifest": "data/manifest.json"}))
    cfg = load_config(cfg_path)
    assert Path(cfg.manifest) == tmp_path / "cfg" / "data" / "manifest.json"
    assert Path(cfg.manifest).is_file()

    absolute = tmp_path / "abs.json"
    absolute.write_text(json.dumps({"manifest": str(clean_manifest)}))
    assert load_config(absolute).manifest == str(clean_manifest)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


# ---------------------------------------------------------------- manifest


def _edited_manifest(manifest: Path, tmp_path: Path, edit) -> Path:
    """Copy the manifest with a record-level edit, same base directory."""
    records = json.loads(manifest.read_text())
    edit(records)
    out = manifest.parent / f"edited_{tmp_path.name}.json"
    out.write_text(json.dumps(records))
    return out


def test_load_manifest_full(clean_manifest):
    cfg = _cfg(clean_manifest)
    bundles = load_manifest(clean_manifest, cfg)
    assert [b.frame_id for b in bundles] == ["f000", "f001", "f002", "f003"]
    for b in bundles:
        assert b.ext11_pmap.is_file()
        assert set(b.segformer_s2) == {"primary", "metastatic"}
        assert b.unet_pmap is not None
        assert b.gt_tissue_png is not None


def test_load_manifest_duplicate_frame(clean_manifest, tmp_path):
    dup = _edited_manifest(
        clean_manifest, tmp_path, lambda rs: rs.append(dict(rs[0]))
    )
    with pytest.raises(ConfigError, match="duplicate"):
        load_manifest(dup, _cfg(clean_manifest))


def test_load_manifest_not_a_list(clean_manifest, tmp_path):
    for payload in ("{}", "[]", "[1]"):
        p = tmp_path / "m.json"
        p.write_text(payload)
        with pytest.raises(ConfigError):
            load_manifest(p, _cfg(clean_manifest))
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "none.json", _cfg(clean_manifest))


def test_load_manifest_stage2_required_only_when_routed(clean_manifest, tmp_path):
    def drop(rs):
        for r in rs:
            del r["segformer_s2"]

    m = _edited_manifest(clean_manifest, tmp_path, drop)
    with pytest.raises(ConfigError, match="stage2"):
        load_manifest(m, _cfg(clean_manifest))
    # unrouted runs never read the stage-2 heads
    off = _cfg(clean_manifest, toggles=Toggles(classifier=False, stage4=False))
    assert len(load_manifest(m, off)) == 4


def test_load_manifest_stage4_required_only_when_enabled(clean_manifest, tmp_path):
    def drop(rs):
        for r in rs:
            del r["segformer_s4"]

    m = _edited_manifest(clean_manifest, tmp_path, drop)
    with pytest.raises(ConfigError, match="stage4"):
        load_manifest(m, _cfg(clean_manifest))
    assert load_manifest(m, _cfg(clean_manifest, toggles=Toggles(stage4=False)))


def test_load_manifest_unet_requirement_follows_ruleset(clean_manifest, tmp_path):
    def drop(rs):
        for r in rs:
            del r["unet_pmap"]

    m = _edited_manifest(clean_manifest, tmp_path, drop)
    with pytest.raises(ConfigError, match="vessel"):
        load_manifest(m, _cfg(clean_manifest))
    # the segformer-only ruleset has no vessel branch to feed
    assert load_manifest(m, _cfg(clean_manifest, toggles=Toggles(unet_branch=False)))


def test_load_manifest_gt_instances_need_both_files(clean_manifest, tmp_path):
    def drop_json(rs):
        del rs[0]["gt_instances_json"]

    m = _edited_manifest(clean_manifest, tmp_path, drop_json)
    with pytest.raises(ConfigError, match="together"):
        load_manifest(m, _cfg(clean_manifest))


def test_load_manifest_missing_file_on_disk(clean_manifest, tmp_path):
    def retarget(rs):
        rs[0]["rgb"] = "frames/f000/absent.png"

    m = _edited_manifest(clean_manifest, tmp_path, retarget)
    with pytest.raises(ConfigError, match="not found"):
        load_manifest(m, _cfg(clean_manifest))


# ---------------------------------------------------------------- runs


def _tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_run_clean_fixture_scores_one(clean_manifest, tmp_path):
    cfg = _cfg(clean_manifest)
    report = run_pipeline(cfg, tmp_path / "run")
    assert report["config_hash"] == config_hash(cfg)
    assert [f["frame_id"] for f in report["frames"]] == [
        "f000",
        "f001",
        "f002",
        "f003",
    ]
    assert [f["frame_type"] for f in report["frames"]] == [
        "primary",
        "metastatic",
        "primary",
        "metastatic",
    ]
    m = report["metrics"]
    assert m["micro_dice"]["aggregate"] == 1.0
    assert m["detection_f1"]["aggregate"] == 1.0
    assert m["panoptic_quality"]["aggregate"] == 1.0
    assert m["micro_pq"]["aggregate"] == 1.0
    assert m["mean_track_score"] == 1.0


def test_run_report_file_matches_return_and_stays_relative(
    clean_manifest, tmp_path
):
    out = tmp_path / "run"
    report = run_pipeline(_cfg(clean_manifest), out)
    text = (out / "report.json").read_text()
    assert text.endswith("\n")
    assert json.loads(text) == report
    # artifact references must survive relocating the output directory
    assert str(out) not in text
    for frame in report["frames"]:
        for rel in frame["artifacts"].values():
            assert not rel.startswith("/")
            assert (out / rel).is_file()


def test_run_is_idempotent_and_rerun_safe(clean_manifest, tmp_path):
    cfg = _cfg(clean_manifest)
    out = tmp_path / "run"
    run_pipeline(cfg, out)
    first = _tree_bytes(out)
    run_pipeline(cfg, out)
    assert _tree_bytes(out) == first


def test_run_parallel_matches_serial(clean_manifest, tmp_path):
    cfg = _cfg(clean_manifest)
    run_pipeline(cfg, tmp_path / "serial", jobs=1)
    run_pipeline(cfg, tmp_path / "parallel", jobs=4)
    assert _tree_bytes(tmp_path / "serial") == _tree_bytes(tmp_path / "parallel")


def test_run_rejects_bad_jobs(clean_manifest, tmp_path):
    with pytest.raises(UsageError):
        run_pipeline(_cfg(clean_manifest), tmp_path / "x", jobs=0)


def test_stage2_artifacts_independent_of_stage4(clean_manifest, tmp_path):
    on = tmp_path / "s4on"
    off = tmp_path / "s4off"
    run_pipeline(_cfg(clean_manifest), on)
    run_pipeline(_cfg(clean_manifest, toggles=Toggles(stage4=False)), off)
    for fid in ("f000", "f001", "f002", "f003"):
        for name in ("stage1_tissue.png", "stage2_tissue.png"):
            assert filecmp.cmp(
                on / "frames" / fid / name, off / "frames" / fid / name, shallow=False
            )
        assert (on / "frames" / fid / "stage4_tissue.png").is_file()
        assert not (off / "frames" / fid / "stage4_tissue.png").exists()
        # without the refinement stage the final map is the stage-2 map
        assert filecmp.cmp(
            off / "frames" / fid / "tissue.png",
            off / "frames" / fid / "stage2_tissue.png",
            shallow=False,
        )


def test_unrouted_run_reports_no_frame_type(clean_manifest, tmp_path):
    cfg = _cfg(clean_manifest, toggles=Toggles(classifier=False, stage4=False))
    out = tmp_path / "run"
    report = run_pipeline(cfg, out)
    assert all(f["frame_type"] is None for f in report["frames"])
    for fid in ("f000", "f001"):
        assert filecmp.cmp(
            out / "frames" / fid / "stage1_tissue.png",
            out / "frames" / fid / "stage2_tissue.png",
            shallow=False,
        )


def test_override_beats_classifier_on_misrouted_heads(route_manifest, tmp_path):
    # the route defect corrupts only the off-type model heads, so correct
    # routing still scores a perfect dice
    routed = run_pipeline(_cfg(route_manifest), tmp_path / "routed")
    assert routed["metrics"]["micro_dice"]["aggregate"] == 1.0

    forced = run_pipeline(
        _cfg(
            route_manifest,
            toggles=Toggles(classifier=False),
            frame_type_override="metastatic",
        ),
        tmp_path / "forced",
    )
    assert all(f["frame_type"] == "metastatic" for f in forced["frames"])
    assert forced["metrics"]["micro_dice"]["aggregate"] < 1.0


def test_post_processing_repairs_defects(defect_manifest, tmp_path):
    full = run_pipeline(_cfg(defect_manifest), tmp_path / "full")
    bare = run_pipeline(
        _cfg(defect_manifest, toggles=Toggles(post_processing=False)),
        tmp_path / "bare",
    )
    assert full["metrics"]["detection_f1"]["aggregate"] == 1.0
    assert full["metrics"]["micro_dice"]["aggregate"] == 1.0
    assert (
        bare["metrics"]["detection_f1"]["aggregate"]
        < full["metrics"]["detection_f1"]["aggregate"]
    )
    assert (
        bare["metrics"]["micro_dice"]["aggregate"]
        < full["metrics"]["micro_dice"]["aggregate"]
    )


def test_run_without_ground_truth_yields_no_metrics(clean_manifest, tmp_path):
    def strip(rs):
        for r in rs:
            for key in ("gt_tissue_png", "gt_instances_png", "gt_instances_json"):
                del r[key]

    m = _edited_manifest(clean_manifest, tmp_path, strip)
    report = run_pipeline(_cfg(m), tmp_path / "run")
    assert report["metrics"] == {}


# ---------------------------------------------------------------- eval dirs


@pytest.fixture(scope="module")
def eval_dirs(clean_manifest, tmp_path_factory):
    """Prediction and ground-truth directories in eval layout."""
    root = tmp_path_factory.mktemp("eval")
    out = root / "run"
    run_pipeline(_cfg(clean_manifest), out)
    pred = root / "pred"
    gt = root / "gt"
    pred.mkdir()
    gt.mkdir()
    for fdir in sorted((out / "frames").iterdir()):
        fid = fdir.name
        shutil.copy(fdir / "tissue.png", pred / f"{fid}.tissue.png")
        shutil.copy(fdir / "nuclei.png", pred / f"{fid}.nuclei.png")
        shutil.copy(fdir / "nuclei.json", pred / f"{fid}.nuclei.json")
        src = clean_manifest.parent / "frames" / fid
        shutil.copy(src / "gt_tissue.png", gt / f"{fid}.tissue.png")
        shutil.copy(src / "gt_instances.png", gt / f"{fid}.nuclei.png")
        shutil.copy(src / "gt_instances.json", gt / f"{fid}.nuclei.json")
    return pred, gt


def test_eval_report_combined(eval_dirs):
    pred, gt = eval_dirs
    report = eval_report(pred, gt)
    m = report["metrics"]
    assert set(m) == {
        "micro_dice",
        "detection_f1",
        "panoptic_quality",
        "micro_pq",
        "mean_track_score",
    }
    assert m["micro_dice"]["aggregate"] == 1.0
    assert m["mean_track_score"] == 1.0


def test_eval_loaders_pair_by_relative_path(eval_dirs):
    pred, gt = eval_dirs
    pairs = load_tissue_pairs(pred, gt)
    assert len(pairs) == 4
    for p, g in pairs:
        assert np.array_equal(p.data, g.data)
    pred_maps, gt_maps = load_instance_lists(pred, gt)
    assert len(pred_maps) == len(gt_maps) == 4


def test_eval_single_sided_directories(eval_dirs, tmp_path):
    pred, gt = eval_dirs
    tissue_pred = tmp_path / "tp"
    tissue_gt = tmp_path / "tg"
    tissue_pred.mkdir()
    tissue_gt.mkdir()
    for p in pred.glob("*.tissue.png"):
        shutil.copy(p, tissue_pred / p.name)
    for p in gt.glob("*.tissue.png"):
        shutil.copy(p, tissue_gt / p.name)
    report = eval_report(tissue_pred, tissue_gt)
    assert set(report["metrics"]) == {"micro_dice"}


def test_eval_orphans_and_empty_gt_rejected(eval_dirs, tmp_path):
    pred, gt = eval_dirs
    partial = tmp_path / "partial"
    partial.mkdir()
    for p in pred.iterdir():
        if not p.name.startswith("f000"):
            shutil.copy(p, partial / p.name)
    with pytest.raises(UsageError, match="align"):
        eval_report(partial, gt)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(UsageError, match="ground truth"):
        eval_report(pred, empty)
    with pytest.raises(UsageError, match="not a directory"):
        eval_report(pred, tmp_path / "nowhere")
