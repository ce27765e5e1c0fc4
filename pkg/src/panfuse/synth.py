"""Deterministic synthetic frame bundles for desk-scale pipeline testing.

Each frame gets ground-truth tissue (quadrant boxes with a necrosis blob and
a vessel disc), non-overlapping nucleus discs, and model outputs that are
one-hot renderings of the ground truth. Defect flags corrupt specific model
outputs so that exactly one pipeline feature repairs each one:

  noise     ext map mislabels a box inside a stroma quadrant (within-group),
            hurting the projection-only route; routed fusion is clean
  rules     ext map pushes stroma quadrants of primary frames into the
            metastatic block, so the pixel-count rule misroutes; the
            epidermis-presence rule still routes correctly
  route     off-type segmenter maps swap tumor and stroma, so any
            misrouting becomes visible in the scores
  vessel    on-type segmenter scores the vessel disc stroma 0.6 / vessel
            0.4; the vessel specialist scores it 1.0
  ensemble  on-type segmenter scores the epidermis strip stroma 0.6 /
            epidermis 0.3; averaging with the specialist's 1.0 lifts
            epidermis to 0.65
  stage4    initial-stage map mislabels a refine box; the final-stage map
            is clean
  necrosis  final-stage maps turn a hole inside the necrosis blob into
            tumor; the stage-1 map still covers the blob
  border    instance pixels inside the border band are erased; the class
            map still covers them

All randomness comes from one seeded generator per frame, so equal calls
produce byte-identical directories.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import UsageError
from .imgio import write_instances, write_label_png, write_pmap, write_rgb_png
from .maps import InstanceMap, LabelMap, ProbabilityMap, instance_semantics
from .schemes import get_scheme

__all__ = ["DEFECTS", "border_band_width", "nucleus_radius", "synth_fixtures"]

DEFECTS = (
    "border",
    "necrosis",
    "noise",
    "route",
    "rules",
    "vessel",
    "ensemble",
    "stage4",
)

TISSUE = "puma_tissue6"
EXT = "puma_ext11"
_TRACK_SCHEMES = {1: "nuclei_track1", 2: "nuclei_track2"}


def border_band_width(size: int) -> int:
    """Band width the fixtures assume for border defects and corrections."""
    return max(6, size // 8)


def nucleus_radius(size: int) -> int:
    return 2 if size < 64 else 3


def _one_hot(labels: np.ndarray, channels: int) -> np.ndarray:
    return np.eye(channels, dtype=np.float32)[labels]


def _disc_mask(shape, center, radius) -> np.ndarray:
    rr, cc = np.indices(shape)
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2


class _Geometry:
    """Fixed per-size layout; every box stays clear of the border band."""

    def __init__(self, size: int):
        s = size
        q = border_band_width(s)
        mid = s // 2
        g = 2
        self.size = s
        self.band = q
        # quadrant boxes as (r0, r1, c0, c1)
        self.q1 = (q, mid - g, q, mid - g)  # tumor
        self.q2 = (q, mid - g, mid + g, s - q)  # stroma A
        strip = max(3, s // 16)
        self.q3 = (mid + g, mid + g + strip, q, mid - g)  # epidermis strip
        self.q4 = (mid + g, s - q, mid + g, s - q)  # stroma B
        n = max(5, s // 10)
        self.necrosis = (q + 1, q + 1 + n, q + 1, q + 1 + n)
        m = min(max(2, n - 4), n - 2)
        self.hole = (q + 2, q + 2 + m, q + 2, q + 2 + m)
        vr0, vr1, vc0, vc1 = self.q2
        self.vessel_center = ((vr0 + vr1) // 2, (vc0 + vc1) // 2)
        self.vessel_radius = min(max(2, s // 16), (min(vr1 - vr0, vc1 - vc0)) // 2 - 1)
        z = max(3, s // 12)
        r0, r1, c0, c1 = self.q4
        self.noise_box = (r0 + 1, r0 + 1 + z, c0 + 1, c0 + 1 + z)
        self.refine_box = (r1 - 1 - z, r1 - 1, c1 - 1 - z, c1 - 1)


def _fill(arr: np.ndarray, box, value) -> None:
    r0, r1, c0, c1 = box
    arr[r0:r1, c0:c1] = value


def _gt_tissue(geom: _Geometry, primary: bool) -> np.ndarray:
    gt = np.zeros((geom.size, geom.size), dtype=np.int32)
    _fill(gt, geom.q1, 1)
    _fill(gt, geom.q2, 2)
    _fill(gt, geom.q3, 3 if primary else 1)
    _fill(gt, geom.q4, 2)
    _fill(gt, geom.necrosis, 4)
    gt[_disc_mask(gt.shape, geom.vessel_center, geom.vessel_radius)] = 5
    return gt


def _gt_nuclei(
    geom: _Geometry, rng: np.random.Generator, scheme_id: str, instances: int
) -> InstanceMap:
    s, q = geom.size, geom.band
    n_classes = get_scheme(scheme_id).class_count
    r = nucleus_radius(s)
    centers: list[tuple[int, int]] = []
    # three discs fully inside the top border band
    row = q - 1 - r
    col = q + 2 + r
    for _ in range(3):
        if col + r >= s:
            break
        centers.append((row, col))
        col += 2 * r + 3
    # interior discs on a sparse grid, clear of the band on all sides
    lo, hi = q + r + 2, s - q - r - 2
    grid = [
        (rr, cc)
        for rr in range(lo, hi + 1, 2 * r + 3)
        for cc in range(lo, hi + 1, 2 * r + 3)
    ]
    k = min(instances, len(grid))
    picks = rng.choice(len(grid), size=k, replace=False)
    centers.extend(grid[i] for i in sorted(picks))

    centers.sort()
    ids = np.zeros((s, s), dtype=np.int32)
    classes: dict[int, int] = {}
    for i, center in enumerate(centers, start=1):
        ids[_disc_mask(ids.shape, center, r)] = i
        classes[i] = int(rng.integers(1, n_classes))
    return InstanceMap(scheme_id=scheme_id, ids=ids, classes=classes)


def _frame_arrays(
    geom: _Geometry,
    rng: np.random.Generator,
    *,
    primary: bool,
    track: int,
    defects: frozenset,
    instances: int,
) -> dict:
    s = geom.size
    nuclei_scheme = _TRACK_SCHEMES[track]
    n_cls = get_scheme(nuclei_scheme).class_count
    gt_tissue = _gt_tissue(geom, primary)
    gt_inst = _gt_nuclei(geom, rng, nuclei_scheme, instances)

    offset = 0 if primary else 5
    gt_ext = np.where(gt_tissue > 0, gt_tissue + offset, 0).astype(np.int32)
    ext_labels = gt_ext.copy()
    if "noise" in defects:
        # within-group tumor label inside a stroma quadrant: invisible to the
        # classifier's group counts and erased by the 11->6 projection only
        # when fusion replaces the projection route
        _fill(ext_labels, geom.noise_box, 1 + offset)
    if "rules" in defects and primary:
        ext_labels[ext_labels == 2] = 7  # stroma -> metastatic block
    ext_pmap = _one_hot(ext_labels, 11)

    seg_s2 = _one_hot(gt_tissue, 6)
    seg_s4 = _one_hot(gt_tissue, 6)
    if "vessel" in defects:
        disc = _disc_mask(gt_tissue.shape, geom.vessel_center, geom.vessel_radius)
        for seg in (seg_s2, seg_s4):
            seg[disc] = 0.0
            seg[disc, 2] = 0.6
            seg[disc, 5] = 0.4
    if "ensemble" in defects and primary:
        r0, r1, c0, c1 = geom.q3
        for seg in (seg_s2, seg_s4):
            seg[r0:r1, c0:c1] = 0.0
            seg[r0:r1, c0:c1, 2] = 0.6
            seg[r0:r1, c0:c1, 3] = 0.3
    if "stage4" in defects:
        r0, r1, c0, c1 = geom.refine_box
        seg_s2[r0:r1, c0:c1] = 0.0
        seg_s2[r0:r1, c0:c1, 1] = 1.0
    if "necrosis" in defects:
        r0, r1, c0, c1 = geom.hole
        seg_s4[r0:r1, c0:c1] = 0.0
        seg_s4[r0:r1, c0:c1, 1] = 1.0

    if "route" in defects:
        swapped = gt_tissue.copy()
        swapped[gt_tissue == 1] = 2
        swapped[gt_tissue == 2] = 1
        seg_off_s2 = _one_hot(swapped, 6)
        seg_off_s4 = seg_off_s2
    else:
        seg_off_s2, seg_off_s4 = seg_s2, seg_s4

    unet = _one_hot(gt_tissue, 6)

    inst_ids = gt_inst.ids.copy()
    inst_classes = dict(gt_inst.classes)
    if "border" in defects:
        band = np.zeros((s, s), dtype=bool)
        q = geom.band
        band[:q, :] = True
        band[-q:, :] = True
        band[:, :q] = True
        band[:, -q:] = True
        inst_ids[band] = 0
        kept = set(np.unique(inst_ids).tolist())
        inst_classes = {i: c for i, c in inst_classes.items() if i in kept}

    classmap = _one_hot(instance_semantics(gt_inst).data, n_cls)
    rgb = rng.integers(0, 256, size=(s, s, 3), dtype=np.uint8)

    primary_s2, metastatic_s2 = (seg_s2, seg_off_s2) if primary else (seg_off_s2, seg_s2)
    primary_s4, metastatic_s4 = (seg_s4, seg_off_s4) if primary else (seg_off_s4, seg_s4)
    return {
        "rgb": rgb,
        "ext_pmap": ProbabilityMap(scheme_id=EXT, data=ext_pmap),
        "seg_s2": {
            "primary": ProbabilityMap(scheme_id=TISSUE, data=primary_s2),
            "metastatic": ProbabilityMap(scheme_id=TISSUE, data=metastatic_s2),
        },
        "seg_s4": {
            "primary": ProbabilityMap(scheme_id=TISSUE, data=primary_s4),
            "metastatic": ProbabilityMap(scheme_id=TISSUE, data=metastatic_s4),
        },
        "unet": ProbabilityMap(scheme_id=TISSUE, data=unet),
        "instances": InstanceMap(
            scheme_id=nuclei_scheme, ids=inst_ids, classes=inst_classes
        ),
        "classmap": ProbabilityMap(scheme_id=nuclei_scheme, data=classmap),
        "gt_tissue": LabelMap(scheme_id=TISSUE, data=gt_tissue),
        "gt_instances": gt_inst,
    }


def synth_fixtures(
    out_dir: str | Path,
    *,
    seed: int = 0,
    frames: int = 4,
    size: int = 128,
    track: int = 2,
    defects=(),
    instances: int = 5,
) -> Path:
    """Write a frame-bundle manifest with deterministic synthetic content.

    Returns the manifest path. Frames alternate primary/metastatic starting
    with primary.
    """
    if size < 32:
        raise UsageError(f"size must be >= 32, got {size}")
    if frames < 1:
        raise UsageError(f"frames must be >= 1, got {frames}")
    if track not in _TRACK_SCHEMES:
        raise UsageError(f"track must be 1 or 2, got {track}")
    if instances < 0:
        raise UsageError(f"instances must be >= 0, got {instances}")
    defects = frozenset(defects)
    unknown = defects - set(DEFECTS)
    if unknown:
        raise UsageError(
            f"unknown defects {sorted(unknown)}; known: {', '.join(DEFECTS)}"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geom = _Geometry(size)
    records = []
    for i in range(frames):
        rng = np.random.default_rng([seed, i])
        frame_id = f"f{i:03d}"
        arrays = _frame_arrays(
            geom,
            rng,
            primary=(i % 2 == 0),
            track=track,
            defects=defects,
            instances=instances,
        )
        fdir = out_dir / "frames" / frame_id
        fdir.mkdir(parents=True, exist_ok=True)
        rel = f"frames/{frame_id}"
        write_rgb_png(arrays["rgb"], fdir / "rgb.png")
        write_pmap(arrays["ext_pmap"], fdir / "ext11.pmap")
        for stage in ("s2", "s4"):
            for kind in ("primary", "metastatic"):
                write_pmap(
                    arrays[f"seg_{stage}"][kind], fdir / f"segformer_{kind}_{stage}.pmap"
                )
        write_pmap(arrays["unet"], fdir / "unet.pmap")
        write_instances(
            arrays["instances"], fdir / "instances.png", fdir / "instances.json"
        )
        write_pmap(arrays["classmap"], fdir / "classmap.pmap")
        write_label_png(arrays["gt_tissue"], fdir / "gt_tissue.png")
        write_instances(
            arrays["gt_instances"], fdir / "gt_instances.png", fdir / "gt_instances.json"
        )
        records.append(
            {
                "frame_id": frame_id,
                "rgb": f"{rel}/rgb.png",
                "ext11_pmap": f"{rel}/ext11.pmap",
                "segformer_s2": {
                    "primary": f"{rel}/segformer_primary_s2.pmap",
                    "metastatic": f"{rel}/segformer_metastatic_s2.pmap",
                },
                "segformer_s4": {
                    "primary": f"{rel}/segformer_primary_s4.pmap",
                    "metastatic": f"{rel}/segformer_metastatic_s4.pmap",
                },
                "unet_pmap": f"{rel}/unet.pmap",
                "instances_png": f"{rel}/instances.png",
                "instances_json": f"{rel}/instances.json",
                "classmap_pmap": f"{rel}/classmap.pmap",
                "gt_tissue_png": f"{rel}/gt_tissue.png",
                "gt_instances_png": f"{rel}/gt_instances.png",
                "gt_instances_json": f"{rel}/gt_instances.json",
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(records, indent=2) + "\n")
    return manifest
