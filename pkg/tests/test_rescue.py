import numpy as np
import pytest

from panfuse.errors import ValidationError
from panfuse.maps import LabelMap
from panfuse.rescue import RescueParams, necrosis_rescue

NECROSIS = 4


def tissue(data):
    return LabelMap(scheme_id="puma_tissue6", data=np.asarray(data, dtype=np.int32))


def test_component_transferred_on_single_pixel_overlap():
    s1 = np.zeros((8, 8), dtype=np.int32)
    s1[2:6, 2:6] = NECROSIS  # one 4x4 component
    s4 = np.ones((8, 8), dtype=np.int32)
    s4[2, 2] = NECROSIS  # overlaps by exactly one pixel
    out = necrosis_rescue(tissue(s1), tissue(s4))
    assert (out.data[2:6, 2:6] == NECROSIS).all(), "whole component written"
    outside = np.ones((8, 8), dtype=bool)
    outside[2:6, 2:6] = False
    assert (out.data[outside] == 1).all(), "pixels off the component untouched"


def test_component_without_overlap_stays():
    s1 = np.zeros((8, 8), dtype=np.int32)
    s1[1:3, 1:3] = NECROSIS
    s4 = np.full((8, 8), 2, dtype=np.int32)  # no necrosis anywhere in stage 4
    out = necrosis_rescue(tissue(s1), tissue(s4))
    assert np.array_equal(out.data, s4)


def test_components_selected_independently():
    s1 = np.zeros((10, 10), dtype=np.int32)
    s1[1:3, 1:3] = NECROSIS  # component A
    s1[6:9, 6:9] = NECROSIS  # component B (not 8-connected to A)
    s4 = np.zeros((10, 10), dtype=np.int32)
    s4[7, 7] = NECROSIS  # only B overlaps
    out = necrosis_rescue(tissue(s1), tissue(s4))
    assert (out.data[6:9, 6:9] == NECROSIS).all()
    assert (out.data[1:3, 1:3] == 0).all()


def test_diagonal_pixels_form_one_component():
    s1 = np.zeros((8, 8), dtype=np.int32)
    s1[2, 2] = NECROSIS
    s1[3, 3] = NECROSIS  # 8-connected diagonal
    s4 = np.zeros((8, 8), dtype=np.int32)
    s4[2, 2] = NECROSIS
    out = necrosis_rescue(tissue(s1), tissue(s4))
    assert out.data[3, 3] == NECROSIS


def test_disabled_returns_stage4_copy():
    s1 = np.full((4, 4), NECROSIS, dtype=np.int32)
    s4 = np.ones((4, 4), dtype=np.int32)
    out = necrosis_rescue(tissue(s1), tissue(s4), RescueParams(enabled=False))
    assert np.array_equal(out.data, s4)
    assert out.data is not s4


def test_custom_target_class():
    s1 = np.zeros((6, 6), dtype=np.int32)
    s1[1:4, 1:4] = 3  # epidermis component
    s4 = np.zeros((6, 6), dtype=np.int32)
    s4[2, 2] = 3
    out = necrosis_rescue(tissue(s1), tissue(s4), RescueParams(target_class=3))
    assert (out.data[1:4, 1:4] == 3).all()


def test_validation_errors():
    with pytest.raises(ValidationError):
        RescueParams(target_class=0)
    s = tissue(np.zeros((4, 4)))
    with pytest.raises(ValidationError):  # shape mismatch
        necrosis_rescue(s, tissue(np.zeros((3, 4))))
    with pytest.raises(ValidationError):  # scheme mismatch
        necrosis_rescue(
            s, LabelMap(scheme_id="binary2", data=np.zeros((4, 4), dtype=np.int32))
        )
    with pytest.raises(ValidationError):  # target outside scheme
        necrosis_rescue(s, s, RescueParams(target_class=9))


def rescue_oracle(s1, s4, target):
    # floodfill per component, then transfer on any overlap
    h, w = s1.shape
    seen = np.zeros((h, w), dtype=bool)
    out = s4.copy()
    for r in range(h):
        for c in range(w):
            if s1[r, c] != target or seen[r, c]:
                continue
            stack, comp = [(r, c)], []
            seen[r, c] = True
            while stack:
                y, x = stack.pop()
                comp.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if (
                            0 <= yy < h
                            and 0 <= xx < w
                            and not seen[yy, xx]
                            and s1[yy, xx] == target
                        ):
                            seen[yy, xx] = True
                            stack.append((yy, xx))
            if any(s4[y, x] == target for y, x in comp):
                for y, x in comp:
                    out[y, x] = target
    return out


def test_matches_floodfill_oracle():
    rng = np.random.default_rng(55)
    for _ in range(100):
        h, w = int(rng.integers(2, 16)), int(rng.integers(2, 16))
        s1 = rng.integers(0, 6, size=(h, w)).astype(np.int32)
        s4 = rng.integers(0, 6, size=(h, w)).astype(np.int32)
        out = necrosis_rescue(tissue(s1), tissue(s4))
        assert np.array_equal(out.data, rescue_oracle(s1, s4, NECROSIS))


def test_non_target_pixels_never_change():
    rng = np.random.default_rng(56)
    for _ in range(50):
        s1 = rng.integers(0, 6, size=(12, 12)).astype(np.int32)
        s4 = rng.integers(0, 6, size=(12, 12)).astype(np.int32)
        out = necrosis_rescue(tissue(s1), tissue(s4))
        changed = out.data != s4
        assert (s1[changed] == NECROSIS).all()
        assert (out.data[changed] == NECROSIS).all()
