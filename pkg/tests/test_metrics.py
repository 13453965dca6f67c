import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptbench import dice, edt, make_mask, nsd, surface_voxels
from promptbench.metrics import MetricRecord

from oracles import dice_setcount, edt_allpairs, nsd_pairwise, random_blob, surface_direct


def from_coords(coords, dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0)):
    arr = np.zeros(dims, dtype=np.uint8)
    for c in coords:
        arr[c] = 1
    return make_mask(arr, spacing=spacing)


def test_dice_identity_and_disjoint():
    a = from_coords([(1, 1, 1), (2, 1, 1)])
    b = from_coords([(5, 5, 5)])
    assert dice(a, a) == 1.0
    assert dice(a, b) == 0.0


def test_dice_partial_overlap():
    pred = from_coords([(1, 1, 1)])
    gt = from_coords([(1, 1, 1), (2, 1, 1), (3, 1, 1)])
    assert dice(pred, gt) == 0.5


def test_dice_empty_conventions_and_errors():
    empty = from_coords([])
    assert dice(empty, empty) == 1.0
    assert dice(empty, from_coords([(0, 0, 0)])) == 0.0
    with pytest.raises(ValueError, match="dim"):
        dice(from_coords([], dims=(4, 4, 4)), from_coords([], dims=(5, 5, 5)))


def test_dice_symmetric_on_random_pairs():
    rng = np.random.default_rng(17)
    for _ in range(20):
        a = make_mask(random_blob(rng, (9, 9, 9)))
        b = make_mask(random_blob(rng, (9, 9, 9)))
        assert dice(a, b) == dice(b, a)
        assert dice(a, b) == dice_setcount(a.data, b.data)


def test_surface_of_solid_cube():
    arr = np.zeros((9, 9, 9), dtype=np.uint8)
    arr[1:8, 1:8, 1:8] = 1
    surf = surface_voxels(make_mask(arr))
    assert int(surf.data.sum()) == 218


def test_surface_trivial_cases():
    single = from_coords([(3, 3, 3)])
    assert np.array_equal(surface_voxels(single).data, single.data)
    empty = from_coords([])
    assert surface_voxels(empty).data.sum() == 0
    # voxels on the volume face are surface even when fully surrounded inside
    solid = make_mask(np.ones((3, 3, 3), dtype=np.uint8))
    surf = surface_direct(solid.data)
    assert np.array_equal(surface_voxels(solid).data.astype(bool), surf)
    assert surf.sum() == 26  # all but the very center


def test_edt_basics():
    mask = from_coords([(2, 2, 2)])
    d = edt(mask)
    assert d.data[2, 2, 2] == 0.0
    assert d.data[3, 2, 2] == 1.0
    assert d.data[3, 3, 2] == pytest.approx(math.sqrt(2), abs=1e-9)
    assert d.data[3, 3, 3] == pytest.approx(math.sqrt(3), abs=1e-9)


def test_edt_respects_anisotropic_spacing():
    mask = from_coords([(2, 2, 2)], spacing=(1.0, 1.0, 2.5))
    d = edt(mask)
    assert d.data[2, 2, 3] == 2.5
    assert d.data[3, 2, 3] == pytest.approx(math.hypot(1.0, 2.5), abs=1e-9)


def test_edt_empty_mask_errors():
    with pytest.raises(ValueError, match="empty"):
        edt(from_coords([]))


def test_edt_matches_allpairs_oracle():
    rng = np.random.default_rng(23)
    for _ in range(10):
        dims = tuple(rng.integers(4, 12, size=3))
        spacing = tuple(rng.choice([0.5, 1.0, 1.25, 2.0], size=3))
        mask = make_mask(random_blob(rng, dims), spacing=spacing)
        got = edt(mask).data
        want = edt_allpairs(mask.data.astype(bool), spacing)
        assert np.max(np.abs(got - want) / np.maximum(want, 1e-12)) < 1e-6


def test_nsd_identity_and_translation():
    arr = np.zeros((10, 6, 6), dtype=np.uint8)
    arr[2:5, 2:5, 2:5] = 1
    gt = make_mask(arr)
    assert nsd(gt, gt, 0.0) == 1.0
    shifted = np.zeros_like(arr)
    shifted[3:6, 2:5, 2:5] = 1
    pred = make_mask(shifted)
    # every surface voxel of either mask is within 1 voxel of the other surface
    assert nsd(pred, gt, 1.0) == 1.0
    assert nsd_pairwise(pred.data, gt.data, (1, 1, 1), 1.0) == 1.0


def test_nsd_far_apart_is_zero():
    a = from_coords([(0, 0, 0)], dims=(12, 4, 4))
    b = from_coords([(10, 0, 0)], dims=(12, 4, 4))
    assert nsd(a, b, 1.0) == 0.0


def test_nsd_empty_conventions():
    empty = from_coords([])
    full = from_coords([(1, 1, 1)])
    assert nsd(empty, empty, 1.0) == 1.0
    assert nsd(empty, full, 1.0) == 0.0
    assert nsd(full, empty, 1.0) == 0.0


def test_nsd_validates_inputs():
    a = from_coords([(0, 0, 0)])
    b = from_coords([(0, 0, 0)], spacing=(2.0, 1.0, 1.0))
    with pytest.raises(ValueError, match="spacing"):
        nsd(a, b, 1.0)
    with pytest.raises(ValueError, match="tolerance"):
        nsd(a, a, -0.5)


def test_nsd_matches_pairwise_oracle():
    rng = np.random.default_rng(31)
    for _ in range(15):
        dims = tuple(rng.integers(4, 12, size=3))
        a = make_mask(random_blob(rng, dims))
        b = make_mask(random_blob(rng, dims))
        for tau in (0.0, 1.0, 1.7, 3.0):
            got = nsd(a, b, tau)
            want = nsd_pairwise(a.data, b.data, (1, 1, 1), tau)
            assert got == pytest.approx(want, abs=1e-9)
            assert got == pytest.approx(nsd(b, a, tau), abs=0)


@settings(max_examples=25, deadline=None)
@given(blob_seed=st.integers(min_value=0, max_value=1000))
def test_nsd_is_nondecreasing_in_tau(blob_seed):
    rng = np.random.default_rng(blob_seed)
    a = make_mask(random_blob(rng, (8, 8, 8)))
    b = make_mask(random_blob(rng, (8, 8, 8)))
    values = [nsd(a, b, tau) for tau in (0.0, 0.5, 1.0, 2.0, 4.0, 16.0)]
    assert all(x <= y for x, y in zip(values, values[1:]))


def test_metric_record_bounds():
    MetricRecord(dice=0.5, nsd=0.25, tau_mm=1.0)
    with pytest.raises(ValueError):
        MetricRecord(dice=1.5, nsd=0.0, tau_mm=1.0)
