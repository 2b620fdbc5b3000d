import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import disk_mask
from oracles import components_bfs
from smearscope.dataset import SynthConfig, generate_smear
from smearscope.evaluation import iou, match_detections
from smearscope.imaging import LabelMap, connected_components, distance_transform
from smearscope.segmentation import (SegmentationConfig, SegmentationError, foreground_mask,
                                     localize_cells, make_markers, watershed)

TWO_DISKS = dict(shape=(40, 50), centers=[(20, 18), (20, 32)], radius=8)


def flood(mask, fraction=0.5):
    dist = distance_transform(mask)
    markers = make_markers(mask, dist, fraction)
    return markers, watershed(mask, markers, dist)


def test_single_blob_single_marker():
    mask = disk_mask((30, 30), [(15, 15)], 9)
    markers, lm = flood(mask)
    assert markers.num_labels == 1
    np.testing.assert_array_equal(lm.labels > 0, mask)
    assert set(np.unique(lm.labels[mask])) == {1}


def test_disjoint_blobs_follow_components():
    mask = disk_mask((30, 60), [(15, 12), (15, 45)], 8)
    markers, lm = flood(mask)
    cc = connected_components(mask)
    assert markers.num_labels == 2
    for k in (1, 2):
        assert len(np.unique(cc.labels[lm.labels == k])) == 1


def test_merged_disks_split_at_bisector():
    mask = disk_mask(**TWO_DISKS)
    assert connected_components(mask).num_labels == 1
    markers, lm = flood(mask)
    assert markers.num_labels == 2
    assert lm.num_labels == 2
    areas = lm.areas()[1:]
    assert abs(int(areas[0]) - int(areas[1])) < 0.1 * areas.max()
    xs = np.indices(mask.shape)[1]
    bisector = 25
    left = lm.labels[20, 18]
    right = lm.labels[20, 32]
    assert left != right
    assert xs[lm.labels == left].max() <= bisector + 1
    assert xs[lm.labels == right].min() >= bisector - 1


def test_watershed_requires_seeds():
    mask = disk_mask((20, 20), [(10, 10)], 5)
    empty = LabelMap(np.zeros(mask.shape, np.int32), 0)
    with pytest.raises(SegmentationError, match="no seeds"):
        watershed(mask, empty, distance_transform(mask))


def test_make_markers_empty_mask():
    mask = np.zeros((10, 10), bool)
    assert make_markers(mask, distance_transform(mask), 0.5).num_labels == 0


def test_watershed_is_deterministic():
    mask = disk_mask(**TWO_DISKS)
    a = flood(mask)[1].labels
    b = flood(mask)[1].labels
    np.testing.assert_array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(3, 20), st.integers(3, 20))),
       st.floats(0.1, 0.9))
def test_watershed_invariants(mask, fraction):
    dist = distance_transform(mask)
    markers = make_markers(mask, dist, fraction)
    if markers.num_labels == 0:
        assert not mask.any()
        return
    lm = watershed(mask, markers, dist)
    # label set = marker set, every foreground pixel labelled, nothing outside
    assert set(np.unique(lm.labels[mask])) == set(range(1, markers.num_labels + 1))
    assert (lm.labels[mask] > 0).all()
    assert (lm.labels[~mask] == 0).all()
    # seeds are 8-connected, so each region is one 8-component inside one mask component
    cc = connected_components(mask, 8)
    for k in range(1, lm.num_labels + 1):
        region = lm.labels == k
        assert len(components_bfs(region, 8)) == 1
        assert len(np.unique(cc.labels[region])) == 1


# -- full localization -----------------------------------------------------

def test_blank_image_has_no_cells():
    img = np.full((96, 128, 3), 240, dtype=np.uint8)
    assert localize_cells(img) == []


def test_config_validation():
    with pytest.raises(ValueError):
        SegmentationConfig(marker_fraction=1.0)
    with pytest.raises(ValueError):
        SegmentationConfig(min_area_fraction=1.0)
    with pytest.raises(ValueError):
        SegmentationConfig(grid=(0, 4))
    cfg = SegmentationConfig()
    assert SegmentationConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def fifty_disks():
    cfg = SynthConfig(width=640, height=480, cells_per_image=(50, 50), overlap=0.0,
                      class_mix=(1, 0, 0, 0, 0), debris_prob=0.0, seed=5)
    return generate_smear(cfg)


def test_fifty_separate_cells(fifty_disks):
    img, anns = fifty_disks
    dets = localize_cells(img)
    assert len(dets) == 50
    res = match_detections([a.box for a in anns], [d.box for d in dets])
    assert res.tp == 50
    assert all(v >= 0.5 for _, _, v in res.matches)
    # sorted by (y, x) and areas fit their boxes
    keys = [(d.box.y, d.box.x) for d in dets]
    assert keys == sorted(keys)
    assert all(d.area <= d.box.w * d.box.h for d in dets)


def test_disjoint_cells_reduce_to_components(fifty_disks):
    img, _ = fifty_disks
    cfg = SegmentationConfig(min_area_fraction=0.0)
    mask = foreground_mask(img, cfg)
    assert len(localize_cells(img, cfg)) == connected_components(mask, 8).num_labels


def test_touching_cells_counted(fifty_disks):
    cfg = SynthConfig(width=640, height=480, cells_per_image=(60, 60), overlap=0.1, seed=11)
    img, anns = generate_smear(cfg)
    touching = sum(1 for i, a in enumerate(anns) for b in anns[i + 1:] if iou(a.box, b.box) > 0)
    assert touching >= 3  # the fixture really has overlapping boxes
    n = len(localize_cells(img))
    assert abs(n - len(anns)) <= 0.05 * len(anns)


def test_localization_is_deterministic(fifty_disks):
    img, _ = fifty_disks
    assert localize_cells(img) == localize_cells(img.copy())
