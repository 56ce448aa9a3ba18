"""
Tests for 3-D thinning.
"""

import numpy as np
from skimage.measure import euler_number

from airway_gvf.thinning import thin_3d
from airway_gvf.tube import CenterlineGraph
from airway_gvf.volume import BinaryMask, connected_components


def _bar():
    values = np.zeros((9, 9, 24), dtype=bool)
    values[2:7, 2:7, 2:22] = True
    return BinaryMask(values)


def _annulus():
    x, y = np.meshgrid(np.arange(24) - 11.5, np.arange(24) - 11.5, indexing="ij")
    r = np.hypot(x, y)
    ring = (r >= 6) & (r <= 9)
    values = np.zeros((24, 24, 7), dtype=bool)
    values[:, :, 2:5] = ring[:, :, None]
    return BinaryMask(values)


class TestThin3d:
    """Test cases for topology-preserving thinning."""

    def test_subset_of_input(self):
        m = _bar()
        skeleton = thin_3d(m)
        assert skeleton.count > 0
        assert not np.any(skeleton.values & ~m.values)

    def test_bar_becomes_line(self):
        skeleton = thin_3d(_bar())
        per_slice = skeleton.values.sum(axis=(0, 1))
        assert np.all(per_slice[8:16] == 1)

    def test_idempotent(self):
        once = thin_3d(_bar())
        twice = thin_3d(once)
        assert np.array_equal(once.values, twice.values)

    def test_preserves_components(self):
        values = np.zeros((20, 9, 9), dtype=bool)
        values[1:7, 1:8, 1:8] = True
        values[11:19, 1:8, 1:8] = True
        m = BinaryMask(values)
        assert connected_components(thin_3d(m)).component_count == 2

    def test_preserves_cycle(self):
        m = _annulus()
        skeleton = thin_3d(m)
        assert euler_number(m.values, connectivity=3) == 0
        assert euler_number(skeleton.values, connectivity=3) == 0
        assert connected_components(skeleton).component_count == 1

    def test_thin_bar_keeps_its_length(self):
        values = np.zeros((7, 7, 24), dtype=bool)
        values[2:5, 2:5, 2:22] = True
        skeleton = thin_3d(BinaryMask(values))
        graph = CenterlineGraph.from_mask(skeleton)
        assert len(graph.endpoints) == 2
        assert graph.junctions == []
        assert skeleton.count >= 18

    def test_single_voxel_is_its_own_skeleton(self):
        values = np.zeros((5, 5, 5), dtype=bool)
        values[2, 2, 2] = True
        skeleton = thin_3d(BinaryMask(values))
        assert np.array_equal(skeleton.values, values)

    def test_empty_mask(self):
        m = BinaryMask(np.zeros((4, 4, 4), dtype=bool))
        assert thin_3d(m).count == 0

    def test_geometry_kept(self):
        m = BinaryMask(_bar().values, (0.5, 0.5, 2.0), (1.0, 2.0, 3.0))
        assert thin_3d(m).geometry.matches(m.geometry)
