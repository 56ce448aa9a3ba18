"""
Tests for lattice types, VOI resampling and back-projection.
"""

import numpy as np
import pytest

from airway_gvf.errors import GeometryError
from airway_gvf.voi import Voi, complete_frame, size_voi
from airway_gvf.volume import (
    PAD_HU,
    BinaryMask,
    Geometry,
    ScalarVolume,
    adjacency,
    connected_components,
    project_mask_to_global,
    resample_to_voi,
    voi_lattice_geometry,
    voi_world_points,
)


def _voi(base, axis, cross, length):
    return Voi(base=base, axis=axis, up=complete_frame(axis), cross_size=cross, length=length)


def _ramp_value(points):
    return points[..., 0] + 2.0 * points[..., 1] + 3.0 * points[..., 2]


class TestLattice:
    """Test cases for lattice construction and geometry."""

    def test_world_index_round_trip(self):
        g = Geometry((4, 5, 6), (0.5, 1.0, 2.0), (10.0, -1.0, 3.0))
        index = np.array([1, 2, 3])
        assert np.allclose(g.world_to_index(g.index_to_world(index)), index)
        assert np.allclose(g.index_to_world(index), [10.5, 1.0, 9.0])

    def test_rejects_non_positive_spacing(self):
        with pytest.raises(GeometryError, match="spacing"):
            ScalarVolume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))

    def test_rejects_wrong_dimensionality(self):
        with pytest.raises(GeometryError):
            BinaryMask(np.zeros((2, 2), dtype=bool))

    def test_value_at_outside_raises(self):
        v = ScalarVolume(np.zeros((2, 2, 2)))
        with pytest.raises(IndexError):
            v.value_at((2, 0, 0))

    def test_geometry_match_tolerance(self):
        a = Geometry((2, 2, 2), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
        b = Geometry((2, 2, 2), (1.0, 1.0, 1.0), (0.0, 0.0, 1e-12))
        c = Geometry((2, 2, 2), (1.0, 1.0, 1.0), (0.0, 0.0, 1e-3))
        assert a.matches(b)
        assert not a.matches(c)


class TestResampleToVoi:
    """Test cases for trilinear VOI resampling."""

    def test_axis_aligned_ramp_is_exact(self, ramp):
        voi = _voi((2.0, 4.0, 6.0), (0.0, 0.0, 1.0), 4.0, 4.0)
        local = resample_to_voi(ramp, voi, 1.0)
        expected = _ramp_value(voi_world_points(voi, 1.0))
        assert local.dims == (4, 4, 4)
        assert np.allclose(local.values, expected, atol=1e-9)

    def test_rotated_voi_matches_analytic_ramp(self, ramp):
        voi = _voi((0.0, 5.0, 8.0), (1.0, 0.0, 0.0), 3.0, 4.0)
        local = resample_to_voi(ramp, voi, 0.5)
        expected = _ramp_value(voi_world_points(voi, 0.5))
        assert np.allclose(local.values, expected, atol=1e-4)

    def test_outside_samples_take_pad_value(self, ramp):
        voi = _voi((100.0, 100.0, 100.0), (0.0, 0.0, 1.0), 3.0, 3.0)
        local = resample_to_voi(ramp, voi, 1.0)
        assert np.all(local.values == PAD_HU)

    def test_local_geometry(self, ramp):
        voi = _voi((2.0, 4.0, 6.0), (0.0, 0.0, 1.0), 3.0, 2.0)
        local = resample_to_voi(ramp, voi, 1.0)
        assert local.geometry.matches(voi_lattice_geometry(voi, 1.0))
        assert local.origin == (-1.0, -1.0, 0.5)

    def test_non_positive_pitch(self, ramp):
        voi = _voi((2.0, 4.0, 6.0), (0.0, 0.0, 1.0), 3.0, 2.0)
        with pytest.raises(GeometryError):
            resample_to_voi(ramp, voi, 0.0)


class TestProjectMaskToGlobal:
    """Test cases for nearest-neighbour back-projection."""

    def test_full_voi_projects_to_box(self):
        target = BinaryMask(np.zeros((10, 10, 10), dtype=bool))
        voi = _voi((5.0, 5.0, 2.0), (0.0, 0.0, 1.0), 3.0, 4.0)
        full = BinaryMask(np.ones(voi.lattice_shape(1.0), dtype=bool), (1.0,) * 3, voi.local_origin(1.0))

        result = project_mask_to_global(full, voi, target)

        expected = np.zeros((10, 10, 10), dtype=bool)
        expected[4:7, 4:7, 2:6] = True
        assert np.array_equal(result.values, expected)

    def test_never_clears_target(self):
        values = np.zeros((10, 10, 10), dtype=bool)
        values[0, 0, 0] = True
        target = BinaryMask(values)
        voi = _voi((5.0, 5.0, 2.0), (0.0, 0.0, 1.0), 3.0, 4.0)
        empty = BinaryMask(np.zeros(voi.lattice_shape(1.0), dtype=bool), (1.0,) * 3, voi.local_origin(1.0))

        result = project_mask_to_global(empty, voi, target)

        assert result.values[0, 0, 0]
        assert result.count == 1

    def test_geometry_mismatch(self):
        target = BinaryMask(np.zeros((10, 10, 10), dtype=bool))
        voi = size_voi(1.0, (0, 0, 1), (5, 5, 2), 0)
        wrong = BinaryMask(np.ones((2, 2, 2), dtype=bool))
        with pytest.raises(GeometryError):
            project_mask_to_global(wrong, voi, target)


class TestConnectivity:
    """Test cases for 6/26 adjacency labelling."""

    def test_diagonal_voxels(self):
        values = np.zeros((3, 3, 3), dtype=bool)
        values[0, 0, 0] = values[1, 1, 1] = True
        m = BinaryMask(values)
        assert connected_components(m, 6).component_count == 2
        assert connected_components(m, 26).component_count == 1

    def test_sizes(self, cube_mask):
        labels = connected_components(cube_mask)
        assert labels.component_count == 1
        assert list(labels.sizes()) == [12 ** 3 - 216, 216]

    def test_invalid_connectivity(self):
        with pytest.raises(ValueError):
            adjacency(18)

    def test_labels_follow_x_fastest_scan(self):
        values = np.zeros((4, 4, 4), dtype=bool)
        # First in C order (lowest x), but later in an x-fastest scan (z = 3).
        values[0, 0, 3] = True
        # First in an x-fastest scan: z = 0, y = 0, x = 3.
        values[3, 0, 0] = True
        values[1, 3, 1] = True
        labels = connected_components(BinaryMask(values), 6)
        assert labels.component_count == 3
        assert labels.values[3, 0, 0] == 1
        assert labels.values[1, 3, 1] == 2
        assert labels.values[0, 0, 3] == 3
