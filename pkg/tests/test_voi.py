"""
Tests for VOI sizing and frames.
"""

import numpy as np
import pytest

from airway_gvf.errors import GeometryError
from airway_gvf.voi import Voi, VoiParams, complete_frame, extend_voi, size_voi


class TestSizeVoi:
    """Test cases for radius-driven VOI sizing."""

    def test_cross_factor_dominates(self):
        voi = size_voi(2.0, (0, 0, -1), (0, 0, 0), 1)
        assert voi.cross_size == 8.0
        assert voi.length == 8.0
        assert voi.generation == 1

    def test_cross_floor_dominates(self):
        voi = size_voi(1.0, (0, 0, -1), (0, 0, 0), 0)
        assert voi.cross_size == 5.0
        assert voi.length == 4.0

    def test_direction_is_normalized(self):
        voi = size_voi(1.0, (0, 3, 4), (0, 0, 0), 0)
        assert np.allclose(voi.axis, (0.0, 0.6, 0.8))

    def test_non_positive_radius(self):
        with pytest.raises(GeometryError):
            size_voi(0.0, (0, 0, 1), (0, 0, 0), 0)

    def test_params_forward_constants(self):
        params = VoiParams(cross_factor=5.0, length_factor=3.0)
        voi = params.size(2.0, (1, 0, 0), (1, 2, 3), 2)
        assert voi.cross_size == 10.0
        assert voi.length == 6.0

    def test_resolve_pitch(self):
        assert VoiParams().resolve_pitch((0.7, 0.6, 1.25)) == 0.6
        assert VoiParams(pitch=0.5).resolve_pitch((0.7, 0.6, 1.25)) == 0.5


class TestVoiFrame:
    """Test cases for the local frame and its lattice."""

    @pytest.mark.parametrize("axis", [(0, 0, 1), (1, 0, 0), (0.3, -0.5, 0.81)])
    def test_frame_is_orthonormal(self, axis):
        voi = size_voi(2.0, axis, (1, 2, 3), 0)
        r = voi.rotation
        assert np.allclose(r.T @ r, np.eye(3))
        assert np.allclose(r[:, 2], voi.axis)

    def test_world_local_inverse(self):
        voi = size_voi(2.0, (0.3, -0.5, 0.81), (1, 2, 3), 0)
        points = np.array([[0.0, 0.0, 0.0], [1.0, -2.0, 3.5]])
        assert np.allclose(voi.to_local(voi.to_world(points)), points)
        assert np.allclose(voi.to_world(np.zeros(3)), voi.base)

    def test_lattice_shape_and_origin(self):
        voi = Voi((0, 0, 0), (0, 0, 1), complete_frame((0, 0, 1)), cross_size=5.0, length=4.0)
        assert voi.lattice_shape(1.0) == (5, 5, 4)
        assert voi.local_origin(1.0) == (-2.0, -2.0, 0.5)
        assert voi.lattice_shape(0.5) == (10, 10, 8)

    def test_extend_keeps_frame(self):
        voi = size_voi(2.0, (0, 0, -1), (0, 0, 0), 0)
        longer = extend_voi(voi, 4.0)
        assert longer.length == voi.length + 4.0
        assert longer.base == voi.base and longer.axis == voi.axis and longer.up == voi.up

    def test_extend_requires_positive_step(self):
        with pytest.raises(GeometryError):
            extend_voi(size_voi(2.0, (0, 0, -1), (0, 0, 0), 0), 0.0)

    def test_rejects_non_orthogonal_up(self):
        with pytest.raises(GeometryError, match="orthogonal"):
            Voi((0, 0, 0), (0, 0, 1), (0, 0.6, 0.8), cross_size=3.0, length=3.0)

    def test_dict_round_trip(self):
        voi = size_voi(1.5, (0.3, -0.5, 0.81), (1, 2, 3), 4)
        assert Voi.from_dict(voi.to_dict()) == voi
