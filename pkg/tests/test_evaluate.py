"""
Tests for extraction ratio, false-positive rate and the results table.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from airway_gvf.errors import GeometryError
from airway_gvf.evaluate import HIT_DISTANCE, Metrics, centerline_voxels, evaluate, format_report
from airway_gvf.phantom import GroundTruth
from airway_gvf.tree import AirwayTree, BranchRecord
from airway_gvf.volume import BinaryMask


@pytest.fixture
def block_truth():
    """900-voxel block with one branch running along z through its middle."""
    values = np.zeros((40, 40, 40), dtype=bool)
    values[15:24, 15:25, 5:15] = True
    mask = BinaryMask(values)
    branch = BranchRecord(id=0, centerline=[(19.0, 20.0, 6.0), (19.0, 20.0, 13.0)])
    return GroundTruth(mask=mask, tree=AirwayTree(branches=[branch], root_id=0, mask=mask))


def _slab(truth, z_lo, z_hi):
    values = truth.mask.values.copy()
    values[:, :, :z_lo] = False
    values[:, :, z_hi:] = False
    return truth.mask.with_values(values)


class TestCenterlineVoxels:
    """Test cases for rasterizing truth centerlines."""

    def test_straight_segment(self, block_truth):
        voxels = centerline_voxels(block_truth.tree.branches[0], block_truth.mask.geometry)
        assert voxels.shape == (8, 3)
        assert set(voxels[:, 2]) == set(range(6, 14))

    def test_clipped_to_lattice(self, block_truth):
        branch = BranchRecord(id=1, centerline=[(5.0, 5.0, -10.0), (5.0, 5.0, 3.0)])
        voxels = centerline_voxels(branch, block_truth.mask.geometry)
        assert voxels[:, 2].min() == 0

    def test_empty_centerline(self, block_truth):
        voxels = centerline_voxels(BranchRecord(id=2), block_truth.mask.geometry)
        assert voxels.shape == (0, 3)


class TestEvaluate:
    """Test cases for the branch and voxel scores."""

    def test_truth_scores_perfect(self, block_truth):
        m = evaluate(block_truth.mask, block_truth)
        assert m.branches_extracted == 1
        assert m.extraction_ratio == 100.0
        assert m.fpr == 0.0
        assert m.tp_voxels == 900

    def test_disjoint_blob_is_false_positive(self, block_truth):
        values = block_truth.mask.values.copy()
        values[30:35, 30:35, 30:34] = True
        m = evaluate(block_truth.mask.with_values(values), block_truth)
        assert m.fp_voxels == 100
        assert m.fpr == pytest.approx(10.0)
        assert m.extraction_ratio == 100.0

    def test_one_voxel_halo_is_tolerated(self, block_truth):
        values = block_truth.mask.values.copy()
        values[14:25, 14:26, 4:16] = True
        m = evaluate(block_truth.mask.with_values(values), block_truth)
        assert m.fp_voxels == 0

    def test_empty_result(self, block_truth):
        m = evaluate(BinaryMask.empty_like(block_truth.mask), block_truth)
        assert m.branches_extracted == 0
        assert m.extraction_ratio == 0.0
        assert m.fpr == 0.0

    def test_less_than_half_covered_is_missed(self, block_truth):
        # Slices 5-6 reach centerline voxels z = 6..8, three of eight.
        m = evaluate(_slab(block_truth, 5, 7), block_truth)
        assert m.branches_extracted == 0

    def test_more_than_half_covered_is_extracted(self, block_truth):
        # Slices 5-8 reach z = 6..10, five of eight.
        m = evaluate(_slab(block_truth, 5, 9), block_truth)
        assert m.branches_extracted == 1

    def test_growing_result_never_loses(self, block_truth):
        previous = None
        for z_hi in range(6, 16):
            m = evaluate(_slab(block_truth, 5, z_hi), block_truth)
            assert m.fpr == 0.0
            if previous is not None:
                assert m.extraction_ratio >= previous.extraction_ratio
            previous = m

    def test_accepts_tree(self, block_truth):
        tree = AirwayTree(mask=block_truth.mask)
        assert evaluate(tree, block_truth) == evaluate(block_truth.mask, block_truth)

    def test_tree_without_mask(self, block_truth):
        with pytest.raises(ValueError):
            evaluate(AirwayTree(), block_truth)

    def test_geometry_mismatch(self, block_truth):
        other = BinaryMask(np.zeros((40, 40, 39), dtype=bool))
        with pytest.raises(GeometryError):
            evaluate(other, block_truth)

    def test_matches_brute_force_distances(self, phantom3):
        _, truth = phantom3
        values = truth.mask.values.copy()
        keep = truth.mask.geometry.index_to_world(np.argwhere(values))[:, 2] >= -26.0
        cut = np.zeros_like(values)
        cut[tuple(np.argwhere(values)[keep].T)] = True
        result = truth.mask.with_values(cut)

        points = np.argwhere(cut).astype(float)
        expected = 0
        for branch in truth.tree.branches:
            voxels = centerline_voxels(branch, truth.mask.geometry).astype(float)
            near = [
                np.sqrt(np.min(np.sum((points - v) ** 2, axis=1))) <= HIT_DISTANCE
                for v in voxels
            ]
            expected += int(np.mean(near) >= 0.5)

        m = evaluate(result, truth)
        assert m.branches_extracted == expected
        assert 0 < expected < truth.tree.branch_count
        assert m.fpr == 0.0


class TestMetrics:
    """Test cases for the metrics model and report."""

    def test_percent_range(self):
        with pytest.raises(ValidationError):
            Metrics(
                branches_extracted=1, total_branches=1, extraction_ratio=120.0,
                fpr=0.0, fp_voxels=0, tp_voxels=1,
            )

    def test_json_round_trip(self, block_truth):
        m = evaluate(block_truth.mask, block_truth)
        assert Metrics.model_validate_json(m.model_dump_json()) == m

    def test_report_columns(self, block_truth):
        text = format_report(evaluate(block_truth.mask, block_truth))
        for header in ("Method", "Extracted Branches", "Extraction Ratio (%)", "FPR (%)"):
            assert header in text
        assert "100.00" in text
        assert "0.00" in text
        assert "Delta" not in text

    def test_report_with_baseline(self, block_truth):
        m = evaluate(block_truth.mask, block_truth)
        baseline = m.model_copy(update={"branches_extracted": 0, "extraction_ratio": 50.0, "fpr": 2.5})
        text = format_report(m, baseline)
        assert "baseline" in text
        assert "Delta" in text
        assert "+50.00" in text
        assert "-2.50" in text
        assert "+1" in text

    def test_report_is_deterministic(self, block_truth):
        m = evaluate(block_truth.mask, block_truth)
        assert format_report(m) == format_report(m)
