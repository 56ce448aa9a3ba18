"""
Tests for AirwayTree bookkeeping and JSON persistence.
"""

import json

import pytest
from pydantic import ValidationError

from airway_gvf.errors import GeometryError
from airway_gvf.tree import AirwayTree, BranchRecord, BranchStatus
from airway_gvf.voi import size_voi


@pytest.fixture
def tree():
    root = BranchRecord(
        id=0,
        vois=[size_voi(4.0, (0, 0, -1), (0, 0, 0), 0)],
        centerline=[(0.0, 0.0, 0.0), (0.0, 0.0, -3.0), (0.0, 4.0, -6.0)],
        mean_radius=4.0,
        status=BranchStatus.TERMINATED,
    )
    left = BranchRecord(id=1, parent_id=0, generation=1, status=BranchStatus.LEAKED)
    right = BranchRecord(id=2, parent_id=0, generation=1)
    return AirwayTree(branches=[root, left, right], root_id=0)


class TestAirwayTree:
    """Test cases for tree queries and invariants."""

    def test_queries(self, tree):
        assert tree.branch_count == 3
        assert [b.id for b in tree.children(0)] == [1, 2]
        assert tree.ancestors(2) == [0]
        assert tree.status_counts() == {"open": 1, "terminated": 1, "leaked": 1}

    def test_length(self, tree):
        assert tree.get(0).length == pytest.approx(8.0)

    def test_unknown_branch(self, tree):
        with pytest.raises(KeyError):
            tree.get(9)

    def test_validate_accepts_tree(self, tree):
        tree.validate()

    def test_validate_generation(self, tree):
        tree.get(2).generation = 2
        with pytest.raises(GeometryError, match="generation"):
            tree.validate()

    def test_cycle_detected(self, tree):
        tree.get(0).parent_id = 2
        with pytest.raises(GeometryError):
            tree.ancestors(1)

    def test_two_roots(self, tree):
        tree.get(2).parent_id = None
        with pytest.raises(GeometryError, match="one root"):
            tree.validate()

    def test_voxel_count_without_mask(self, tree):
        assert tree.voxel_count == 0


class TestTreeJson:
    """Test cases for the JSON tree format."""

    def test_save_and_load(self, tree, tmp_path):
        path = tmp_path / "tree.json"
        tree.save(path)
        loaded = AirwayTree.load(path)

        assert [b.id for b in loaded.branches] == [0, 1, 2]
        assert loaded.get(1).status == BranchStatus.LEAKED
        assert loaded.get(0).vois == tree.get(0).vois
        assert loaded.get(0).centerline == tree.get(0).centerline
        assert loaded.root_id == 0

    def test_keys(self, tree, tmp_path):
        path = tmp_path / "tree.json"
        tree.save(path)
        data = json.loads(path.read_text())
        assert set(data) == {"branches", "root", "voxel_count", "truncated"}
        assert set(data["branches"][0]) == {
            "id", "parent", "generation", "centerline", "mean_radius", "status", "vois",
        }

    def test_load_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="file not found"):
            AirwayTree.load(tmp_path / "absent.json")


class TestBranchRecordFields:
    """Test cases for field validation on branch records."""

    def test_status_from_string(self):
        assert BranchRecord(id=3, status="leaked").status is BranchStatus.LEAKED

    def test_centerline_points_are_float_triples(self):
        branch = BranchRecord(id=3, centerline=[[1, 2, 3]])
        assert branch.centerline == [(1.0, 2.0, 3.0)]
        with pytest.raises(ValidationError):
            BranchRecord(id=3, centerline=[(1.0, 2.0)])

    def test_vois_must_be_vois(self):
        with pytest.raises(ValidationError):
            BranchRecord(id=3, vois=[{"base": (0, 0, 0)}])

    def test_tree_keeps_branch_objects(self, tree):
        branch = BranchRecord(id=3, parent_id=0, generation=1)
        grown = AirwayTree(branches=[*tree.branches, branch], root_id=0)
        assert grown.get(3) is branch
        grown.validate()
