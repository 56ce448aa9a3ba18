"""
AirwayTree: branch records, parent links and the JSON tree format.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, InstanceOf

from airway_gvf.errors import GeometryError
from airway_gvf.voi import Voi
from airway_gvf.volume import BinaryMask


class BranchStatus(str, Enum):
    """Lifecycle state of a traced branch."""
    OPEN = "open"
    TERMINATED = "terminated"
    LEAKED = "leaked"


class BranchRecord(BaseModel):
    """One airway branch: its VOI chain, centerline polyline and radius."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: int
    parent_id: Optional[int] = None
    generation: int = 0
    vois: list[InstanceOf[Voi]] = Field(default_factory=list)
    centerline: list[tuple[float, float, float]] = Field(default_factory=list)
    mean_radius: float = 0.0
    status: BranchStatus = BranchStatus.OPEN
    # Accepted VOI-frame masks, paired with the VOI they were computed in.
    segments: list[tuple[InstanceOf[Voi], InstanceOf[BinaryMask]]] = Field(default_factory=list, repr=False)

    @property
    def length(self) -> float:
        """Polyline length in mm."""
        if len(self.centerline) < 2:
            return 0.0
        pts = np.asarray(self.centerline, dtype=float)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent_id,
            "generation": self.generation,
            "centerline": [[float(c) for c in p] for p in self.centerline],
            "mean_radius": float(self.mean_radius),
            "status": self.status.value,
            "vois": [v.to_dict() for v in self.vois],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BranchRecord":
        return cls(
            id=int(data["id"]),
            parent_id=data.get("parent"),
            generation=int(data.get("generation", 0)),
            vois=[Voi.from_dict(v) for v in data.get("vois", [])],
            centerline=[tuple(float(c) for c in p) for p in data.get("centerline", [])],
            mean_radius=float(data.get("mean_radius", 0.0)),
            status=BranchStatus(data.get("status", "open")),
        )


class AirwayTree(BaseModel):
    """Rooted tree of branches plus the reconstructed global mask."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    branches: list[BranchRecord] = Field(default_factory=list)
    root_id: Optional[int] = None
    mask: Optional[InstanceOf[BinaryMask]] = Field(default=None, repr=False)
    truncated: bool = False

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def voxel_count(self) -> int:
        return self.mask.count if self.mask is not None else 0

    def get(self, branch_id: int) -> BranchRecord:
        for branch in self.branches:
            if branch.id == branch_id:
                return branch
        raise KeyError(f"no branch with id {branch_id}")

    def children(self, branch_id: int) -> list[BranchRecord]:
        return [b for b in self.branches if b.parent_id == branch_id]

    def ancestors(self, branch_id: int) -> list[int]:
        """Parent chain of a branch, nearest first; raises on a cycle."""
        chain: list[int] = []
        current = self.get(branch_id).parent_id
        while current is not None:
            if current == branch_id or current in chain:
                raise GeometryError(f"branch {branch_id} is its own ancestor")
            chain.append(current)
            current = self.get(current).parent_id
        return chain

    def validate(self) -> None:
        """Check the rooted-tree invariants: one root, no cycles, generation = parent + 1."""
        if not self.branches:
            return
        roots = [b for b in self.branches if b.parent_id is None]
        if len(roots) != 1:
            raise GeometryError(f"expected exactly one root branch, found {len(roots)}")
        for branch in self.branches:
            self.ancestors(branch.id)
            if branch.parent_id is not None:
                parent = self.get(branch.parent_id)
                if branch.generation != parent.generation + 1:
                    raise GeometryError(
                        f"branch {branch.id} has generation {branch.generation}, "
                        f"parent {parent.id} has {parent.generation}"
                    )

    def status_counts(self) -> dict[str, int]:
        counts = {status.value: 0 for status in BranchStatus}
        for branch in self.branches:
            counts[branch.status.value] += 1
        return counts

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            "branches": [b.to_dict() for b in self.branches],
            "root": self.root_id,
            "voxel_count": self.voxel_count,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AirwayTree":
        """Create from dictionary; the mask is not part of the JSON form."""
        return cls(
            branches=[BranchRecord.from_dict(b) for b in data.get("branches", [])],
            root_id=data.get("root"),
            truncated=bool(data.get("truncated", False)),
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AirwayTree":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"file not found: {path}")
        with open(path, "r") as f:
            data = json.load(f)
        return cls.from_dict(data)
