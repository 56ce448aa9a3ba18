"""
Branch-level and voxel-level scores of a traced airway against ground truth.
"""

import io
import logging
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from rich.console import Console
from rich.table import Table
from scipy import ndimage
from skimage.draw import line_nd

from airway_gvf.phantom import GroundTruth
from airway_gvf.tree import AirwayTree, BranchRecord
from airway_gvf.volume import BinaryMask, Geometry, adjacency, require_same_geometry

logger = logging.getLogger(__name__)

# A truth centerline voxel is covered when it lies this many voxels or closer to the result.
HIT_DISTANCE = 2.0
HIT_FRACTION = 0.5


class Metrics(BaseModel):
    """Extracted branches, extraction ratio and false-positive rate."""
    model_config = ConfigDict(extra="forbid")

    branches_extracted: int
    total_branches: int
    extraction_ratio: float
    fpr: float
    fp_voxels: int
    tp_voxels: int

    @field_validator("extraction_ratio", "fpr")
    @classmethod
    def _percent(cls, v: float) -> float:
        if not 0 <= v <= 100:
            raise ValueError("must lie in [0, 100]")
        return v


def centerline_voxels(branch: BranchRecord, geometry: Geometry) -> np.ndarray:
    """Lattice indices of a branch polyline, clipped to the lattice, shape (n, 3)."""
    if not branch.centerline:
        return np.zeros((0, 3), dtype=int)
    points = np.floor(geometry.world_to_index(np.asarray(branch.centerline)) + 0.5).astype(int)
    points = np.clip(points, 0, np.asarray(geometry.dims) - 1)
    if len(points) == 1:
        return points
    pieces = [
        np.stack(line_nd(a, b, endpoint=True), axis=-1)
        for a, b in zip(points[:-1], points[1:])
    ]
    return np.unique(np.concatenate(pieces), axis=0)


def evaluate(result: Union[AirwayTree, BinaryMask], truth: GroundTruth) -> Metrics:
    """
    Score a traced airway.

    A truth branch is extracted when at least half of its centerline voxels lie
    within two voxels of the result mask. FPR is the share of result voxels
    outside the truth mask dilated by one voxel; an empty result has FPR 0.

    Raises:
        GeometryError: result and truth lattices differ
    """
    mask = result.mask if isinstance(result, AirwayTree) else result
    if mask is None:
        raise ValueError("tree carries no mask")
    require_same_geometry(mask, truth.mask, "result and truth masks")

    total = truth.tree.branch_count
    extracted = 0
    if mask.count:
        distance = ndimage.distance_transform_edt(~mask.values)
        for branch in truth.tree.branches:
            voxels = centerline_voxels(branch, mask.geometry)
            if voxels.size == 0:
                continue
            near = distance[voxels[:, 0], voxels[:, 1], voxels[:, 2]] <= HIT_DISTANCE
            if near.mean() >= HIT_FRACTION:
                extracted += 1
            else:
                logger.debug("Truth branch %d missed (%.0f%% covered)", branch.id, 100 * near.mean())

    tolerant = ndimage.binary_dilation(truth.mask.values, structure=adjacency(26))
    fp = int(np.count_nonzero(mask.values & ~tolerant))
    tp = int(np.count_nonzero(mask.values & truth.mask.values))
    metrics = Metrics(
        branches_extracted=extracted,
        total_branches=total,
        extraction_ratio=100.0 * extracted / total if total else 0.0,
        fpr=100.0 * fp / mask.count if mask.count else 0.0,
        fp_voxels=fp,
        tp_voxels=tp,
    )
    logger.info(
        "Extracted %d/%d branches, FPR %.2f%%", extracted, total, metrics.fpr
    )
    return metrics


def report(m: Metrics, baseline: Optional[Metrics] = None, label: str = "airway-gvf") -> Table:
    """Results table; with a baseline, adds its row and a signed delta row."""
    table = Table(title="Results", border_style="blue")
    table.add_column("Method", style="bold cyan")
    table.add_column("Extracted Branches", justify="right")
    table.add_column("Extraction Ratio (%)", justify="right")
    table.add_column("FPR (%)", justify="right", style="yellow")

    table.add_row(label, str(m.branches_extracted), f"{m.extraction_ratio:.2f}", f"{m.fpr:.2f}")
    if baseline is not None:
        table.add_row(
            "baseline",
            str(baseline.branches_extracted),
            f"{baseline.extraction_ratio:.2f}",
            f"{baseline.fpr:.2f}",
        )
        table.add_row(
            "Delta",
            f"{m.branches_extracted - baseline.branches_extracted:+d}",
            f"{m.extraction_ratio - baseline.extraction_ratio:+.2f}",
            f"{m.fpr - baseline.fpr:+.2f}",
        )
    return table


def format_report(m: Metrics, baseline: Optional[Metrics] = None, width: int = 100) -> str:
    """Plain-text rendering of ``report``; identical input gives identical text."""
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None)
    console.print(report(m, baseline))
    return buffer.getvalue()
