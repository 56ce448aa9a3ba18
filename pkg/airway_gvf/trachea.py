"""
Trachea extraction: adaptive-threshold region growing from a seed voxel, and
placement of the root VOI on the grown region.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage

from airway_gvf.errors import GeometryError, SeedError
from airway_gvf.voi import Voi, VoiParams
from airway_gvf.volume import BinaryMask, ScalarVolume, adjacency

logger = logging.getLogger(__name__)


class GrowParams(BaseModel):
    """Threshold schedule of the trachea region growing."""
    model_config = ConfigDict(extra="forbid")

    hu_start: float = -950.0
    hu_step: float = 25.0
    hu_max: float = -775.0
    explosion_ratio: float = 1.5
    # Craniocaudal extent used to orient the root VOI.
    top_extent: float = 20.0

    @field_validator("hu_step", "top_extent")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("explosion_ratio")
    @classmethod
    def _ratio(cls, v: float) -> float:
        if v <= 1:
            raise ValueError("must be > 1")
        return v

    @model_validator(mode="after")
    def _range(self) -> "GrowParams":
        if self.hu_start >= self.hu_max:
            raise ValueError("hu_start must be below hu_max")
        return self

    def thresholds(self) -> list[float]:
        count = int(np.floor((self.hu_max - self.hu_start) / self.hu_step + 1e-9)) + 1
        return [self.hu_start + i * self.hu_step for i in range(count)]


def _seed_region(values: np.ndarray, seed: tuple[int, int, int], threshold: float) -> np.ndarray:
    labels, _ = ndimage.label(values <= threshold, structure=adjacency(26))
    label = labels[seed]
    return labels == label if label else np.zeros(values.shape, dtype=bool)


def faces_touched(region: np.ndarray) -> int:
    """Number of lattice faces the region reaches."""
    count = 0
    for axis in range(3):
        for index in (0, region.shape[axis] - 1):
            if np.take(region, index, axis=axis).any():
                count += 1
    return count


def grow_trachea(v: ScalarVolume, seed, p: Optional[GrowParams] = None) -> BinaryMask:
    """
    Grow the seed's 26-connected air region with a rising threshold.

    The threshold steps from hu_start to hu_max and stops before the first
    step that multiplies the region volume by more than explosion_ratio.

    Raises:
        SeedError: seed outside the lattice, above hu_start, or the initial
            region reaches three or more faces
    """
    p = p or GrowParams()
    seed = tuple(int(c) for c in seed)
    if not v.contains_index(seed):
        raise SeedError(f"seed {seed} outside volume {v.dims}")
    seed_value = float(v.values[seed])
    if seed_value > p.hu_start:
        raise SeedError(f"seed not in air: value {seed_value:.0f} HU above {p.hu_start:.0f} HU")

    thresholds = p.thresholds()
    region = _seed_region(v.values, seed, thresholds[0])
    faces = faces_touched(region)
    if faces >= 3:
        raise SeedError(f"seed likely outside body: region touches {faces} volume faces")

    chosen = thresholds[0]
    size = int(region.sum())
    for threshold in thresholds[1:]:
        grown = _seed_region(v.values, seed, threshold)
        grown_size = int(grown.sum())
        if grown_size > p.explosion_ratio * size:
            logger.debug(
                "Threshold %.0f HU rejected: region %d -> %d voxels", threshold, size, grown_size
            )
            break
        region, size, chosen = grown, grown_size, threshold

    logger.info("Trachea grown at %.0f HU: %d voxels", chosen, size)
    return BinaryMask(region, v.spacing, v.origin)


def estimate_root_voi(
    m: BinaryMask,
    params: Optional[VoiParams] = None,
    top_extent: float = 20.0,
) -> Voi:
    """
    Place the root VOI on a trachea mask.

    The axis is the principal direction of the per-slice centroids within
    ``top_extent`` mm of the topmost slice, pointing towards -z. The base is
    the topmost slice centroid; the radius used for sizing is the
    equivalent-disk radius of that slice.

    Raises:
        GeometryError: empty mask, or fewer than two slices to orient on
    """
    params = params or VoiParams()
    if m.count == 0:
        raise GeometryError("empty mask: cannot place root VOI")

    idx = np.argwhere(m.values)
    world = m.geometry.index_to_world(idx)
    z_top = world[:, 2].max()
    keep = world[:, 2] >= z_top - top_extent - 1e-9
    idx, world = idx[keep], world[keep]

    slices = np.unique(idx[:, 2])
    if slices.size < 2:
        raise GeometryError("insufficient extent: mask spans a single slice")

    centroids = np.array([world[idx[:, 2] == k].mean(axis=0) for k in slices])
    centered = centroids - centroids.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis[2] > 0:
        axis = -axis

    top = slices.max()
    top_area = np.count_nonzero(idx[:, 2] == top) * m.spacing[0] * m.spacing[1]
    radius = float(np.sqrt(top_area / np.pi))
    base = centroids[-1]

    voi = params.size(radius, axis, base, generation=0)
    logger.info(
        "Root VOI: base=%s axis=%s radius=%.2f mm",
        np.round(base, 2).tolist(), np.round(axis, 3).tolist(), radius,
    )
    return voi
