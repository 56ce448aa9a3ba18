"""
Lattice types and lattice operations.

Arrays are indexed [x, y, z]; world position of voxel (i, j, k) is
origin + (i, j, k) * spacing (voxel-center based, no direction matrix).
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from airway_gvf.errors import GeometryError
from airway_gvf.voi import Voi

# Solid-tissue sentinel for samples outside the source volume.
PAD_HU = 1000.0

_GEOMETRY_TOL = 1e-9


def _as_triple(values, name: str) -> tuple[float, float, float]:
    triple = tuple(float(v) for v in values)
    if len(triple) != 3:
        raise GeometryError(f"{name} must have 3 components, got {len(triple)}")
    return triple


@dataclass(frozen=True)
class Geometry:
    """Lattice metadata shared by every volume type."""
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def matches(self, other: "Geometry") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=_GEOMETRY_TOL)
            and np.allclose(self.origin, other.origin, rtol=0, atol=_GEOMETRY_TOL)
        )

    def index_to_world(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def world_to_index(self, world) -> np.ndarray:
        return (np.asarray(world, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)


class _Lattice:
    """Shared behaviour of ScalarVolume, BinaryMask and LabelMap."""

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def _validate(self):
        if self.values.ndim != 3:
            raise GeometryError(f"expected a 3-D lattice, got {self.values.ndim} dimensions")
        if min(self.values.shape) < 1:
            raise GeometryError(f"dims must all be >= 1, got {self.values.shape}")
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing"))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))
        if min(self.spacing) <= 0:
            raise GeometryError(f"spacing must be positive, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, self.spacing, self.origin)

    def value_at(self, index):
        """Value at an integer index; out-of-range access raises IndexError."""
        idx = tuple(int(i) for i in index)
        if any(i < 0 or i >= n for i, n in zip(idx, self.dims)):
            raise IndexError(f"index {idx} outside lattice {self.dims}")
        return self.values[idx]

    def contains_index(self, index) -> bool:
        return all(0 <= int(i) < n for i, n in zip(index, self.dims))


@dataclass(frozen=True, eq=False)
class ScalarVolume(_Lattice):
    """One scalar per voxel: HU for CT input, dimensionless for filter responses."""
    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        self._validate()

    def with_values(self, values: np.ndarray) -> "ScalarVolume":
        return ScalarVolume(values, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class BinaryMask(_Lattice):
    """Voxel membership lattice aligned to a ScalarVolume."""
    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=bool))
        self._validate()

    @classmethod
    def empty_like(cls, lattice) -> "BinaryMask":
        return cls(np.zeros(lattice.dims, dtype=bool), lattice.spacing, lattice.origin)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def with_values(self, values: np.ndarray) -> "BinaryMask":
        return BinaryMask(values, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class LabelMap(_Lattice):
    """Dense component labels; 0 is background."""
    values: np.ndarray
    component_count: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int32))
        self._validate()

    def sizes(self) -> np.ndarray:
        """Voxel count per label, index 0 = background."""
        return np.bincount(self.values.ravel(), minlength=self.component_count + 1)


def require_same_geometry(a, b, what: str = "lattices") -> None:
    if not a.geometry.matches(b.geometry):
        raise GeometryError(
            f"geometry mismatch between {what}: {a.geometry} vs {b.geometry}"
        )


def voi_lattice_geometry(voi: Voi, pitch: float) -> Geometry:
    """Geometry of the VOI-frame lattice at ``pitch`` (origin in the local frame)."""
    return Geometry(voi.lattice_shape(pitch), (pitch, pitch, pitch), voi.local_origin(pitch))


def voi_world_points(voi: Voi, pitch: float) -> np.ndarray:
    """World coordinates of every VOI voxel center, shape (n_c, n_c, n_l, 3)."""
    geom = voi_lattice_geometry(voi, pitch)
    axes = [geom.origin[d] + np.arange(geom.dims[d]) * pitch for d in range(3)]
    local = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return voi.to_world(local)


def resample_to_voi(v: ScalarVolume, voi: Voi, voxel_pitch: float) -> ScalarVolume:
    """
    Trilinearly sample ``v`` on the VOI lattice.

    Samples outside the source lattice take PAD_HU. The returned volume's
    spacing is the pitch and its origin is expressed in the VOI local frame.
    """
    if voxel_pitch <= 0:
        raise GeometryError(f"voxel pitch must be positive, got {voxel_pitch}")
    if voi.cross_size <= 0 or voi.length <= 0:
        raise GeometryError("degenerate VOI")

    geom = voi_lattice_geometry(voi, voxel_pitch)
    world = voi_world_points(voi, voxel_pitch)
    index = v.geometry.world_to_index(world.reshape(-1, 3))

    upper = np.asarray(v.dims, dtype=float) - 1.0
    eps = 1e-9
    inside = np.all((index >= -eps) & (index <= upper + eps), axis=1)

    samples = np.full(index.shape[0], PAD_HU, dtype=float)
    if inside.any():
        coords = np.clip(index[inside], 0.0, upper).T
        samples[inside] = ndimage.map_coordinates(
            v.values.astype(float, copy=False), coords, order=1, mode="nearest"
        )
    return ScalarVolume(samples.reshape(geom.dims), geom.spacing, geom.origin)


def project_mask_to_global(m: BinaryMask, voi: Voi, target: BinaryMask) -> BinaryMask:
    """
    Union ``target`` with the nearest-neighbour back-projection of a VOI-frame mask.

    A global voxel is set when its center, mapped into the VOI frame, rounds to
    a set VOI voxel. Never clears bits of ``target``.
    """
    pitch = m.spacing[0]
    expected = voi_lattice_geometry(voi, pitch)
    if not m.geometry.matches(expected):
        raise GeometryError(f"VOI mask geometry {m.geometry} does not match VOI lattice {expected}")

    result = target.values.copy()
    if m.count == 0:
        return target.with_values(result)

    # Bounding box of the set VOI voxels in global index space.
    set_local = np.argwhere(m.values) * pitch + np.asarray(expected.origin)
    corners = voi.to_world(set_local)
    lo_world = corners.min(axis=0) - pitch
    hi_world = corners.max(axis=0) + pitch
    gg = target.geometry
    lo = np.maximum(np.floor(gg.world_to_index(lo_world)).astype(int), 0)
    hi = np.minimum(np.ceil(gg.world_to_index(hi_world)).astype(int), np.asarray(gg.dims) - 1)
    if np.any(hi < lo):
        return target.with_values(result)

    grids = np.meshgrid(*[np.arange(lo[d], hi[d] + 1) for d in range(3)], indexing="ij")
    idx = np.stack(grids, axis=-1).reshape(-1, 3)
    local = voi.to_local(gg.index_to_world(idx))
    vidx = np.floor((local - np.asarray(expected.origin)) / pitch + 0.5).astype(int)
    valid = np.all((vidx >= 0) & (vidx < np.asarray(expected.dims)), axis=1)
    hit = np.zeros(idx.shape[0], dtype=bool)
    hit[valid] = m.values[vidx[valid, 0], vidx[valid, 1], vidx[valid, 2]]
    sel = idx[hit]
    result[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return target.with_values(result)


def adjacency(connectivity: Literal[6, 26]) -> np.ndarray:
    """3x3x3 structuring element for 6- or 26-adjacency."""
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(m: BinaryMask, connectivity: Literal[6, 26] = 26) -> LabelMap:
    """
    Label connected components.

    Labels are dense and numbered in order of first appearance in an x-fastest
    scan (x, then y, then z), so the component holding the lowest voxel in
    that order is label 1.
    """
    labels, count = ndimage.label(m.values, structure=adjacency(connectivity))
    if count > 1:
        scan = labels.ravel(order="F")
        found = scan[scan > 0]
        ids, first = np.unique(found, return_index=True)
        relabel = np.zeros(count + 1, dtype=labels.dtype)
        relabel[ids[np.argsort(first)]] = np.arange(1, count + 1, dtype=labels.dtype)
        labels = relabel[labels]
    return LabelMap(labels, int(count), m.spacing, m.origin)
