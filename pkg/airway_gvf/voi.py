"""
Voi: oriented volume of interest that tracks one airway branch.

The local frame has columns (up, side, axis) with side = axis x up. Voxel
centers of a VOI lattice at pitch h sit at

    cross-section: (i - (n_c - 1) / 2) * h   along up and side
    axial:         (k + 1/2) * h             along axis

so the entry face is centered on ``base`` and the box extends ``length`` mm
forward along ``axis``.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from airway_gvf.errors import GeometryError

_UNIT_TOL = 1e-6


def unit_vector(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise GeometryError(f"cannot normalize vector {tuple(v)}")
    return v / norm


def complete_frame(axis) -> tuple[float, float, float]:
    """Deterministic unit vector orthogonal to ``axis``.

    Uses the lattice axis least aligned with ``axis`` (first one on ties),
    Gram-Schmidt projected.
    """
    a = unit_vector(axis)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(a)))] = 1.0
    up = e - np.dot(e, a) * a
    return tuple(float(c) for c in unit_vector(up))


@dataclass(frozen=True)
class Voi:
    """Oriented box: entry-face center, running direction, square cross-section."""
    base: tuple[float, float, float]
    axis: tuple[float, float, float]
    up: tuple[float, float, float]
    cross_size: float
    length: float
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(c) for c in self.base))
        object.__setattr__(self, "axis", tuple(float(c) for c in self.axis))
        object.__setattr__(self, "up", tuple(float(c) for c in self.up))
        if self.cross_size <= 0 or self.length <= 0:
            raise GeometryError(
                f"degenerate VOI: cross_size={self.cross_size}, length={self.length}"
            )
        a = np.asarray(self.axis)
        u = np.asarray(self.up)
        if abs(np.linalg.norm(a) - 1.0) > _UNIT_TOL or abs(np.linalg.norm(u) - 1.0) > _UNIT_TOL:
            raise GeometryError("VOI axis and up must be unit vectors")
        if abs(float(np.dot(a, u))) > _UNIT_TOL:
            raise GeometryError("VOI axis and up must be orthogonal")

    @property
    def side(self) -> np.ndarray:
        return np.cross(np.asarray(self.axis), np.asarray(self.up))

    @property
    def rotation(self) -> np.ndarray:
        """3x3 matrix whose columns are (up, side, axis)."""
        return np.column_stack([np.asarray(self.up), self.side, np.asarray(self.axis)])

    def lattice_shape(self, pitch: float) -> tuple[int, int, int]:
        if pitch <= 0:
            raise GeometryError(f"voxel pitch must be positive, got {pitch}")
        n_c = max(1, int(round(self.cross_size / pitch)))
        n_l = max(1, int(round(self.length / pitch)))
        return (n_c, n_c, n_l)

    def local_origin(self, pitch: float) -> tuple[float, float, float]:
        n_c, _, _ = self.lattice_shape(pitch)
        half = (n_c - 1) / 2.0 * pitch
        return (-half, -half, 0.5 * pitch)

    def to_world(self, local: np.ndarray) -> np.ndarray:
        """Map (..., 3) local-frame mm coordinates to world mm."""
        return np.asarray(self.base) + np.asarray(local, dtype=float) @ self.rotation.T

    def to_local(self, world: np.ndarray) -> np.ndarray:
        """Map (..., 3) world mm coordinates to the local frame."""
        return (np.asarray(world, dtype=float) - np.asarray(self.base)) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "base": list(self.base),
            "axis": list(self.axis),
            "up": list(self.up),
            "cross_size": self.cross_size,
            "length": self.length,
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Voi":
        return cls(
            base=tuple(data["base"]),
            axis=tuple(data["axis"]),
            up=tuple(data["up"]),
            cross_size=float(data["cross_size"]),
            length=float(data["length"]),
            generation=int(data.get("generation", 0)),
        )


def size_voi(
    radius: float,
    direction,
    base,
    generation: int,
    cross_factor: float = 4.0,
    cross_floor: float = 3.0,
    length_factor: float = 4.0,
) -> Voi:
    """
    Build a VOI sized from the branch radius.

    cross_size = max(cross_factor * radius, cross_floor + 2 * radius)
    length     = length_factor * radius
    """
    if radius <= 0:
        raise GeometryError(f"branch radius must be positive, got {radius}")
    axis = unit_vector(direction)
    return Voi(
        base=tuple(base),
        axis=tuple(axis),
        up=complete_frame(axis),
        cross_size=max(cross_factor * radius, cross_floor + 2.0 * radius),
        length=length_factor * radius,
        generation=generation,
    )


def extend_voi(voi: Voi, step: float) -> Voi:
    """Same frame, length increased by ``step`` mm."""
    if step <= 0:
        raise GeometryError(f"extension step must be positive, got {step}")
    return replace(voi, length=voi.length + step)


class VoiParams(BaseModel):
    """VOI sizing constants and resampling pitch."""
    model_config = ConfigDict(extra="forbid")

    # None selects the finest spacing of the input volume.
    pitch: Optional[float] = None
    cross_factor: float = 4.0
    cross_floor: float = 3.0
    length_factor: float = 4.0
    extension_factor: float = 2.0

    @field_validator("pitch")
    @classmethod
    def _pitch(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("cross_factor", "length_factor", "extension_factor")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("cross_floor")
    @classmethod
    def _floor(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    def size(self, radius: float, direction, base, generation: int) -> Voi:
        return size_voi(
            radius, direction, base, generation,
            cross_factor=self.cross_factor,
            cross_floor=self.cross_floor,
            length_factor=self.length_factor,
        )

    def resolve_pitch(self, spacing) -> float:
        return float(self.pitch) if self.pitch is not None else float(min(spacing))
