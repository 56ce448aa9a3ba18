"""
Gradient vector flow.

``initial_field`` builds the capped, normalized edge force F^n from a volume;
``solve_gvf`` diffuses it by explicit gradient descent on

    E(V) = sum  mu * |grad V|^2  +  |F^n|^2 * |V - F^n|^2

with zero-flux (Neumann) boundaries. Each vector component diffuses
independently.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from airway_gvf.enhance import gaussian_smooth, laplacian
from airway_gvf.errors import FieldError, GeometryError
from airway_gvf.volume import Geometry, ScalarVolume

logger = logging.getLogger(__name__)


class GvfParams(BaseModel):
    """Force-field and diffusion parameters."""
    model_config = ConfigDict(extra="forbid")

    sigma: float = 1.0
    # None: use the f_max_percentile-th percentile of |F| over the domain.
    f_max: Optional[float] = None
    f_max_percentile: float = 99.0
    mu: float = 0.1
    max_iters: int = 400
    tol: float = 1e-4

    @field_validator("sigma", "mu", "tol")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("f_max")
    @classmethod
    def _f_max(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("f_max_percentile")
    @classmethod
    def _percentile(cls, v: float) -> float:
        if not 0 < v <= 100:
            raise ValueError("must lie in (0, 100]")
        return v

    @field_validator("max_iters")
    @classmethod
    def _iters(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be >= 0")
        return v


@dataclass(frozen=True, eq=False)
class VectorField:
    """One 3-vector per voxel, values shaped (nx, ny, nz, 3)."""
    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 4 or values.shape[-1] != 3:
            raise GeometryError(f"vector field must be shaped (nx, ny, nz, 3), got {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape[:3])

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, self.spacing, self.origin)

    def component(self, axis: int) -> ScalarVolume:
        return ScalarVolume(self.values[..., axis].copy(), self.spacing, self.origin)

    @classmethod
    def zeros_like(cls, lattice) -> "VectorField":
        return cls(np.zeros(tuple(lattice.dims) + (3,)), lattice.spacing, lattice.origin)


def _gradient(values: np.ndarray, spacing) -> list[np.ndarray]:
    """Central differences; axes with a single voxel have zero derivative."""
    return [
        np.gradient(values, h, axis=axis) if values.shape[axis] > 1 else np.zeros_like(values)
        for axis, h in enumerate(spacing)
    ]


def initial_field(v: ScalarVolume, p: Optional[GvfParams] = None) -> VectorField:
    """
    F = -grad(G_sigma * v), rescaled so that |F^n| = min(|F|, f_max) / f_max.

    Voxels with |F| = 0 map to the zero vector.
    """
    p = p or GvfParams()
    smoothed = gaussian_smooth(v.values, p.sigma, v.spacing)
    force = -np.stack(_gradient(smoothed, v.spacing), axis=-1)
    magnitude = np.linalg.norm(force, axis=-1)

    f_max = p.f_max if p.f_max is not None else float(np.percentile(magnitude, p.f_max_percentile))
    if f_max <= 0:
        logger.debug("Initial field: flat input, zero field")
        return VectorField(np.zeros_like(force), v.spacing, v.origin)

    scale = 1.0 / np.maximum(magnitude, f_max)
    logger.debug("Initial field: f_max=%.3f", f_max)
    return VectorField(force * scale[..., None], v.spacing, v.origin)


def magnitude_map(f: VectorField) -> ScalarVolume:
    return ScalarVolume(np.linalg.norm(f.values, axis=-1), f.spacing, f.origin)


def time_step(mu: float, spacing) -> float:
    """Explicit step that keeps every iteration energy-decreasing."""
    return 1.0 / (4.0 * mu * sum(1.0 / (h * h) for h in spacing) + 1.0)


def gvf_energy(v: VectorField, f: VectorField, mu: float) -> float:
    """Discrete GVF energy of ``v`` against the force field ``f``."""
    smooth = 0.0
    for axis, h in enumerate(v.spacing):
        diff = np.diff(v.values, axis=axis) / h
        smooth += float(np.sum(diff * diff))
    weight = np.sum(f.values * f.values, axis=-1)
    data = float(np.sum(weight * np.sum((v.values - f.values) ** 2, axis=-1)))
    return mu * smooth + data


def solve_gvf(
    f: VectorField,
    p: Optional[GvfParams] = None,
    callback: Optional[Callable[[int, VectorField], None]] = None,
) -> VectorField:
    """
    Diffuse the force field by explicit iterations starting from V = F^n.

    Stops after max_iters or once the largest per-voxel update falls below
    tol. ``callback(iteration, V)`` runs after every iteration.

    Raises:
        FieldError: non-finite values in ``f``
    """
    p = p or GvfParams()
    if not np.all(np.isfinite(f.values)):
        raise FieldError("force field contains non-finite values")

    target = f.values
    weight = np.sum(target * target, axis=-1)[..., None]
    dt = time_step(p.mu, f.spacing)
    current = target.copy()

    iteration = 0
    update_size = 0.0
    for iteration in range(1, p.max_iters + 1):
        diffusion = np.stack(
            [laplacian(current[..., c], f.spacing) for c in range(3)], axis=-1
        )
        update = dt * (p.mu * diffusion - weight * (current - target))
        current = current + update
        update_size = float(np.max(np.linalg.norm(update, axis=-1))) if update.size else 0.0
        if callback is not None:
            callback(iteration, VectorField(current, f.spacing, f.origin))
        if update_size < p.tol:
            break

    logger.debug("GVF: %d iterations, last update %.2e", iteration, update_size)
    return VectorField(current, f.spacing, f.origin)
