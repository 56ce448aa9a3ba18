"""
Synthetic airway phantoms with exact ground truth.

A phantom is a binary-bifurcating tree of flat-ended tubes: air lumen, a
solid wall a few voxels thick, and parenchyma-like background. The root
enters through the top (+z) face and runs caudally; each child is deflected
by half the branch angle inside a bifurcation plane that turns by 90 degrees
every generation.

A breach opens the distal cap of one leaf branch into a walled drum of
air cells separated by thin septa, the kind of region a tracer must
reject as leakage.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from scipy import ndimage

from airway_gvf.errors import ConfigError, PhantomError
from airway_gvf.metaimage import load_mask, save_volume
from airway_gvf.tree import AirwayTree, BranchRecord, BranchStatus
from airway_gvf.utils import read_flat_config
from airway_gvf.voi import complete_frame, unit_vector
from airway_gvf.volume import BinaryMask, ScalarVolume, adjacency

logger = logging.getLogger(__name__)


class PhantomSpec(BaseModel):
    """Parameters of a synthetic airway tree."""
    model_config = ConfigDict(extra="forbid")

    generations: int = 3
    root_radius: float = 4.0
    radius_decay: float = 0.7
    branch_angle: float = 60.0
    branch_length_factor: float = 5.0
    lumen_hu: float = -1000.0
    wall_hu: float = 0.0
    background_hu: float = -900.0
    noise_sigma: float = 0.0
    rng_seed: int = 0
    pitch: float = 1.0
    margin: float = 4.0
    wall_thickness: int = 2
    breach_branch: Optional[int] = None
    breach_radius: float = 8.0

    @field_validator("generations")
    @classmethod
    def _generations(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("radius_decay")
    @classmethod
    def _decay(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("must lie in (0, 1)")
        return v

    @field_validator("root_radius", "branch_length_factor", "pitch", "breach_radius")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("branch_angle")
    @classmethod
    def _angle(cls, v: float) -> float:
        if not 0.0 < v < 180.0:
            raise ValueError("must lie in (0, 180) degrees")
        return v

    @field_validator("noise_sigma", "margin")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("wall_thickness")
    @classmethod
    def _wall(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1 voxel")
        return v

    @model_validator(mode="after")
    def _contrast(self) -> "PhantomSpec":
        if self.lumen_hu >= self.wall_hu:
            raise ValueError("lumen_hu must be below wall_hu")
        first_leaf = 2 ** (self.generations - 1) - 1
        if self.breach_branch is not None and not first_leaf <= self.breach_branch < self.branch_count:
            raise ValueError(f"breach_branch {self.breach_branch} is not a leaf of the tree")
        return self

    @property
    def branch_count(self) -> int:
        return 2 ** self.generations - 1

    @property
    def deepest_radius(self) -> float:
        return self.root_radius * self.radius_decay ** (self.generations - 1)


@dataclass
class GroundTruth:
    """Exact lumen mask and tree of a phantom."""
    mask: BinaryMask
    tree: AirwayTree
    # Air pocket behind a wall breach; never part of the lumen mask.
    pocket: Optional[BinaryMask] = None


@dataclass
class _Segment:
    id: int
    parent_id: Optional[int]
    generation: int
    start: np.ndarray
    direction: np.ndarray
    normal: np.ndarray
    radius: float
    length: float

    @property
    def end(self) -> np.ndarray:
        return self.start + self.length * self.direction


def load_phantom_spec(path: Union[str, Path]) -> PhantomSpec:
    """Parse a flat ``key=value`` phantom spec file."""
    values = read_flat_config(path)
    try:
        return PhantomSpec(**values)
    except ValidationError as e:
        err = e.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or "phantom"
        raise ConfigError(key, err["msg"]) from e


def _layout(spec: PhantomSpec) -> list[_Segment]:
    """Breadth-first branch layout; ids follow generation order."""
    half = np.radians(spec.branch_angle) / 2.0
    root = _Segment(
        id=0,
        parent_id=None,
        generation=0,
        start=np.zeros(3),
        direction=np.array([0.0, 0.0, -1.0]),
        normal=np.array([1.0, 0.0, 0.0]),
        radius=spec.root_radius,
        length=spec.branch_length_factor * spec.root_radius,
    )
    segments = [root]
    frontier = [root]
    for generation in range(1, spec.generations):
        next_frontier = []
        for parent in frontier:
            radius = parent.radius * spec.radius_decay
            for sign in (1.0, -1.0):
                direction = unit_vector(np.cos(half) * parent.direction + sign * np.sin(half) * parent.normal)
                child = _Segment(
                    id=len(segments),
                    parent_id=parent.id,
                    generation=generation,
                    start=parent.end.copy(),
                    direction=direction,
                    normal=unit_vector(np.cross(direction, parent.normal)),
                    radius=radius,
                    length=spec.branch_length_factor * radius,
                )
                segments.append(child)
                next_frontier.append(child)
        frontier = next_frontier
    return segments


def _axial_radial(points: np.ndarray, start: np.ndarray, direction: np.ndarray):
    rel = points - start
    t = rel @ direction
    radial = np.linalg.norm(rel - t[..., None] * direction, axis=-1)
    return t, radial


def _tube(points, start, direction, radius, t_lo, t_hi) -> np.ndarray:
    t, radial = _axial_radial(points, start, direction)
    return (radial <= radius) & (t >= t_lo) & (t <= t_hi)


def _ball(points, center, radius) -> np.ndarray:
    return np.linalg.norm(points - center, axis=-1) <= radius


def _lattice_points(origin, dims, pitch) -> np.ndarray:
    axes = [origin[d] + np.arange(dims[d]) * pitch for d in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


# Period and air width (voxels) of the cells inside a breach drum.
CELL_PERIOD = 5
CELL_AIR = 3


def _breach_span(spec: PhantomSpec, segment: _Segment) -> tuple[float, float]:
    """Axial start and end (mm from the branch start) of the drum past a leaf's cap."""
    wall = spec.wall_thickness * spec.pitch
    lo = segment.length + wall + 0.5 * spec.breach_radius
    return lo, lo + 2.0 * spec.breach_radius


def _breach(spec, points, segment, lumen):
    """Wall and pocket masks of a breach: an open neck into a drum of septated air cells."""
    wall = spec.wall_thickness * spec.pitch
    lo, hi = _breach_span(spec, segment)
    neck_radius = max(spec.pitch, 0.5 * segment.radius)
    start, direction = segment.start, segment.direction

    neck = _tube(points, start, direction, neck_radius, segment.length, lo)
    drum = _tube(points, start, direction, spec.breach_radius, lo, hi)
    shell = _tube(points, start, direction, neck_radius + wall, segment.length, lo)
    shell |= _tube(points, start, direction, spec.breach_radius + wall, lo - wall, hi + wall)

    in_band = np.floor(points / spec.pitch).astype(int) % CELL_PERIOD < CELL_AIR
    cells = drum & (in_band.sum(axis=-1) >= 2)
    labels, _ = ndimage.label(lumen | neck | cells, structure=adjacency(6))
    attached = np.unique(labels[lumen])
    pocket = np.isin(labels, attached[attached > 0]) & ~lumen
    return shell, pocket


def _render(spec, points, segments, breach=None):
    """Paint walls, then the breach, then lumens; returns (values, lumen, pocket)."""
    wall = spec.wall_thickness * spec.pitch
    shape = points.shape[:3]
    wall_mask = np.zeros(shape, dtype=bool)
    lumen = np.zeros(shape, dtype=bool)
    for seg in segments:
        wall_mask |= _tube(points, seg.start, seg.direction, seg.radius + wall, -wall, seg.length + wall)
        lumen |= _tube(points, seg.start, seg.direction, seg.radius, 0.0, seg.length)
        if seg.parent_id is not None:
            parent = segments[seg.parent_id]
            wall_mask |= _ball(points, seg.start, parent.radius + wall)
            lumen |= _ball(points, seg.start, parent.radius)

    pocket = np.zeros(shape, dtype=bool)
    if breach is not None:
        shell, pocket = _breach(spec, points, segments[breach], lumen)
        wall_mask |= shell

    values = np.full(shape, spec.background_hu, dtype=float)
    values[wall_mask] = spec.wall_hu
    values[pocket] = spec.lumen_hu
    values[lumen] = spec.lumen_hu
    return values, lumen, pocket


def _finish(spec: PhantomSpec, values: np.ndarray) -> np.ndarray:
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
    info = np.iinfo(np.int16)
    return np.clip(np.rint(values), info.min, info.max).astype(np.int16)


def _truth_tree(segments: list[_Segment], mask: BinaryMask) -> AirwayTree:
    branches = [
        BranchRecord(
            id=seg.id,
            parent_id=seg.parent_id,
            generation=seg.generation,
            centerline=[tuple(float(c) for c in seg.start), tuple(float(c) for c in seg.end)],
            mean_radius=seg.radius,
            status=BranchStatus.TERMINATED,
        )
        for seg in segments
    ]
    return AirwayTree(branches=branches, root_id=0, mask=mask)


def generate_phantom(spec: PhantomSpec) -> tuple[ScalarVolume, GroundTruth]:
    """
    Render a full binary airway tree.

    The top lattice slice sits half a voxel below the root start, so the root
    is open at the +z face and spans exactly its length in slices.

    Raises:
        PhantomError: deepest branch radius below one voxel pitch
    """
    if spec.deepest_radius < spec.pitch:
        raise PhantomError(
            f"unresolvable generation: deepest radius {spec.deepest_radius:.3f} mm "
            f"< voxel pitch {spec.pitch} mm"
        )

    segments = _layout(spec)
    pitch = spec.pitch
    reach = [seg.radius + spec.wall_thickness * pitch for seg in segments]
    lo = np.min([np.minimum(s.start, s.end) - r for s, r in zip(segments, reach)], axis=0)
    hi = np.max([np.maximum(s.start, s.end) + r for s, r in zip(segments, reach)], axis=0)
    if spec.breach_branch is not None:
        seg = segments[spec.breach_branch]
        wall = spec.wall_thickness * pitch
        near, far = _breach_span(spec, seg)
        for t in (near - wall, far + wall):
            center = seg.start + t * seg.direction
            lo = np.minimum(lo, center - spec.breach_radius - wall)
            hi = np.maximum(hi, center + spec.breach_radius + wall)
    lo = lo - spec.margin
    hi = hi + spec.margin

    top = -0.5 * pitch
    origin_xy = np.floor(lo[:2] / pitch) * pitch
    dims_xy = np.ceil((hi[:2] - origin_xy) / pitch).astype(int) + 1
    nz = int(np.ceil((top - lo[2]) / pitch)) + 1
    origin = (float(origin_xy[0]), float(origin_xy[1]), top - (nz - 1) * pitch)
    dims = (int(dims_xy[0]), int(dims_xy[1]), nz)

    points = _lattice_points(origin, dims, pitch)
    values, lumen, pocket = _render(spec, points, segments, spec.breach_branch)
    spacing = (pitch, pitch, pitch)

    volume = ScalarVolume(_finish(spec, values), spacing, origin)
    mask = BinaryMask(lumen, spacing, origin)
    truth = GroundTruth(
        mask=mask,
        tree=_truth_tree(segments, mask),
        pocket=BinaryMask(pocket, spacing, origin) if spec.breach_branch is not None else None,
    )
    logger.info(
        "Phantom: %d branches, dims=%s, %d lumen voxels",
        len(segments), dims, mask.count,
    )
    return volume, truth


def generate_cylinder(
    radius: float,
    length: float,
    axis=(0.0, 0.0, 1.0),
    profile: Optional[PhantomSpec] = None,
) -> tuple[ScalarVolume, GroundTruth]:
    """
    Render a single straight tube through the origin.

    The recorded segment runs from the origin to ``length * axis``; the tube
    itself continues past both ends and leaves the lattice through its
    faces. The origin is a lattice point.
    """
    if radius <= 0 or length <= 0:
        raise PhantomError(f"cylinder radius and length must be positive, got {radius}, {length}")
    profile = profile or PhantomSpec()
    pitch = profile.pitch
    direction = unit_vector(axis)
    wall = profile.wall_thickness * pitch
    pad = radius + wall + 2.0 * pitch

    end = length * direction
    lo = np.floor((np.minimum(0.0, end) - pad) / pitch) * pitch
    hi = np.ceil((np.maximum(0.0, end) + pad) / pitch) * pitch
    dims = tuple(int(n) for n in np.rint((hi - lo) / pitch).astype(int) + 1)
    origin = tuple(float(c) for c in lo)

    segment = _Segment(
        id=0,
        parent_id=None,
        generation=0,
        start=-2.0 * pad * direction,
        direction=direction,
        normal=np.asarray(complete_frame(direction)),
        radius=radius,
        length=length + 4.0 * pad,
    )
    points = _lattice_points(origin, dims, pitch)
    values, lumen, _ = _render(profile, points, [segment])
    spacing = (pitch, pitch, pitch)
    mask = BinaryMask(lumen, spacing, origin)

    recorded = _Segment(0, None, 0, np.zeros(3), direction, segment.normal, radius, length)
    truth = GroundTruth(mask=mask, tree=_truth_tree([recorded], mask))
    return ScalarVolume(_finish(profile, values), spacing, origin), truth


def save_ground_truth(truth: GroundTruth, out_dir: Union[str, Path]) -> None:
    """Write ``truth_mask.mhd`` and ``truth_tree.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_volume(truth.mask, out_dir / "truth_mask.mhd")
    truth.tree.save(out_dir / "truth_tree.json")


def load_ground_truth(in_dir: Union[str, Path]) -> GroundTruth:
    in_dir = Path(in_dir)
    mask = load_mask(in_dir / "truth_mask.mhd")
    tree = AirwayTree.load(in_dir / "truth_tree.json")
    tree.mask = mask
    return GroundTruth(mask=mask, tree=tree)
