"""
VOI-based airway tracing.

A branch is followed by one VOI that is extended along its axis until its
candidate region leaves through no face (terminate), through two or more
separate surface components (furcation: spawn one child VOI per exit), or
bursts through the VOI surface (leak). Every VOI runs the same stage chain:
resample, LoG sharpening, CEF, entry region, leak check, surface exits, and
GVF, tube-likeness and centerline for the branch polyline and, at
furcations, the branch point and child directions.

Children start at the branch point. The parent keeps its region up to the
branch point; each child claims the voxels nearer to its own ray than to a
sibling's.

VOIs are processed in waves of the FIFO queue. A wave sees the visited
bitmap as it was when the wave started, and outcomes are committed one at a
time in sequence order, so results do not depend on the worker count.
"""

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import ndimage
from skimage import measure

from airway_gvf.enhance import cef, sharpen_log
from airway_gvf.gvf import initial_field, magnitude_map, solve_gvf
from airway_gvf.trachea import estimate_root_voi, grow_trachea
from airway_gvf.tree import AirwayTree, BranchRecord, BranchStatus
from airway_gvf.tube import (
    UNIT_SCALE,
    CenterlineGraph,
    extract_centerline,
    find_branch_points,
    tube_likeness_map,
)
from airway_gvf.voi import Voi, extend_voi, size_voi, unit_vector
from airway_gvf.volume import (
    BinaryMask,
    Geometry,
    ScalarVolume,
    adjacency,
    project_mask_to_global,
    resample_to_voi,
    voi_lattice_geometry,
)
from airway_gvf.errors import GeometryError

if TYPE_CHECKING:
    from airway_gvf.config import Config

logger = logging.getLogger(__name__)

__all__ = [
    "AirwayTree",
    "BranchRecord",
    "BranchStatus",
    "ChildSpec",
    "ExitComponent",
    "LeakParams",
    "LeakResult",
    "TracerParams",
    "Voi",
    "VoiOutcome",
    "analyse_voi",
    "detect_leak",
    "extend_voi",
    "process_voi",
    "ray_distance",
    "reconstruct",
    "size_voi",
    "surface_exit_components",
    "trace",
]

FACES = ("front", "up-", "up+", "side-", "side+")

# A GVF arm replaces the geometric child direction only within this angle.
ARM_MATCH_DEG = 30.0


class LeakParams(BaseModel):
    """Leak rejection thresholds."""
    model_config = ConfigDict(extra="forbid")

    s_ratio_max: float = 0.33
    circularity_min: float = 0.4

    @field_validator("s_ratio_max")
    @classmethod
    def _ratio(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("must lie in (0, 1)")
        return v

    @field_validator("circularity_min")
    @classmethod
    def _circularity(cls, v: float) -> float:
        if not 0 <= v <= 1:
            raise ValueError("must lie in [0, 1]")
        return v


class TracerParams(BaseModel):
    """Work-queue limits and per-VOI analysis switches."""
    model_config = ConfigDict(extra="forbid")

    max_generation: int = 12
    voxel_budget: int = 5_000_000
    max_vois: int = 2000
    max_extensions: int = 40
    threads: int = 1
    min_exit_voxels: int = 3
    # Bifurcations and trifurcations only; more separate exits is a leak.
    max_exits: int = 3
    # Dilation steps that add sub-threshold voxels next to the CEF candidates.
    fill_air: int = 1
    use_gvf: bool = True
    # Re-run a leaking VOI with a CEF gate lowered by leak_retry_hu per retry.
    leak_retries: int = 0
    leak_retry_hu: float = 50.0

    @field_validator("max_generation", "max_extensions", "leak_retries", "fill_air")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("voxel_budget", "max_vois", "threads", "min_exit_voxels")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("max_exits")
    @classmethod
    def _max_exits(cls, v: int) -> int:
        if v < 2:
            raise ValueError("must be >= 2")
        return v

    @field_validator("leak_retry_hu")
    @classmethod
    def _retry_step(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v


class LeakResult(NamedTuple):
    leaked: bool
    reason: Optional[str]
    s_ratio: float
    circularity: Optional[float]

    @property
    def ok(self) -> bool:
        return not self.leaked


class ExitComponent(NamedTuple):
    """Connected piece of the candidate region on the VOI surface."""
    face: str
    label: int
    voxel_count: int
    # VOI-frame mm coordinates.
    centroid: np.ndarray
    max_depth: int

    def world(self, voi: Voi) -> np.ndarray:
        return voi.to_world(self.centroid)


class ChildSpec(NamedTuple):
    """Child VOI placement; ``exit_point`` is where the child leaves the parent VOI."""
    base: np.ndarray
    axis: np.ndarray
    radius: float
    exit_point: np.ndarray


@dataclass
class VoiOutcome:
    """Result of analysing one VOI; pure data, committed later."""
    voi: Voi
    kind: str  # extend | terminate | furcation | leak | empty
    region: Optional[BinaryMask] = None
    leak: Optional[LeakResult] = None
    exits: list[ExitComponent] = field(default_factory=list)
    children: list[ChildSpec] = field(default_factory=list)
    branch_point: Optional[np.ndarray] = None
    centerline: list[tuple[float, float, float]] = field(default_factory=list)
    # Equivalent-disk radius of the region's cross-sections (mm).
    radius: float = 0.0


def _check_voi_mask(m: BinaryMask, voi: Voi) -> None:
    expected = voi_lattice_geometry(voi, m.spacing[0])
    if not m.geometry.matches(expected):
        raise GeometryError(f"mask geometry {m.geometry} does not match VOI lattice {expected}")


def shell_mask(dims, include_entry: bool = True) -> np.ndarray:
    """Voxels on the VOI faces; the entry face is k = 0."""
    shell = np.zeros(dims, dtype=bool)
    shell[[0, -1], :, :] = True
    shell[:, [0, -1], :] = True
    shell[:, :, -1] = True
    if include_entry:
        shell[:, :, 0] = True
    return shell


def contour_circularity(face: np.ndarray) -> Optional[float]:
    """
    4*pi*A / P^2 of a 2-D binary shape, capped at 1.

    A is the pixel count and P the total length of its marching-squares
    contours. None for an empty shape.
    """
    if not face.any():
        return None
    padded = np.pad(face.astype(float), 1)
    perimeter = sum(
        float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))
        for c in measure.find_contours(padded, 0.5)
    )
    if perimeter == 0:
        return None
    area = float(np.count_nonzero(face))
    return min(1.0, 4.0 * math.pi * area / (perimeter * perimeter))


def _largest_component_2d(face: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(face, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros_like(face, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def detect_leak(
    candidates: BinaryMask,
    voi: Voi,
    p: Optional[LeakParams] = None,
    start: int = 0,
) -> LeakResult:
    """
    Surface-ratio and front-contour leak test.

    s_ratio is the fraction of the VOI surface voxels that are candidates,
    counted from slice ``start`` on: all six faces for a fresh VOI, the side
    and front faces of the newly added slab for an extended one. Circularity
    is measured on the largest front-face component. The first failing test
    names the reason.
    """
    p = p or LeakParams()
    _check_voi_mask(candidates, voi)
    dims = candidates.dims
    start = min(max(int(start), 0), dims[2] - 1)
    shell = shell_mask(dims, include_entry=start == 0)
    shell[:, :, :start] = False
    s_ratio = float(np.count_nonzero(candidates.values & shell)) / float(np.count_nonzero(shell))
    circularity = contour_circularity(_largest_component_2d(candidates.values[:, :, -1]))

    if s_ratio > p.s_ratio_max:
        return LeakResult(True, f"s_ratio {s_ratio:.3f} > {p.s_ratio_max}", s_ratio, circularity)
    if circularity is not None and circularity < p.circularity_min:
        return LeakResult(
            True, f"circularity {circularity:.3f} < {p.circularity_min}", s_ratio, circularity
        )
    return LeakResult(False, None, s_ratio, circularity)


def _face_index(dims) -> np.ndarray:
    """Per-voxel face id (index into FACES) for the shell without the entry face; -1 elsewhere."""
    faces = np.full(dims, -1, dtype=int)
    # Later assignments win on edges; the front face is assigned last.
    faces[:, 0, :] = FACES.index("side-")
    faces[:, -1, :] = FACES.index("side+")
    faces[0, :, :] = FACES.index("up-")
    faces[-1, :, :] = FACES.index("up+")
    faces[:, :, -1] = FACES.index("front")
    return faces


def surface_exit_components(
    candidates: BinaryMask,
    voi: Voi,
    min_voxels: int = 3,
    entry_guard: int = 0,
) -> list[ExitComponent]:
    """
    26-connected components of the candidates on the front and side faces.

    Components smaller than ``min_voxels`` are noise; components that never
    reach deeper than ``entry_guard`` slices belong to the entry and are
    dropped as well. Each component reports the face holding most of its
    voxels, its size and its VOI-frame centroid.
    """
    _check_voi_mask(candidates, voi)
    dims = candidates.dims
    exit_shell = shell_mask(dims, include_entry=False)
    exit_shell[:, :, 0] = False
    on_shell = candidates.values & exit_shell
    labels, count = ndimage.label(on_shell, structure=adjacency(26))
    if count == 0:
        return []

    faces = _face_index(dims)
    pitch = candidates.spacing[0]
    origin = np.asarray(candidates.origin)
    exits = []
    for label in range(1, count + 1):
        idx = np.argwhere(labels == label)
        if idx.shape[0] < min_voxels:
            continue
        max_depth = int(idx[:, 2].max())
        if max_depth < entry_guard:
            continue
        face_counts = np.bincount(faces[idx[:, 0], idx[:, 1], idx[:, 2]], minlength=len(FACES))
        face = FACES[int(np.argmax(face_counts))]
        centroid = origin + idx.mean(axis=0) * pitch
        exits.append(ExitComponent(face, len(exits) + 1, int(idx.shape[0]), centroid, max_depth))
    return exits


def _default_config(config: Optional["Config"]) -> "Config":
    if config is not None:
        return config
    from airway_gvf.config import Config

    return Config()


def _entry_region(candidates: np.ndarray, depth: int) -> Optional[np.ndarray]:
    """Component of the candidate voxel nearest the entry-face center within ``depth`` slices."""
    slab = np.argwhere(candidates[:, :, :depth])
    if slab.size == 0:
        return None
    center = (np.asarray(candidates.shape[:2], dtype=float) - 1.0) / 2.0
    dist = np.sum((slab[:, :2] - center) ** 2, axis=1) + slab[:, 2].astype(float) ** 2
    seed = tuple(slab[int(np.argmin(dist))])
    labels, _ = ndimage.label(candidates, structure=adjacency(26))
    return labels == labels[seed]


def _lattice_points(mask: np.ndarray, origin: np.ndarray, pitch: float) -> np.ndarray:
    return origin + np.argwhere(mask) * pitch


def ray_distance(points: np.ndarray, base, direction) -> np.ndarray:
    """Distance (mm) from each point to the half-line base + t * direction, t >= 0."""
    rel = np.asarray(points, dtype=float) - np.asarray(base, dtype=float)
    t = np.maximum(rel @ np.asarray(direction, dtype=float), 0.0)
    return np.linalg.norm(rel - t[:, None] * np.asarray(direction, dtype=float), axis=1)


def _rival_owned(
    shape, origin: np.ndarray, pitch: float, voi: Voi, rivals
) -> np.ndarray:
    """Voxels nearer to a sibling ray than to this VOI's own axis."""
    if not rivals:
        return np.zeros(shape, dtype=bool)
    points = _lattice_points(np.ones(shape, dtype=bool), origin, pitch)
    own = ray_distance(points, np.zeros(3), np.array([0.0, 0.0, 1.0]))
    nearest = np.full(own.shape, np.inf)
    for base, axis in rivals:
        local_base = voi.to_local(base)
        local_axis = unit_vector(np.asarray(axis, dtype=float) @ voi.rotation)
        nearest = np.minimum(nearest, ray_distance(points, local_base, local_axis))
    return (own > nearest).reshape(shape)


def _slice_centroids(region: np.ndarray, voi: Voi, origin: np.ndarray, pitch: float) -> list[tuple[float, float, float]]:
    points = []
    for k in range(region.shape[2]):
        idx = np.argwhere(region[:, :, k])
        if idx.size == 0:
            continue
        local = origin + np.array([idx[:, 0].mean(), idx[:, 1].mean(), k]) * pitch
        points.append(tuple(float(c) for c in voi.to_world(local)))
    return points


def _split_point(region: np.ndarray, radius: float, pitch: float, origin: np.ndarray, start: int, min_voxels: int) -> np.ndarray:
    """
    Slice-based branch point in VOI-frame mm.

    Centroid of the region slice one radius before the first slice where the
    region falls apart into two or more pieces; the region centroid when it
    never does.
    """
    structure = np.ones((3, 3), dtype=bool)
    split = None
    for k in range(start, region.shape[2]):
        labels, count = ndimage.label(region[:, :, k], structure=structure)
        if count >= 2 and np.count_nonzero(np.bincount(labels.ravel())[1:] >= min_voxels) >= 2:
            split = k
            break
    if split is None:
        return origin + np.argwhere(region).mean(axis=0) * pitch

    k_bp = max(0, split - int(round(radius / pitch)))
    occupied = [k for k in range(region.shape[2]) if region[:, :, k].any()]
    k_bp = min(occupied, key=lambda k: (abs(k - k_bp), k))
    idx = np.argwhere(region[:, :, k_bp])
    return origin + np.array([idx[:, 0].mean(), idx[:, 1].mean(), k_bp]) * pitch


def _medial_graph(sharp: ScalarVolume, region: BinaryMask, radius: float, cfg: "Config") -> CenterlineGraph:
    """Pruned GVF centerline graph of the region, in VOI-frame mm."""
    flow = solve_gvf(initial_field(sharp, cfg.gvf), cfg.gvf)
    magnitude = magnitude_map(flow)
    core = region.with_values(region.values & (UNIT_SCALE * magnitude.values < cfg.tube.t_m))
    tubeness = tube_likeness_map(flow, cfg.tube, within=core)
    tube = cfg.tube.model_copy(update={"min_spur": min(cfg.tube.min_spur, radius)})
    _, graph = extract_centerline(magnitude, tubeness, region, tube)
    return graph


def _equivalent_radius(region: np.ndarray, pitch: float, first: int, last: int) -> float:
    """Median equivalent-disk radius of the non-empty slices first..last."""
    counts = region[:, :, first:last + 1].sum(axis=(0, 1))
    counts = counts[counts > 0]
    if counts.size == 0:
        counts = region.sum(axis=(0, 1))
        counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    return float(np.sqrt(np.median(counts) * pitch * pitch / np.pi))


def _child_geometry(
    points: np.ndarray,
    bp: np.ndarray,
    exits: list[ExitComponent],
    arms: list[np.ndarray],
    radius: float,
    pitch: float,
) -> list[tuple[np.ndarray, float]]:
    """
    Direction and radius of each child, VOI frame.

    Region points ahead of the branch point go to the nearest bp-to-exit ray.
    A child's direction points at the mean of its points farther than one
    parent radius from the branch point, snapped towards a matching GVF arm;
    its radius is the median equivalent-disk radius of 1-pitch cross-section
    bins along that direction, the last (face-cut) bin excluded.
    """
    rays = [unit_vector(ex.centroid - bp) if np.linalg.norm(ex.centroid - bp) > 0 else np.array([0.0, 0.0, 1.0])
            for ex in exits]
    ahead = points[points[:, 2] > bp[2]]
    if ahead.shape[0]:
        owner = np.argmin(np.stack([ray_distance(ahead, bp, d) for d in rays]), axis=0)
    else:
        owner = np.zeros(0, dtype=int)
    cos_match = math.cos(math.radians(ARM_MATCH_DEG))

    result = []
    for i, (ex, ray) in enumerate(zip(exits, rays)):
        cell = ahead[owner == i]
        t = (cell - bp) @ ray if cell.shape[0] else np.zeros(0)
        far = cell[t >= radius]
        direction = unit_vector(far.mean(axis=0) - bp) if far.shape[0] else ray
        if arms:
            best = max(arms, key=lambda a: float(a @ direction))
            if float(best @ direction) >= cos_match:
                direction = unit_vector(direction + best)

        child_radius = None
        if far.shape[0]:
            along = (far - bp) @ direction
            bins = np.bincount(np.floor(along[along >= 0] / pitch).astype(int), minlength=1)
            bins = bins[int(np.floor(radius / pitch)):-1]
            bins = bins[bins > 0]
            if bins.size:
                child_radius = float(np.sqrt(np.median(bins) * pitch * pitch / np.pi))
        if child_radius is None:
            child_radius = float(np.sqrt(ex.voxel_count * pitch * pitch / np.pi))
        result.append((direction, min(max(child_radius, pitch), radius)))
    return result


def _graph_centerline(
    graph: Optional[CenterlineGraph], voi: Voi, entry: np.ndarray, stop: Optional[np.ndarray]
) -> list[tuple[float, float, float]]:
    """
    Graph path from the entry to ``stop`` or, without one, to the deepest
    node connected to the entry; world mm, empty when there is no path.
    """
    if graph is None:
        return []
    start = graph.nearest(entry)
    if start is None:
        return []
    if stop is not None:
        end = graph.nearest(stop)
    else:
        end = max(nx.node_connected_component(graph.graph, start), key=lambda n: (n[2], n))
    nodes = graph.path(start, end)
    if len(nodes) < 2:
        return []
    return [tuple(float(c) for c in voi.to_world(graph.to_world(n))) for n in nodes]


def process_voi(
    v: ScalarVolume,
    voi: Voi,
    radius: float,
    config: Optional["Config"] = None,
    pitch: Optional[float] = None,
    visited: Optional[BinaryMask] = None,
    hu_offset: float = 0.0,
    previous_length: float = 0.0,
    rivals=(),
) -> VoiOutcome:
    """
    Run the per-VOI stage chain and classify the VOI.

    Voxels already owned by ``visited``, and voxels nearer to a sibling's
    (base, axis) ray in ``rivals`` than to this VOI's axis, are removed from
    the candidates before the entry region is taken. ``previous_length`` is
    the length of the VOI this one extends; only the new slab is checked for
    leaks through the side faces.
    """
    cfg = _default_config(config)
    params = cfg.tracer
    pitch = pitch or cfg.voi.resolve_pitch(v.spacing)
    local = resample_to_voi(v, voi, pitch)
    sharp = sharpen_log(local, cfg.enhance.beta, cfg.enhance.log_sigma)
    enhance = cfg.enhance
    if hu_offset:
        enhance = enhance.model_copy(update={"cef_hu_threshold": enhance.cef_hu_threshold - hu_offset})
    _, candidates = cef(sharp, enhance)
    origin = np.asarray(candidates.origin)

    cand = candidates.values
    owned = _rival_owned(cand.shape, origin, pitch, voi, rivals)
    if visited is not None and visited.count:
        projected = resample_to_voi(ScalarVolume(visited.values.astype(float), v.spacing, v.origin), voi, pitch)
        owned |= projected.values > 1e-6
    cand = cand & ~owned
    if params.fill_air:
        air = (sharp.values <= enhance.cef_hu_threshold) & ~owned
        cand = ndimage.binary_dilation(cand, structure=adjacency(26), iterations=params.fill_air, mask=air)

    guard = int(math.ceil(radius / pitch))
    region_values = _entry_region(cand, max(2, guard + 1))
    if region_values is None:
        logger.debug("VOI at %s: no entry region", np.round(voi.base, 1).tolist())
        return VoiOutcome(voi=voi, kind="empty")

    region = candidates.with_values(region_values)
    start = int(round(previous_length / pitch))
    outcome = VoiOutcome(voi=voi, kind="terminate", region=region)
    outcome.leak = detect_leak(region, voi, cfg.leak, start)
    outcome.exits = surface_exit_components(region, voi, params.min_exit_voxels, guard)
    logger.debug(
        "VOI gen %d len %.1f: %d voxels, %d exits, s_ratio=%.3f, circularity=%s",
        voi.generation, voi.length, region.count, len(outcome.exits), outcome.leak.s_ratio,
        "n/a" if outcome.leak.circularity is None else f"{outcome.leak.circularity:.3f}",
    )

    if outcome.leak.leaked:
        outcome.kind = "leak"
        return outcome
    if len(outcome.exits) > params.max_exits:
        outcome.kind = "leak"
        outcome.leak = outcome.leak._replace(
            leaked=True, reason=f"{len(outcome.exits)} exits > {params.max_exits}"
        )
        return outcome
    if len(outcome.exits) == 1:
        ex = outcome.exits[0]
        stale = ex.face != "front" and ex.max_depth < start
        outcome.kind = "terminate" if stale else "extend"
    elif len(outcome.exits) >= 2:
        outcome.kind = "furcation"

    graph = _medial_graph(sharp, region, radius, cfg) if params.use_gvf else None
    entry = np.array([0.0, 0.0, origin[2]])
    last = region_values.shape[2] - 1

    if outcome.kind == "furcation":
        bp = _split_point(region_values, radius, pitch, origin, guard, params.min_exit_voxels)
        arms: list[np.ndarray] = []
        if graph is not None:
            found = find_branch_points(graph)
            if found:
                nearest = min(found, key=lambda q: float(np.linalg.norm(q.point - bp)))
                if np.linalg.norm(nearest.point - bp) <= 2.0 * radius:
                    bp = np.asarray(nearest.point, dtype=float)
                    arms = [np.asarray(d, dtype=float) for d in nearest.directions]
        bp_world = voi.to_world(bp)
        outcome.branch_point = bp_world

        points = _lattice_points(region_values, origin, pitch)
        children = []
        for ex, (direction, child_radius) in zip(
            outcome.exits, _child_geometry(points, bp, outcome.exits, arms, radius, pitch)
        ):
            children.append(ChildSpec(bp_world, voi.rotation @ direction, child_radius, ex.world(voi)))
        outcome.children = sorted(children, key=lambda c: tuple(c.exit_point))

        last = min(max(int(math.floor((bp[2] - origin[2]) / pitch)), 0), last)
        kept = region_values.copy()
        kept[:, :, last + 1:] = False
        outcome.region = region = candidates.with_values(kept)
        region_values = kept

    stop = None if outcome.branch_point is None else voi.to_local(outcome.branch_point)
    path = _graph_centerline(graph, voi, entry, stop) or _slice_centroids(region_values, voi, origin, pitch)
    outcome.centerline = [tuple(float(c) for c in voi.base)] + path
    if outcome.branch_point is not None:
        outcome.centerline.append(tuple(float(c) for c in outcome.branch_point))
    outcome.radius = _equivalent_radius(region_values, pitch, guard, last)
    return outcome


@dataclass
class _Task:
    seq: int
    branch_id: int
    voi: Voi
    radius: float
    extensions: int = 0
    retries: int = 0
    hu_offset: float = 0.0
    previous_length: float = 0.0
    rivals: tuple = ()
    last_good: Optional[VoiOutcome] = None


class _Tracer:
    """Mutable tracing state; only ``commit`` touches it."""

    def __init__(self, v: ScalarVolume, cfg: "Config", pitch: float):
        self.v = v
        self.cfg = cfg
        self.pitch = pitch
        self.tree = AirwayTree()
        self.visited = BinaryMask.empty_like(v)
        self.queue: deque[_Task] = deque()
        self._seq = 0
        self._next_id = 0
        self.processed = 0

    def _task(self, **kwargs) -> _Task:
        task = _Task(seq=self._seq, **kwargs)
        self._seq += 1
        return task

    def add_branch(
        self, parent: Optional[BranchRecord], voi: Voi, radius: float, rivals: tuple = ()
    ) -> BranchRecord:
        branch = BranchRecord(
            id=self._next_id,
            parent_id=None if parent is None else parent.id,
            generation=0 if parent is None else parent.generation + 1,
            mean_radius=radius,
        )
        self._next_id += 1
        self.tree.branches.append(branch)
        if parent is None:
            self.tree.root_id = branch.id
        self.tree.ancestors(branch.id)
        self.queue.append(self._task(branch_id=branch.id, voi=voi, radius=radius, rivals=rivals))
        return branch

    def _accept(self, branch: BranchRecord, outcome: VoiOutcome) -> None:
        self.visited = project_mask_to_global(outcome.region, outcome.voi, self.visited)
        branch.segments = [(outcome.voi, outcome.region)]
        branch.centerline = list(outcome.centerline)
        if outcome.radius > 0:
            branch.mean_radius = outcome.radius

    def _is_visited(self, world) -> bool:
        index = np.floor(self.v.geometry.world_to_index(world) + 0.5).astype(int)
        return self.visited.contains_index(index) and bool(self.visited.values[tuple(index)])

    def commit(self, task: _Task, outcome: VoiOutcome) -> None:
        branch = self.tree.get(task.branch_id)
        branch.vois.append(outcome.voi)
        params = self.cfg.tracer

        if outcome.kind == "empty":
            if task.last_good is not None:
                self._accept(branch, task.last_good)
                branch.status = BranchStatus.TERMINATED
            elif not branch.segments:
                logger.debug("Branch %d has no entry region, dropped", branch.id)
                self.tree.branches = [b for b in self.tree.branches if b is not branch]
            return

        if outcome.kind == "leak":
            if task.retries < params.leak_retries:
                self.queue.append(self._task(
                    branch_id=branch.id, voi=task.voi, radius=task.radius,
                    extensions=task.extensions, retries=task.retries + 1,
                    hu_offset=task.hu_offset + params.leak_retry_hu,
                    previous_length=task.previous_length, rivals=task.rivals, last_good=task.last_good,
                ))
                return
            if task.last_good is not None:
                self._accept(branch, task.last_good)
            branch.status = BranchStatus.LEAKED
            logger.info("Branch %d leaked: %s", branch.id, outcome.leak.reason)
            return

        if outcome.kind == "extend":
            if task.extensions < params.max_extensions:
                step = self.cfg.voi.extension_factor * task.radius
                self.queue.append(self._task(
                    branch_id=branch.id, voi=extend_voi(task.voi, step), radius=task.radius,
                    extensions=task.extensions + 1, retries=task.retries,
                    hu_offset=task.hu_offset, previous_length=task.voi.length,
                    rivals=task.rivals, last_good=outcome,
                ))
                return
            logger.warning("Branch %d reached %d extensions, closed", branch.id, task.extensions)

        if outcome.kind == "furcation":
            fresh = [c for c in outcome.children if not self._is_visited(c.exit_point)]
            if len(fresh) < len(outcome.children):
                logger.warning(
                    "Branch %d: %d child exits already traced, skipped",
                    branch.id, len(outcome.children) - len(fresh),
                )
            self._accept(branch, outcome)
            branch.status = BranchStatus.TERMINATED
            if branch.generation + 1 > params.max_generation:
                logger.warning("Branch %d: generation cap %d reached", branch.id, params.max_generation)
                return
            for child in fresh:
                voi = self.cfg.voi.size(child.radius, child.axis, child.base, branch.generation + 1)
                rivals = tuple((c.base, c.axis) for c in fresh if c is not child)
                spawned = self.add_branch(branch, voi, child.radius, rivals)
                logger.info(
                    "Branch %d spawned from %d at generation %d (r=%.2f mm)",
                    spawned.id, branch.id, spawned.generation, child.radius,
                )
            return

        self._accept(branch, outcome)
        branch.status = BranchStatus.TERMINATED
        logger.info("Branch %d terminated after %d VOIs", branch.id, len(branch.vois))

    def run(self) -> None:
        params = self.cfg.tracer
        executor = ThreadPoolExecutor(max_workers=params.threads) if params.threads > 1 else None
        try:
            while self.queue:
                allowance = params.max_vois - self.processed
                if allowance <= 0:
                    logger.warning("VOI cap %d reached, trace truncated", params.max_vois)
                    self.tree.truncated = True
                    break
                wave = [self.queue.popleft() for _ in range(min(allowance, len(self.queue)))]
                snapshot = self.visited

                def work(task: _Task) -> VoiOutcome:
                    return process_voi(
                        self.v, task.voi, task.radius, self.cfg, self.pitch, snapshot,
                        task.hu_offset, task.previous_length, task.rivals,
                    )

                outcomes = list(executor.map(work, wave)) if executor else [work(t) for t in wave]
                self.processed += len(wave)
                for task, outcome in zip(wave, outcomes):
                    self.commit(task, outcome)
                    if self.visited.count > params.voxel_budget:
                        logger.warning("Voxel budget %d exceeded, trace truncated", params.voxel_budget)
                        self.tree.truncated = True
                        self.queue.clear()
                        break
        finally:
            if executor is not None:
                executor.shutdown()


def trace(v: ScalarVolume, seed, config: Optional["Config"] = None) -> AirwayTree:
    """
    Trace the airway tree reachable from a seed voxel in the trachea.

    Raises:
        SeedError: propagated from trachea extraction
    """
    cfg = _default_config(config)
    pitch = cfg.voi.resolve_pitch(v.spacing)
    trachea = grow_trachea(v, seed, cfg.trachea)
    root = estimate_root_voi(trachea, cfg.voi, cfg.trachea.top_extent)

    tracer = _Tracer(v, cfg, pitch)
    tracer.add_branch(None, root, root.length / cfg.voi.length_factor)
    tracer.run()

    tree = tracer.tree
    tree.mask = reconstruct(tree, v.geometry)
    tree.validate()
    logger.info(
        "Traced %d branches (%s), %d voxels%s",
        tree.branch_count,
        ", ".join(f"{k} {n}" for k, n in tree.status_counts().items()),
        tree.voxel_count,
        " [truncated]" if tree.truncated else "",
    )
    return tree


def reconstruct(tree: AirwayTree, target) -> BinaryMask:
    """Union of every accepted VOI mask projected onto ``target`` (a Geometry or lattice)."""
    geometry = target if isinstance(target, Geometry) else target.geometry
    mask = BinaryMask(np.zeros(geometry.dims, dtype=bool), geometry.spacing, geometry.origin)
    for branch in tree.branches:
        for voi, region in branch.segments:
            mask = project_mask_to_global(region, voi, mask)
    return mask


def analyse_voi(
    v: ScalarVolume,
    voi: Voi,
    config: Optional["Config"] = None,
    pitch: Optional[float] = None,
) -> dict:
    """
    Every intermediate of the per-VOI stage chain, keyed by stage name.

    Keys: resampled, sharpened, cef, candidates, region, flow (the GVF
    field), gvf (its magnitude), tubeness, centerline. The GVF stages run
    on the entry region, or on all candidates when there is none.
    """
    cfg = _default_config(config)
    pitch = pitch or cfg.voi.resolve_pitch(v.spacing)
    local = resample_to_voi(v, voi, pitch)
    sharp = sharpen_log(local, cfg.enhance.beta, cfg.enhance.log_sigma)
    score, candidates = cef(sharp, cfg.enhance)

    radius = voi.length / cfg.voi.length_factor
    region_values = _entry_region(candidates.values, max(2, int(math.ceil(radius / pitch)) + 1))
    region = candidates if region_values is None else candidates.with_values(region_values)

    flow = solve_gvf(initial_field(sharp, cfg.gvf), cfg.gvf)
    magnitude = magnitude_map(flow)
    core = region.with_values(region.values & (UNIT_SCALE * magnitude.values < cfg.tube.t_m))
    tubeness = tube_likeness_map(flow, cfg.tube, within=core)
    centerline, _ = extract_centerline(magnitude, tubeness, region, cfg.tube)
    return {
        "resampled": local,
        "sharpened": sharp,
        "cef": score,
        "candidates": candidates,
        "region": region,
        "flow": flow,
        "gvf": magnitude,
        "tubeness": tubeness,
        "centerline": centerline,
    }
