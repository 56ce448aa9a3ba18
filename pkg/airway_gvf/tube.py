"""
Tube-likeness medialness on a GVF field, centerline extraction and
branch-point identification.

Tube-likeness at a point is the mean inward flow of the field through a
circle in the tube's cross-section plane: for growing radii the circle is
sampled, the field is interpolated trilinearly, and the mean of <V, D> with
D the inward unit normal is taken. Growth stops once any sample has passed
the peak of its inward flow, i.e. the circle touched the tube wall; radii from
that peak on are discarded. The score is the best mean flow over the kept
radii; its radius is the fitted radius.

Thresholds t_m and t_l are given in scaled units: 1000 x |V| and 1000 x the
mean-flow score.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import ndimage

from airway_gvf.errors import GeometryError
from airway_gvf.gvf import VectorField
from airway_gvf.thinning import thin_3d
from airway_gvf.voi import complete_frame
from airway_gvf.volume import BinaryMask, ScalarVolume, require_same_geometry

logger = logging.getLogger(__name__)

UNIT_SCALE = 1000.0

# Voxels averaged per arm when estimating a child direction.
ARM_SAMPLE = 5


class TubeParams(BaseModel):
    """Circle-fitting and centerline thresholds."""
    model_config = ConfigDict(extra="forbid")

    t_l: float = 200.0
    t_m: float = 500.0
    r_max: float = 10.0
    samples: int = 32
    edge_stop: float = 1.05
    # Skeleton spurs and isolated pieces shorter than this (mm) are pruned.
    min_spur: float = 4.0

    @field_validator("samples")
    @classmethod
    def _samples(cls, v: int) -> int:
        if v < 8:
            raise ValueError("must be >= 8")
        return v

    @field_validator("r_max")
    @classmethod
    def _r_max(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("edge_stop")
    @classmethod
    def _edge_stop(cls, v: float) -> float:
        if v <= 1:
            raise ValueError("must be > 1")
        return v

    @field_validator("min_spur")
    @classmethod
    def _min_spur(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v


def fit_radii(spacing, r_max: float) -> np.ndarray:
    """Radii from one pitch upward in half-pitch steps."""
    pitch = float(min(spacing))
    if r_max < pitch:
        return np.array([pitch])
    return np.arange(pitch, r_max + 1e-9, 0.5 * pitch)


def _circle_basis(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    us = np.array([complete_frame(n) for n in normals]).reshape(-1, 3)
    ws = np.cross(normals, us)
    return us, ws


@dataclass
class _FitResult:
    score: np.ndarray
    radius: np.ndarray
    visited: np.ndarray
    flows: np.ndarray
    magnitudes: np.ndarray
    radii: np.ndarray


def _fit_circles(field: VectorField, points: np.ndarray, normals: np.ndarray, p: TubeParams) -> _FitResult:
    """Vectorized circle fitting for N (point, normal) pairs."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    n = points.shape[0]
    radii = fit_radii(field.spacing, p.r_max)

    alphas = 2.0 * np.pi * np.arange(p.samples) / p.samples
    us, ws = _circle_basis(normals)
    # Outward unit directions, shape (N, samples, 3).
    outward = np.cos(alphas)[None, :, None] * us[:, None, :] + np.sin(alphas)[None, :, None] * ws[:, None, :]

    origin = np.asarray(field.origin)
    spacing = np.asarray(field.spacing)
    upper = np.asarray(field.dims, dtype=float) - 1.0
    components = [field.values[..., c] for c in range(3)]

    flows = np.zeros((n, radii.size))
    magnitudes = np.zeros((n, radii.size))
    visited = np.zeros((n, radii.size), dtype=bool)
    # Per-sample running peak of the inward flow and the radius index it occurred at.
    peak = np.zeros((n, p.samples))
    peak_at = np.zeros((n, p.samples), dtype=int)
    active = np.ones(n, dtype=bool)

    for j, r in enumerate(radii):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        samples = points[idx, None, :] + r * outward[idx]
        coords = (samples - origin) / spacing
        inside = np.all((coords >= -1e-9) & (coords <= upper + 1e-9), axis=(1, 2))
        active[idx[~inside]] = False
        idx = idx[inside]
        if idx.size == 0:
            break
        flat = np.clip(coords[inside].reshape(-1, 3), 0.0, upper).T
        vec = np.stack(
            [ndimage.map_coordinates(c, flat, order=1, mode="nearest") for c in components], axis=-1
        ).reshape(idx.size, p.samples, 3)

        inflow = -np.einsum("nsc,nsc->ns", vec, outward[idx])
        mag = np.linalg.norm(vec, axis=-1).mean(axis=1)

        # A sample has crossed the edge once its inward flow falls below its
        # running peak by edge_stop; the circle touched the edge at that peak.
        crossed = (peak[idx] > 0) & (inflow * p.edge_stop < peak[idx])
        stop = crossed.any(axis=1)
        if stop.any():
            touch = np.where(crossed[stop], peak_at[idx[stop]], radii.size).min(axis=1)
            for row, cut in zip(idx[stop], np.maximum(touch, 1)):
                visited[row, cut:] = False
            active[idx[stop]] = False

        keep = ~stop
        kept = idx[keep]
        flows[kept, j] = inflow[keep].mean(axis=1)
        magnitudes[kept, j] = mag[keep]
        visited[kept, j] = True
        rising = inflow[keep] > peak[kept]
        peak[kept] = np.where(rising, inflow[keep], peak[kept])
        peak_at[kept] = np.where(rising, j, peak_at[kept])

    masked = np.where(visited, flows, -np.inf)
    best_j = np.argmax(masked, axis=1)
    score = masked[np.arange(n), best_j]
    radius = np.where(visited.any(axis=1), radii[best_j], 0.0)
    return _FitResult(score, radius, visited, flows, magnitudes, radii)


def circle_flow_profile(field: VectorField, x, normal, p: Optional[TubeParams] = None) -> list[tuple[float, float, float]]:
    """(radius, mean flow, mean magnitude) for every visited radius."""
    p = p or TubeParams()
    fit = _fit_circles(field, x, normal, p)
    return [
        (float(r), float(fit.flows[0, j]), float(fit.magnitudes[0, j]))
        for j, r in enumerate(fit.radii)
        if fit.visited[0, j]
    ]


def tube_likeness(field: VectorField, x, normal, p: Optional[TubeParams] = None) -> tuple[float, float]:
    """
    Mean-flow score and fitted radius (mm) at point ``x`` (field frame, mm).

    Raises:
        GeometryError: the smallest circle leaves the field domain
    """
    p = p or TubeParams()
    fit = _fit_circles(field, x, normal, p)
    if not fit.visited[0].any():
        raise GeometryError(f"point {tuple(np.round(x, 3))} too close to the boundary for a circle fit")
    return float(fit.score[0]), float(fit.radius[0])


def cross_section_normals(field: VectorField, index: np.ndarray) -> np.ndarray:
    """
    Candidate circle normals at voxel ``index`` rows, shape (N, 3, 3).

    First the least-flow eigenvector of the 3x3x3 structure tensor of V, then
    the two lattice axes nearest to it.
    """
    tensor = np.empty((index.shape[0], 3, 3))
    for a in range(3):
        for b in range(a, 3):
            smooth = ndimage.uniform_filter(field.values[..., a] * field.values[..., b], size=3, mode="nearest")
            tensor[:, a, b] = tensor[:, b, a] = smooth[index[:, 0], index[:, 1], index[:, 2]]
    _, vectors = np.linalg.eigh(tensor)
    principal = vectors[:, :, 0]
    nearest = np.argsort(-np.abs(principal), axis=1, kind="stable")[:, :2]
    axes = np.eye(3)[nearest]
    return np.concatenate([principal[:, None, :], axes], axis=1)


def tube_likeness_map(
    field: VectorField,
    p: Optional[TubeParams] = None,
    within: Optional[BinaryMask] = None,
) -> ScalarVolume:
    """
    Per-voxel best tube-likeness over three candidate normals.

    Lattice-border voxels, voxels whose smallest circle leaves the domain,
    and voxels outside ``within`` (when given) score 0.
    """
    p = p or TubeParams()
    region = np.ones(field.dims, dtype=bool) if within is None else within.values.copy()
    if within is not None:
        require_same_geometry(field, within, "field and mask")
    region[[0, -1], :, :] = False
    region[:, [0, -1], :] = False
    region[:, :, [0, -1]] = False

    result = np.zeros(field.dims)
    index = np.argwhere(region)
    if index.size == 0:
        return ScalarVolume(result, field.spacing, field.origin)

    normals = cross_section_normals(field, index)
    points = np.asarray(field.origin) + index * np.asarray(field.spacing)
    best = np.zeros(index.shape[0])
    for k in range(3):
        fit = _fit_circles(field, points, normals[:, k, :], p)
        score = np.where(fit.visited.any(axis=1), fit.score, 0.0)
        best = np.maximum(best, score) if k else score
    result[index[:, 0], index[:, 1], index[:, 2]] = best
    logger.debug("Tube-likeness: %d voxels evaluated, max %.3f", index.shape[0], float(best.max()))
    return ScalarVolume(result, field.spacing, field.origin)


class BranchPoint(NamedTuple):
    point: np.ndarray
    directions: list[np.ndarray]


@dataclass
class CenterlineGraph:
    """26-adjacency graph of a thinned centerline mask; nodes are voxel indices."""
    graph: nx.Graph
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    _junctions: Optional[list[frozenset]] = field(default=None, init=False, repr=False)

    @classmethod
    def from_mask(cls, m: BinaryMask) -> "CenterlineGraph":
        graph = nx.Graph()
        voxels = [tuple(int(c) for c in v) for v in np.argwhere(m.values)]
        present = set(voxels)
        graph.add_nodes_from(voxels)
        offsets = [
            (dx, dy, dz)
            for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            if (dx, dy, dz) > (0, 0, 0)
        ]
        for v in voxels:
            for off in offsets:
                nb = (v[0] + off[0], v[1] + off[1], v[2] + off[2])
                if nb in present:
                    graph.add_edge(v, nb)
        for node, degree in graph.degree():
            graph.nodes[node]["degree"] = degree
        return cls(graph, m.spacing, m.origin)

    def to_world(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def degree(self, node) -> int:
        return int(self.graph.degree(node))

    @property
    def endpoints(self) -> list[tuple[int, int, int]]:
        return sorted(n for n, d in self.graph.degree() if d == 1)

    @property
    def furcation_nodes(self) -> list[tuple[int, int, int]]:
        return sorted(n for n, d in self.graph.degree() if d >= 3)

    @property
    def junctions(self) -> list[frozenset]:
        """
        Clusters of furcation nodes, in sorted order.

        Furcation nodes within two voxels of each other belong to one
        cluster, together with any node adjacent to two of its members.
        """
        if self._junctions is None:
            nodes = self.furcation_nodes
            near = nx.Graph()
            near.add_nodes_from(nodes)
            for a, b in zip(*np.triu_indices(len(nodes), 1)):
                if max(abs(u - v) for u, v in zip(nodes[a], nodes[b])) <= 2:
                    near.add_edge(nodes[a], nodes[b])
            clusters = []
            for component in nx.connected_components(near):
                members = set(component)
                if len(members) > 1:
                    bridges = {
                        nb for c in component for nb in self.graph.neighbors(c)
                        if nb not in component and sum(m in component for m in self.graph.neighbors(nb)) >= 2
                    }
                    members |= bridges
                clusters.append(frozenset(members))
            self._junctions = sorted(clusters, key=lambda c: min(c))
        return self._junctions

    @property
    def furcations(self) -> list[tuple[int, int, int]]:
        """One representative voxel per junction: the one nearest its centroid."""
        reps = []
        for cluster in self.junctions:
            nodes = sorted(cluster)
            center = np.mean(nodes, axis=0)
            reps.append(min(nodes, key=lambda v: (float(np.sum((np.asarray(v) - center) ** 2)), v)))
        return reps

    def arms(self, cluster) -> list[list[tuple[int, int, int]]]:
        """Voxels of each arm leaving a junction, in breadth-first order from it."""
        cluster = set(cluster)
        rest = self.graph.subgraph(n for n in self.graph.nodes if n not in cluster)
        starts = sorted({nb for c in cluster for nb in self.graph.neighbors(c) if nb not in cluster})
        arms = []
        claimed: set = set()
        for start in starts:
            if start in claimed:
                continue
            component = nx.node_connected_component(rest, start)
            entry = [s for s in starts if s in component]
            claimed.update(entry)
            order = list(entry)
            seen = set(entry)
            frontier = list(entry)
            while frontier:
                nxt = []
                for node in frontier:
                    for nb in sorted(rest.neighbors(node)):
                        if nb not in seen:
                            seen.add(nb)
                            order.append(nb)
                            nxt.append(nb)
                frontier = nxt
            arms.append(order)
        return arms

    def pruned(self, min_length: float) -> "CenterlineGraph":
        """
        Copy without end spurs and isolated pieces shorter than ``min_length`` mm.

        A spur is the chain from an endpoint up to, not including, the first
        furcation node. One pass: spurs exposed by the removal are kept.
        """
        if min_length <= 0:
            return CenterlineGraph(self.graph.copy(), self.spacing, self.origin)
        step = float(min(self.spacing))
        drop: set = set()
        for piece in nx.connected_components(self.graph):
            if len(piece) * step < min_length:
                drop |= piece
        for end in self.endpoints:
            if end in drop:
                continue
            chain = [end]
            previous, node = None, end
            while True:
                following = [nb for nb in self.graph.neighbors(node) if nb != previous]
                if len(following) != 1:
                    break
                previous, node = node, following[0]
                if self.degree(node) >= 3:
                    break
                chain.append(node)
            if self.degree(node) >= 3 and len(chain) * step < min_length:
                drop.update(chain)
        graph = self.graph.copy()
        graph.remove_nodes_from(drop)
        for node, degree in graph.degree():
            graph.nodes[node]["degree"] = degree
        return CenterlineGraph(graph, self.spacing, self.origin)

    def to_mask(self, like: BinaryMask) -> BinaryMask:
        values = np.zeros(like.dims, dtype=bool)
        if self.graph.number_of_nodes():
            index = np.array(sorted(self.graph.nodes))
            values[index[:, 0], index[:, 1], index[:, 2]] = True
        return like.with_values(values)

    def path(self, start, stop) -> list[tuple[int, int, int]]:
        """Shortest voxel path between two nodes, empty when they are not connected."""
        try:
            return list(nx.shortest_path(self.graph, start, stop))
        except (nx.NetworkXNoPath, nx.NodeNotFound):
            return []

    def nearest(self, point) -> Optional[tuple[int, int, int]]:
        """Node whose world position is closest to ``point`` (mm)."""
        if not self.graph.number_of_nodes():
            return None
        nodes = sorted(self.graph.nodes)
        distances = np.linalg.norm(self.to_world(nodes) - np.asarray(point, dtype=float), axis=1)
        return nodes[int(np.argmin(distances))]


def find_branch_points(g: CenterlineGraph) -> list[BranchPoint]:
    """
    Every junction with one unit direction per incident arm.

    The point is the junction centroid (mm); each direction points from it to
    the mean of the first few voxels of the arm.
    """
    points = []
    for cluster in g.junctions:
        center = g.to_world(np.mean(sorted(cluster), axis=0))
        directions = []
        for arm in g.arms(cluster):
            target = g.to_world(np.mean(arm[:ARM_SAMPLE], axis=0))
            d = target - center
            norm = float(np.linalg.norm(d))
            if norm > 0:
                directions.append(d / norm)
        if len(directions) >= 3:
            points.append(BranchPoint(center, directions))
    return points


def extract_centerline(
    magnitude: ScalarVolume,
    tubeness: ScalarVolume,
    candidates: BinaryMask,
    p: Optional[TubeParams] = None,
) -> tuple[BinaryMask, CenterlineGraph]:
    """
    Double-threshold the magnitude and tube-likeness maps inside the
    candidates, thin the result, build its graph and prune spurs shorter
    than p.min_spur.

    Raises:
        GeometryError: the three lattices are not aligned
    """
    p = p or TubeParams()
    require_same_geometry(magnitude, tubeness, "magnitude and tubeness maps")
    require_same_geometry(magnitude, candidates, "magnitude map and candidates")
    selected = (
        candidates.values
        & (UNIT_SCALE * magnitude.values < p.t_m)
        & (UNIT_SCALE * tubeness.values > p.t_l)
    )
    thinned = thin_3d(candidates.with_values(selected))
    pruned = CenterlineGraph.from_mask(thinned).pruned(p.min_spur)
    # Spur bases left behind are simple points; a second pass removes them.
    centerline = thin_3d(pruned.to_mask(thinned))
    graph = CenterlineGraph.from_mask(centerline)
    logger.debug(
        "Centerline: %d voxels, %d endpoints, %d junctions",
        centerline.count, len(graph.endpoints), len(graph.junctions),
    )
    return centerline, graph
