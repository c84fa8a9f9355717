"""Random geometric graphs on point configurations and their combinatorial statistics.

Two rules are supported: the fixed-radius disk graph and the intersection graph of
balls with position-dependent radius ``(|x| + 1)^(-gamma)``. Neighbour search uses
a uniform grid with a half stencil, so every candidate pair is produced once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import InvalidArgumentError, UnsupportedDimensionError
from .model import PointConfiguration, Window
from .bounds import edge_constant, geometric_constant_D  # noqa: F401


# --------------------------------------------------------------------------- rules


@dataclass(frozen=True)
class DiskGraph:
    """Edge iff ``0 < |x - y| <= radius``."""

    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidArgumentError("disk radius must be positive and finite")

    def search_radius(self, points) -> float:
        return self.radius

    def connects(self, xi, xj, dist) -> np.ndarray:
        return (dist > 0) & (dist <= self.radius)


@dataclass(frozen=True)
class IntersectionGraph:
    """Edge iff ``0 < |x - y| <= rho(x) + rho(y)`` with ``rho(x) = (|x| + 1)^(-gamma)``."""

    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidArgumentError("gamma must be positive")

    def rho(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (np.linalg.norm(pts, axis=1) + 1.0) ** (-self.gamma)

    def search_radius(self, points) -> float:
        if len(points) == 0:
            return 1.0
        return 2.0 * float(self.rho(points).max())

    def connects(self, xi, xj, dist) -> np.ndarray:
        return (dist > 0) & (dist <= self.rho(xi) + self.rho(xj))


GraphRule = (DiskGraph, IntersectionGraph)


# --------------------------------------------------------------------------- grid


def _ragged_pairs(starts_a, counts_a, starts_b, counts_b, same):
    """All index pairs between matched cell runs of a sorted point array.

    ``same`` marks a cell paired with itself, where only ``i < j`` is kept.
    """
    if len(counts_a) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    sizes = counts_a * counts_b
    total = int(sizes.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    block = np.repeat(np.arange(len(sizes)), sizes)
    offset = np.arange(total) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    nb = counts_b[block]
    ia = starts_a[block] + offset // nb
    ib = starts_b[block] + offset % nb
    if same:
        keep = ia < ib
        ia, ib = ia[keep], ib[keep]
    return ia, ib


def _half_stencil(d: int):
    offs = [np.array(o) for o in itertools.product((-1, 0, 1), repeat=d)]
    # lexicographically positive offsets plus zero: each unordered cell pair once
    return [o for o in offs if tuple(o) >= (0,) * d]


def _candidate_pairs(points: np.ndarray, cell: float, window: Optional[Window]):
    """Candidate pairs ``(i, j)``, ``i != j``, within one grid cell of each other."""
    n, d = points.shape
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64), None
    if window is not None and window.periodic:
        sides = window.sides
        shape = np.floor(sides / cell).astype(np.int64)
        if np.any(shape < 3):
            i, j = np.triu_indices(n, 1)
            return i.astype(np.int64), j.astype(np.int64), None
        cell_vec = sides / shape
        idx = np.floor((points - window.lo) / cell_vec).astype(np.int64)
        idx = np.mod(idx, shape)
    else:
        origin = points.min(axis=0)
        idx = np.floor((points - origin) / cell).astype(np.int64)
        shape = idx.max(axis=0) + 3
        cell_vec = np.full(d, cell)
    strides = np.concatenate([[1], np.cumprod(shape[::-1])[:-1]])[::-1]
    key = idx @ strides
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ukeys, starts, counts = np.unique(skey, return_index=True, return_counts=True)
    ucells = idx[order][starts]
    ia_all, ib_all = [], []
    for off in _half_stencil(d):
        nb = ucells + off
        if window is not None and window.periodic:
            nb = np.mod(nb, shape)
            valid = np.ones(len(nb), bool)
        else:
            valid = np.all(nb >= 0, axis=1)
        nkey = nb @ strides
        pos = np.searchsorted(ukeys, nkey)
        pos = np.minimum(pos, len(ukeys) - 1)
        hit = valid & (ukeys[pos] == nkey)
        same = not np.any(off)
        a = np.flatnonzero(hit)
        ia, ib = _ragged_pairs(starts[a], counts[a], starts[pos[a]], counts[pos[a]], same)
        ia_all.append(order[ia])
        ib_all.append(order[ib])
    i = np.concatenate(ia_all)
    j = np.concatenate(ib_all)
    return i, j, {"cell_size": cell_vec, "shape": shape}


# --------------------------------------------------------------------------- graph


@dataclass(frozen=True, eq=False)
class GeometricGraph:
    """Adjacency structure over a simple configuration.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j`` and
    ``lengths`` the corresponding (minimum-image) distances.
    """

    config: PointConfiguration
    rule: object
    window: Optional[Window]
    edges: np.ndarray
    lengths: np.ndarray
    adjacency: sparse.csr_matrix
    grid: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return self.config.n_atoms

    @property
    def points(self) -> np.ndarray:
        return self.config.points

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def displacement(self, i, j) -> np.ndarray:
        if self.window is not None and self.window.periodic:
            return self.window.displacement(self.points[i], self.points[j])
        return self.points[j] - self.points[i]

    def is_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < len(nb) and nb[k] == j)


def _distances(points, i, j, window):
    if window is not None and window.periodic:
        diff = window.displacement(points[i], points[j])
    else:
        diff = points[j] - points[i]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def build_graph(config: PointConfiguration, rule, metric: Optional[Window] = None) -> GeometricGraph:
    """Build the geometric graph of ``config`` under ``rule``.

    Parameters
    ----------
    config : PointConfiguration
        Must be simple.
    rule : DiskGraph or IntersectionGraph
    metric : Window, optional
        A periodic window selects the torus metric; ``None`` or a non-periodic
        window means Euclidean distance.
    """
    if not isinstance(config, PointConfiguration):
        config = PointConfiguration.from_points(config)
    if not config.is_simple:
        raise InvalidArgumentError("graphs are defined on simple configurations only")
    if not isinstance(rule, GraphRule):
        raise InvalidArgumentError(f"unknown graph rule {rule!r}")
    window = metric if (metric is not None and metric.periodic) else None
    if isinstance(rule, IntersectionGraph) and window is not None:
        raise InvalidArgumentError("the intersection graph uses the Euclidean metric")
    if window is not None and window.dimension != config.dimension:
        raise InvalidArgumentError("window dimension does not match the configuration")
    pts = config.points
    if window is not None:
        pts_w = window.wrap(pts)
    else:
        pts_w = pts
    cell = rule.search_radius(pts)
    i, j, grid = _candidate_pairs(pts_w, cell, window)
    dist = _distances(pts_w, i, j, window)
    keep = rule.connects(pts_w[i], pts_w[j], dist)
    i, j, dist = i[keep], j[keep], dist[keep]
    lo_, hi_ = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((hi_, lo_))
    edges = np.stack([lo_[order], hi_[order]], axis=1).astype(np.int64)
    lengths = dist[order]
    n = config.n_atoms
    data = np.ones(2 * len(edges), dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    if grid is None:
        grid = {"cell_size": None, "shape": None}
    grid = dict(grid, search_radius=cell)
    return GeometricGraph(config, rule, window, edges, lengths, adj, grid)


def brute_force_edges(config: PointConfiguration, rule, metric: Optional[Window] = None) -> np.ndarray:
    """All-pairs reference edge list, sorted like ``GeometricGraph.edges``."""
    pts = config.points
    window = metric if (metric is not None and metric.periodic) else None
    if window is not None:
        pts = window.wrap(pts)
    n = len(pts)
    if n < 2:
        return np.empty((0, 2), np.int64)
    i, j = np.triu_indices(n, 1)
    dist = _distances(pts, i, j, window)
    keep = rule.connects(pts[i], pts[j], dist)
    return np.stack([i[keep], j[keep]], axis=1).astype(np.int64)


# --------------------------------------------------------------------------- statistics


def edge_count(g: GeometricGraph) -> int:
    return int(len(g.edges))


def triangle_count(g: GeometricGraph) -> int:
    """Number of triangles, from the wedges closed by an edge (trace of A^3 / 6)."""
    a = g.adjacency
    if a.nnz == 0:
        return 0
    closed = (a @ a).multiply(a).sum()
    return int(closed) // 6


def degree_square_sum(g: GeometricGraph) -> int:
    deg = g.degrees()
    return int(np.dot(deg, deg))


def _edge_displacements(g: GeometricGraph) -> np.ndarray:
    if len(g.edges) == 0:
        return np.empty((0, g.config.dimension))
    pts = g.points
    if g.window is not None:
        return g.window.displacement(pts[g.edges[:, 0]], pts[g.edges[:, 1]])
    return pts[g.edges[:, 1]] - pts[g.edges[:, 0]]


def _nondegenerate_direction(disp: np.ndarray, a: np.ndarray, max_tries: int = 64) -> np.ndarray:
    """Deterministically rotate ``a`` until no displacement is orthogonal to it."""
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)
    d = a.size
    for k in range(max_tries):
        if disp.size == 0 or np.all(disp @ a != 0.0):
            return a
        # small rotation in the plane spanned by a and a fixed coordinate axis
        e = np.zeros(d)
        e[(k + 1) % d] = 1.0
        e = e - np.dot(e, a) * a
        if np.linalg.norm(e) < 1e-12:
            e = np.zeros(d)
            e[(k + 2) % d] = 1.0
            e = e - np.dot(e, a) * a
        e /= np.linalg.norm(e)
        ang = 1e-7 * (k + 1) * math.sqrt(2)
        a = math.cos(ang) * a + math.sin(ang) * e
        a = a / np.linalg.norm(a)
    raise InvalidArgumentError("could not find a non-degenerate direction")


def right_degrees(g: GeometricGraph, direction) -> np.ndarray:
    """Per-vertex count of neighbours ``y`` with ``<y - x, a> > 0``."""
    disp = _edge_displacements(g)
    a = _nondegenerate_direction(disp, direction)
    s = disp @ a if disp.size else np.empty(0)
    n = g.n_vertices
    # s > 0: second endpoint lies to the right of the first
    right = np.bincount(g.edges[s > 0, 0], minlength=n) + np.bincount(g.edges[s < 0, 1], minlength=n)
    return right.astype(np.int64)


def right_degree_square_sum(g: GeometricGraph, direction) -> int:
    r = right_degrees(g, direction)
    return int(np.dot(r, r))


def right_degree_square_sums(g: GeometricGraph, directions) -> np.ndarray:
    """``right_degree_square_sum`` for many directions at once."""
    A = np.array(np.atleast_2d(directions), dtype=float)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    m, n = len(A), g.n_vertices
    disp = _edge_displacements(g)
    if disp.size == 0:
        return np.zeros(m, dtype=np.int64)
    S = disp @ A.T
    for j in np.flatnonzero(np.any(S == 0.0, axis=0)):
        S[:, j] = disp @ _nondegenerate_direction(disp, A[j])
    owner = np.where(S > 0, g.edges[:, [0]], g.edges[:, [1]])
    counts = np.bincount((owner + n * np.arange(m)).ravel(), minlength=n * m).reshape(m, n)
    counts = counts.astype(np.int64)
    return np.sum(counts * counts, axis=1)


def length_power(g: GeometricGraph, alpha: float) -> float:
    """Sum over edges of ``|x - y|**alpha``; ``alpha = 0`` returns the edge count."""
    if not (0.0 <= alpha <= 1.0):
        raise InvalidArgumentError("alpha must lie in [0, 1]")
    if not isinstance(g.rule, DiskGraph):
        raise InvalidArgumentError("length power functionals are defined for disk graphs")
    if alpha == 0:
        return float(edge_count(g))
    return float(np.sum(g.lengths ** alpha))


def total_length(g: GeometricGraph) -> float:
    """Sum of edge lengths for any rule."""
    return float(np.sum(g.lengths))


# --------------------------------------------------------------------------- inequality checks


def random_directions(n: int, d: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class InequalityReport:
    n_edges: int
    n_triangles: int
    degree_square_sum: int
    max_right_degree_square_sum: int
    triangle_bound_ok: bool
    right_degree_ok: bool
    degree_square_ok: bool
    constant_D_ok: bool
    slack: dict

    @property
    def ok(self) -> bool:
        return self.triangle_bound_ok and self.right_degree_ok and self.degree_square_ok and self.constant_D_ok


def check_edge_inequalities(g: GeometricGraph, partition_count: int = 3, directions=None,
                            n_directions: int = 100, seed: int = 0) -> InequalityReport:
    """Evaluate the four squared-degree / triangle inequalities on one graph.

    Integer inequalities are decided exactly by squaring; the bound with the
    irrational constant ``D`` is compared in floating point with a relative
    slack of 1e-12.
    """
    p = int(partition_count)
    if p < 1:
        raise InvalidArgumentError("partition count must be >= 1")
    if not isinstance(g.rule, DiskGraph):
        raise InvalidArgumentError("edge inequalities concern disk graphs")
    N = edge_count(g)
    T = triangle_count(g)
    S = degree_square_sum(g)
    d = g.config.dimension
    if directions is None:
        directions = random_directions(n_directions, d, seed)
    directions = np.atleast_2d(directions)
    right = [int(v) for v in right_degree_square_sums(g, directions)]
    R = max(right) if right else 0

    # 3T <= sqrt(2) N^{3/2}  <=>  9 T^2 <= 2 N^3
    tri_ok = 9 * T * T <= 2 * N ** 3
    lem_ok = all(2 * p * T + p * N >= r for r in right)
    # S - 4pN <= (8 sqrt2 / 3) p N^{3/2}  <=>  lhs <= 0 or 9 lhs^2 <= 128 p^2 N^3
    lhs = S - 4 * p * N
    cor_ok = lhs <= 0 or 9 * lhs * lhs <= 128 * p * p * N ** 3
    rhs_d = edge_constant(p) * N ** 1.5
    thm_ok = S <= rhs_d * (1 + 1e-12)
    slack = {
        "triangle": math.sqrt(2) * N ** 1.5 - 3 * T,
        "right_degree": 2 * p * T + p * N - R,
        "degree_square": 8 * math.sqrt(2) / 3 * p * N ** 1.5 + 4 * p * N - S,
        "constant_D": rhs_d - S,
    }
    return InequalityReport(N, T, S, R, tri_ok, lem_ok, cor_ok, thm_ok, slack)


# --------------------------------------------------------------------------- half-ball partitions


@dataclass(frozen=True)
class ConePiece:
    """Cone sector ``{s u : 0 < s <= rho}`` with ``u`` in an angular box.

    ``polar`` bounds the angle to the first axis, ``azimuth`` the angle in the
    remaining coordinates (d = 3 only); both in degrees, half-open ``(lo, hi]``.
    """

    polar: tuple
    azimuth: tuple = (0.0, 360.0)


@dataclass
class HalfBallPartition:
    """Partition of ``{|x| <= rho, x_1 > 0}`` into pieces of diameter at most ``rho``.

    ``classify(points)`` returns the piece index of each point, or ``-1`` when the
    point is outside the half ball.
    """

    dimension: int
    rho: float
    pieces: list
    classify_fn: Optional[Callable] = None
    verified: bool = False
    max_piece_diameter: float = float("nan")

    @property
    def count(self) -> int:
        return len(self.pieces)

    def classify(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.classify_fn is not None:
            return np.asarray(self.classify_fn(pts), dtype=np.int64)
        return _classify_cones(pts, self.rho, self.pieces)


def _angles(pts: np.ndarray):
    r = np.linalg.norm(pts, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        polar = np.degrees(np.arccos(np.clip(pts[:, 0] / r, -1, 1)))
    if pts.shape[1] == 2:
        polar = np.where(pts[:, 1] < 0, -polar, polar)
        return r, polar, None
    az = np.degrees(np.mod(np.arctan2(pts[:, 2], pts[:, 1]), 2 * np.pi)) if pts.shape[1] == 3 else None
    return r, polar, az


def _classify_cones(pts, rho, pieces):
    d = pts.shape[1]
    out = np.full(len(pts), -1, dtype=np.int64)
    inside = (np.linalg.norm(pts, axis=1) <= rho) & (pts[:, 0] > 0)
    if d == 1:
        out[inside] = 0
        return out
    r, polar, az = _angles(pts)
    for k, pc in enumerate(pieces):
        m = inside & (polar > pc.polar[0]) & (polar <= pc.polar[1])
        if d == 3:
            m &= (az > pc.azimuth[0]) & (az <= pc.azimuth[1])
            # the cap and full-azimuth bands include azimuth exactly 0
            if pc.azimuth[0] == 0.0:
                m |= inside & (polar > pc.polar[0]) & (polar <= pc.polar[1]) & (az == 0.0)
        out[m & (out < 0)] = k
    # polar angle exactly 0 belongs to the cap (d = 3) or middle sector (d = 2)
    return out


def _builtin_pieces(d: int):
    if d == 1:
        return [ConePiece((0.0, 90.0))]
    if d == 2:
        # closed at the lower edge for the first sector so that -90 < angle is covered
        return [ConePiece((-90.0, -30.0)), ConePiece((-30.0, 30.0)), ConePiece((30.0, 90.0))]
    if d == 3:
        pieces = [ConePiece((-1.0, 30.0))]
        for lo, hi, m in ((30.0, 55.0, 5), (55.0, 90.0, 7)):
            w = 360.0 / m
            pieces.extend(ConePiece((lo, hi), (k * w, (k + 1) * w)) for k in range(m))
        return pieces
    raise UnsupportedDimensionError(f"no built-in half-ball partition for d = {d}")


def _angular_diameter(piece: ConePiece, d: int, n: int = 60) -> float:
    """Largest angle (degrees) between directions of a cone piece, on a dense grid."""
    if d == 1:
        return 0.0
    if d == 2:
        lo, hi = max(piece.polar[0], -90.0), min(piece.polar[1], 90.0)
        return hi - lo
    th = np.radians(np.linspace(max(piece.polar[0], 0.0), min(piece.polar[1], 90.0), n))
    ph = np.radians(np.linspace(piece.azimuth[0], piece.azimuth[1], n))
    T, P = np.meshgrid(th, ph)
    T, P = T.ravel(), P.ravel()
    u = np.stack([np.cos(T), np.sin(T) * np.cos(P), np.sin(T) * np.sin(P)], 1)
    c = np.clip(u @ u.T, -1.0, 1.0)
    return float(np.degrees(np.arccos(c.min())))


def _sample_half_ball(n: int, d: int, rho: float, rng) -> np.ndarray:
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 0] = np.abs(v[:, 0])
    r = rho * rng.random(n) ** (1.0 / d)
    return v * r[:, None]


def _max_pairwise(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    cand = pts
    if pts.shape[1] >= 2 and len(pts) > pts.shape[1] + 1:
        try:
            cand = pts[ConvexHull(pts).vertices]
        except QhullError:
            cand = pts
    best = 0.0
    for s in range(0, len(cand), 2048):
        blk = cand[s:s + 2048]
        dd = np.sum((blk[:, None, :] - cand[None, :, :]) ** 2, axis=2)
        best = max(best, float(dd.max()))
    return math.sqrt(best)


@dataclass
class PartitionVerification:
    coverage_ok: bool
    diameter_ok: bool
    n_samples: int
    n_unassigned: int
    max_diameter: float
    analytic_ok: Optional[bool]

    @property
    def ok(self) -> bool:
        return self.coverage_ok and self.diameter_ok and self.analytic_ok is not False


def verify_partition(partition: HalfBallPartition, n_samples: int = 10 ** 6,
                     n_per_piece: int = 10 ** 4, seed: int = 0) -> PartitionVerification:
    """Check that every half-ball sample falls in exactly one piece and that each
    piece's sampled diameter does not exceed ``rho``.

    Built-in cone pieces additionally get the angular criterion: a cone piece of
    radius ``rho`` has diameter at most ``rho`` iff its angular diameter is at most 60
    degrees.
    """
    d, rho = partition.dimension, partition.rho
    rng = np.random.default_rng(seed)
    pts = _sample_half_ball(n_samples, d, rho, rng)
    lab = partition.classify(pts)
    unassigned = int(np.sum((lab < 0) | (lab >= partition.count)))
    coverage_ok = unassigned == 0
    max_diam = 0.0
    # rejection-sample each piece separately so small pieces still get n_per_piece points
    for k in range(partition.count):
        got = pts[lab == k][:n_per_piece]
        tries = 0
        while len(got) < n_per_piece and tries < 50:
            extra = _sample_half_ball(4 * n_per_piece, d, rho, rng)
            got = np.vstack([got, extra[partition.classify(extra) == k]])[:n_per_piece]
            tries += 1
        max_diam = max(max_diam, _max_pairwise(got))
    diameter_ok = max_diam <= rho * (1 + 1e-12)
    analytic = None
    if partition.classify_fn is None:
        analytic = all(_angular_diameter(pc, d) <= 60.0 + 1e-9 for pc in partition.pieces)
    return PartitionVerification(coverage_ok, diameter_ok, n_samples, unassigned, max_diam, analytic)


def half_ball_partition(d: int, rho: float = 1.0, verify: bool = True,
                        n_samples: int = 10 ** 6, seed: int = 0) -> HalfBallPartition:
    """Built-in partition of the half ball into pieces of diameter at most ``rho``.

    Pieces are cone sectors: one piece for d = 1, three 60 degree sectors for
    d = 2 and 13 pieces for d = 3 (a 30 degree polar cap plus two azimuthal bands
    of 5 and 7 sectors split at polar angle 55 degrees). The count is an upper
    bound usable wherever the minimal partition number is required.
    """
    if d not in (1, 2, 3):
        raise UnsupportedDimensionError(
            f"built-in partitions exist for d in {{1, 2, 3}}, got {d}; "
            "pass a custom HalfBallPartition to verify_partition instead"
        )
    if not rho > 0:
        raise InvalidArgumentError("rho must be positive")
    part = HalfBallPartition(d, float(rho), _builtin_pieces(d))
    if verify:
        rep = verify_partition(part, n_samples=n_samples, n_per_piece=min(10 ** 4, n_samples), seed=seed)
        if not rep.ok:
            raise AssertionError(f"built-in partition failed verification: {rep}")
        part.verified = True
        part.max_piece_diameter = rep.max_diameter
    return part


# --------------------------------------------------------------------------- supremum functionals


def sup_cell_count(config: PointConfiguration, rho: float) -> int:
    """Largest point count of a closed cell ``[0, 2 rho]^d + 2 rho j``, ``j`` in Z^d."""
    if not rho > 0:
        raise InvalidArgumentError("rho must be positive")
    if config.n_atoms == 0:
        return 0
    u = config.points / (2.0 * rho)
    base = np.floor(u).astype(np.int64)
    on_face = u == base
    counts = {}
    mult = config.multiplicities
    for k in range(config.n_atoms):
        opts = [(b, b - 1) if f else (b,) for b, f in zip(base[k], on_face[k])]
        for cell in itertools.product(*opts):
            counts[cell] = counts.get(cell, 0) + int(mult[k])
    return max(counts.values())


@dataclass
class SupBracket:
    lower: float
    upper: float
    argmax: np.ndarray

    @property
    def value(self) -> float:
        return self.lower


def sup_weighted_ball_count(config: PointConfiguration, gamma: float, c: Optional[float] = None,
                            resolution: int = 64) -> SupBracket:
    """Bracket for ``sup_x rho(x) * eta(B(x, c rho(x)))``, ``c = 3^gamma + 1`` by default.

    The lower end maximises over the configuration points and a regular grid of
    centres; the upper end bounds each grid cell ``Q`` by
    ``max_Q rho * eta(B(center, half_diag + c * max_Q rho))``.
    """
    if not gamma > 0:
        raise InvalidArgumentError("gamma must be positive")
    if c is None:
        c = 3.0 ** gamma + 1.0
    d = config.dimension
    if config.n_atoms == 0:
        return SupBracket(0.0, 0.0, np.zeros(d))
    rule = IntersectionGraph(gamma)
    pts = config.points
    mult = config.multiplicities.astype(float)
    tree = cKDTree(pts)

    def weighted_counts(centers, radii):
        lists = tree.query_ball_point(centers, radii)
        return np.array([mult[l].sum() if len(l) else 0.0 for l in lists])

    lo_box = pts.min(axis=0) - c
    hi_box = pts.max(axis=0) + c
    axes = [np.linspace(a, b, resolution + 1) for a, b in zip(lo_box, hi_box)]
    h = (hi_box - lo_box) / resolution
    corners = np.stack(np.meshgrid(*[ax[:-1] for ax in axes], indexing="ij"), -1).reshape(-1, d)
    centers = corners + h / 2
    grid_nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)

    cand = np.vstack([pts, grid_nodes])
    rc = rule.rho(cand)
    vals = rc * weighted_counts(cand, c * rc * (1 + 1e-12))
    k = int(np.argmax(vals))
    lower = float(vals[k])

    # nearest point of each cell to the origin gives the largest radius there
    near = np.clip(0.0, corners, corners + h)
    rho_max = (np.linalg.norm(near, axis=1) + 1.0) ** (-gamma)
    half_diag = 0.5 * float(np.linalg.norm(h))
    upper_cells = rho_max * weighted_counts(centers, half_diag + c * rho_max)
    # outside the padded box no ball of radius c * rho <= c reaches a point
    upper = max(lower, float(upper_cells.max()))
    return SupBracket(lower, upper, cand[k])
