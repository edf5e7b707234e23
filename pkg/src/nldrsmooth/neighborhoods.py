"""Neighborhood graphs and local tangent frames.

Neighbor search is exact (kd-tree candidates, re-checked with exact
distances).  Frames come from an SVD of each closed neighborhood, i.e. the
neighbor list plus the center point itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateFrameError, IsolatedPointError, ValidationError

ON_POINT = "on_point"
ON_MEAN = "on_mean"


def _points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """Per-point sorted neighbor index arrays.

    ``mode`` is ``"h_ball"`` (with ``h``) or ``"knn"`` (with ``k``).  The
    center point is never listed unless ``includes_self`` is set.
    """

    neighbors: tuple
    mode: str
    h: float | None = None
    k: int | None = None
    includes_self: bool = False

    @property
    def n(self) -> int:
        return len(self.neighbors)

    def closed(self, i: int) -> np.ndarray:
        """Sorted neighborhood of ``i`` including ``i`` itself."""
        nb = self.neighbors[i]
        if self.includes_self:
            return nb
        return np.insert(nb, np.searchsorted(nb, i), i)

    def open(self, i: int) -> np.ndarray:
        """Sorted neighborhood of ``i`` excluding ``i``."""
        nb = self.neighbors[i]
        return nb[nb != i] if self.includes_self else nb

    def sizes(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors])

    def adjacency(self):
        """0/1 sparse adjacency (directed as stored; diagonal if includes_self)."""
        from scipy import sparse

        rows = np.repeat(np.arange(self.n), self.sizes())
        cols = np.concatenate(self.neighbors) if self.n else np.zeros(0, dtype=int)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))


def build_graph(cloud, *, h: float | None = None, k: int | None = None, include_self: bool = False):
    """Build an exact h-ball or kNN neighborhood graph.

    Exactly one of ``h`` / ``k`` must be given.  kNN ties are broken by the
    smaller index.  An h-ball graph with an isolated point raises
    :class:`IsolatedPointError` naming the point and the smallest h that would
    connect every point.
    """
    if (h is None) == (k is None):
        raise ValidationError("give exactly one of h (h-ball) or k (kNN)")
    pts = _points(cloud)
    n = len(pts)
    tree = cKDTree(pts)

    if h is not None:
        h = float(h)
        if not h > 0:
            raise ValidationError("h must be positive")
        candidates = tree.query_ball_point(pts, r=h * (1 + 1e-9) + 1e-300)
        neighbors = []
        for i, cand in enumerate(candidates):
            cand = np.asarray(cand, dtype=int)
            dist = np.linalg.norm(pts[cand] - pts[i], axis=1)
            keep = np.sort(cand[(dist <= h) & (cand != i)])
            if len(keep) == 0:
                nn_dist, _ = tree.query(pts, k=2) if n > 1 else (np.full((n, 2), np.inf), None)
                raise IsolatedPointError(i, h, float(np.max(nn_dist[:, 1])))
            if include_self:
                keep = np.insert(keep, np.searchsorted(keep, i), i)
            neighbors.append(keep)
        return NeighborhoodGraph(tuple(neighbors), "h_ball", h=h, includes_self=include_self)

    k = int(k)
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < n (n={n}), got {k}")
    kth, _ = tree.query(pts, k=k + 1)
    neighbors = []
    for i in range(n):
        # kd-tree ordering among equal distances is arbitrary, so gather every
        # candidate up to the k-th distance and re-sort by (distance, index)
        radius = kth[i, -1] * (1 + 1e-9) + 1e-300
        cand = np.asarray(tree.query_ball_point(pts[i], r=radius), dtype=int)
        cand = cand[cand != i]
        dist = np.linalg.norm(pts[cand] - pts[i], axis=1)
        order = np.lexsort((cand, dist))
        keep = np.sort(cand[order[:k]])
        if include_self:
            keep = np.insert(keep, np.searchsorted(keep, i), i)
        neighbors.append(keep)
    return NeighborhoodGraph(tuple(neighbors), "knn", k=k, includes_self=include_self)


@dataclass(frozen=True, eq=False)
class LocalFrame:
    """Tangent frame of one closed neighborhood.

    ``members`` lists the neighborhood rows (sorted, center included);
    ``tangent_coords`` is the centered neighborhood matrix times
    ``tangent_basis``.
    """

    center_index: int
    members: np.ndarray
    tangent_basis: np.ndarray
    tangent_coords: np.ndarray
    singular_values: np.ndarray
    centering: str

    @property
    def center_row(self) -> int:
        return int(np.searchsorted(self.members, self.center_index))

    def left_singular_vectors(self) -> np.ndarray:
        """Top-m left singular vectors of the centered neighborhood matrix."""
        m = self.tangent_basis.shape[1]
        return self.tangent_coords / self.singular_values[:m]


def _sign_fix(basis: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def frame_from_members(pts: np.ndarray, center: int, members, m: int, centering: str = ON_POINT):
    """Local SVD frame of ``pts[members]`` centered on ``pts[center]`` or on the mean."""
    if centering not in (ON_POINT, ON_MEAN):
        raise ValidationError(f"unknown centering {centering!r}")
    members = np.asarray(members, dtype=int)
    need = m + (1 if centering == ON_MEAN else 0)
    if len(members) < need:
        raise DegenerateFrameError(
            f"point {center}: neighborhood of size {len(members)} is too small for an m={m} frame"
        )
    block = pts[members]
    origin = pts[center] if centering == ON_POINT else block.mean(axis=0)
    centered = block - origin
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if len(sv) < m or sv[0] == 0 or sv[m - 1] < 1e-12 * sv[0]:
        raise DegenerateFrameError(f"point {center}: rank-deficient neighborhood, no rank-{m} tangent frame")
    basis = _sign_fix(vt[:m].T)
    return LocalFrame(center, members, basis, centered @ basis, sv, centering)


def local_frame(cloud, graph: NeighborhoodGraph, i: int, m: int, centering: str = ON_POINT) -> LocalFrame:
    """SVD tangent frame at point ``i`` over its closed neighborhood."""
    return frame_from_members(_points(cloud), i, graph.closed(i), m, centering)


def local_frames(cloud, graph: NeighborhoodGraph, m: int, centering: str = ON_POINT) -> list:
    """Frames for every point, in index order."""
    pts = _points(cloud)
    return [frame_from_members(pts, i, graph.closed(i), m, centering) for i in range(graph.n)]
