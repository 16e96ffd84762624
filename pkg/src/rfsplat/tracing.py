"""BVH-accelerated ray tracing over Gaussian primitives.

BVH construction is a binned median split over 3-sigma bounding boxes with
a bounded leaf size; traversal returns exactly the hit set a brute-force
sweep over all Gaussians produces (tested, and relied on by the renderer).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .scene import (ALPHA_CAP, C_LIGHT, MAHAL_CUTOFF, MIN_LINK_DISTANCE,
                    Antenna, DegeneratePlacementError, RFGaussian, Scene,
                    SceneArrays, SceneValidationError, scene_arrays)
from .bsdf import IncidentSample

SEGMENT_EPS_FACTOR = 1e-6  # endpoint exclusion: t in (eps, span - eps)


@dataclass(frozen=True, eq=False)
class Bvh:
    """Node arrays plus the leaf-ordered primitive index."""

    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    prim_index: np.ndarray
    max_leaf: int = 4

    def arrays(self):
        return (self.node_lo, self.node_hi, self.node_left, self.node_right,
                self.node_start, self.node_count, self.prim_index)

    @property
    def n_nodes(self) -> int:
        return int(self.node_lo.shape[0])


def build_bvh(scene: Scene | SceneArrays, max_leaf: int = 4) -> Bvh:
    """Median-split BVH over the Gaussians' 3-sigma AABBs.

    An empty scene yields an empty sentinel whose queries return no hits.
    """
    arrays = scene_arrays(scene) if isinstance(scene, Scene) else scene
    n = arrays.mu.shape[0]
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, np.int32)
        return Bvh(z3, z3.copy(), zi, zi.copy(), zi.copy(), zi.copy(), zi.copy(), max_leaf)
    lo = arrays.aabb_lo
    hi = arrays.aabb_hi
    centroid = 0.5 * (lo + hi)

    nodes_lo: list[np.ndarray] = []
    nodes_hi: list[np.ndarray] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    count: list[int] = []
    order = np.arange(n)

    def emit(seg_lo: int, seg_hi: int) -> int:
        idx = order[seg_lo:seg_hi]
        node_id = len(nodes_lo)
        nodes_lo.append(lo[idx].min(axis=0))
        nodes_hi.append(hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        if seg_hi - seg_lo <= max_leaf:
            start[node_id] = seg_lo
            count[node_id] = seg_hi - seg_lo
            return node_id
        extent = nodes_hi[node_id] - nodes_lo[node_id]
        axis = int(np.argmax(extent))
        sub = np.argsort(centroid[idx, axis], kind="stable")
        order[seg_lo:seg_hi] = idx[sub]
        mid = seg_lo + (seg_hi - seg_lo) // 2
        left[node_id] = emit(seg_lo, mid)
        right[node_id] = emit(mid, seg_hi)
        return node_id

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 64 + 2 * int(math.log2(max(n, 2))) * 8 + n // max_leaf))
    try:
        emit(0, n)
    finally:
        sys.setrecursionlimit(old_limit)
    return Bvh(
        np.asarray(nodes_lo), np.asarray(nodes_hi),
        np.asarray(left, np.int32), np.asarray(right, np.int32),
        np.asarray(start, np.int32), np.asarray(count, np.int32),
        order.astype(np.int32), max_leaf)


@dataclass(frozen=True, eq=False)
class RayHitChain:
    """Hits sorted ascending by distance (ties broken by Gaussian index)."""

    gauss_index: np.ndarray   # (K,) int32
    distance: np.ndarray      # (K,) ray parameter of closest approach
    alpha: np.ndarray         # (K,) capped opacity contributions

    def __len__(self) -> int:
        return int(self.gauss_index.size)


def ray_gaussian_alpha(g: RFGaussian, origin, direction) -> tuple[float, float]:
    """Opacity contribution and distance for a single ray/Gaussian pair.

    Contribution is min(alpha * density at closest approach, cap), zero when
    the closest approach lies beyond 3 sigma or behind the origin.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise SceneValidationError("ray direction must be unit length")
    q = g.inv_covariance()
    e = o - g.mu
    qd = q @ d
    a = float(d @ qd)
    b = float(e @ qd)
    t = -b / a
    if t <= 0.0:
        return 0.0, 0.0
    closest = e + t * d
    m2 = float(closest @ (q @ closest))
    if m2 > MAHAL_CUTOFF ** 2:
        return 0.0, t
    contrib = min(g.alpha * math.exp(-0.5 * m2), ALPHA_CAP)
    return contrib, t


def _hits(arrays: SceneArrays, bvh: Bvh, origins, dirs, t_lo, t_hi, exclude, use_bvh: bool):
    fn = kernels.segment_hits if use_bvh else kernels.segment_hits_brute
    return fn(arrays.mu, arrays.icov6, arrays.alpha, bvh.arrays(), origins, dirs,
              t_lo, t_hi, exclude, ALPHA_CAP, MAHAL_CUTOFF ** 2)


def ray_chain(bvh: Bvh, scene: Scene | SceneArrays, origin, direction,
              use_bvh: bool = True) -> RayHitChain:
    """All Gaussians a ray intersects, ordered front to back."""
    arrays = scene_arrays(scene) if isinstance(scene, Scene) else scene
    o = np.asarray(origin, dtype=np.float64)[None, :]
    d = np.asarray(direction, dtype=np.float64)
    d = (d / np.linalg.norm(d))[None, :]
    offsets, idx, tst, _, acontrib = _hits(
        arrays, bvh, o, d, np.zeros(1), np.full(1, np.inf),
        np.full(1, -1, np.int32), use_bvh)
    k = int(offsets[1])
    return RayHitChain(idx[:k], tst[:k], acontrib[:k])


def visibility_chain(bvh: Bvh, scene: Scene | SceneArrays, src, dst,
                     exclude_index: int = -1, use_bvh: bool = True) -> tuple[float, RayHitChain]:
    """Transmittance of the src->dst segment through occluding Gaussians.

    V = prod (1 - alpha_j) over occluders whose closest approach lies in
    (eps, span - eps) with eps = 1e-6 * span; ``exclude_index`` removes the
    destination Gaussian itself.
    """
    arrays = scene_arrays(scene) if isinstance(scene, Scene) else scene
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    seg = dst - src
    span = float(np.linalg.norm(seg))
    if span <= 0.0:
        raise DegeneratePlacementError("visibility segment endpoints coincide")
    eps = SEGMENT_EPS_FACTOR * span
    offsets, idx, tst, _, acontrib = _hits(
        arrays, bvh, src[None, :], (seg / span)[None, :],
        np.array([eps]), np.array([span - eps]),
        np.array([exclude_index], np.int32), use_bvh)
    k = int(offsets[1])
    chain = RayHitChain(idx[:k], tst[:k], acontrib[:k])
    v = float(np.prod(1.0 - chain.alpha)) if k else 1.0
    return v, chain


def incident_field(tx: Antenna, g: RFGaussian, visibility: float, frequency: float,
                   s_tx: complex = 1.0 + 0.0j) -> IncidentSample:
    """Friis incident field with phase at a Gaussian.

    Amplitude sqrt(P_T G_T A / (4 pi d^2)) * V, phase arg(s_tx) - 2 pi d / lambda,
    direction from the Tx toward the Gaussian, solid angle weight 1.
    """
    from .geometry import projected_cross_section

    delta = g.mu - tx.position
    d = float(np.linalg.norm(delta))
    if d < MIN_LINK_DISTANCE:
        raise DegeneratePlacementError(f"Tx within {MIN_LINK_DISTANCE} m of Gaussian center")
    direction = delta / d
    area = projected_cross_section(g, direction)
    lam = C_LIGHT / frequency
    amp = math.sqrt(tx.power_watts * tx.gain * area / (4.0 * math.pi * d * d)) * visibility
    value = amp * complex(s_tx) * np.exp(-1j * 2.0 * np.pi * d / lam)
    return IncidentSample(direction=direction, field=np.array([value]), solid_angle=1.0)
