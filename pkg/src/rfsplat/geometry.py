"""Pure geometric math on Gaussians: densities, projected cross-sections,
and the visual-stage depth/normal/uncertainty map evaluators with their
regularization losses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .scene import (MAHAL_CUTOFF, RFGaussian, Scene, SceneValidationError,
                    scene_arrays)
from .tracing import Bvh, build_bvh

_COND_LIMIT = 1e12


def gaussian_density(g: RFGaussian, x) -> float:
    """exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)); equals 1 at the center."""
    d = np.asarray(x, dtype=np.float64) - g.mu
    m2 = float(d @ g.inv_covariance() @ d)
    return float(np.exp(-0.5 * m2))


def projected_cross_section(g: RFGaussian, n_dir) -> float:
    """Silhouette area of the 1-sigma ellipsoid seen along n_dir.

    A(n) = pi * sqrt(det Sigma) * sqrt(n^T Sigma^-1 n); invariant under
    n -> -n and equal to the projected-ellipse area.
    """
    n = np.asarray(n_dir, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise SceneValidationError("projection direction must be unit length")
    s = g.scale
    cond = (float(np.max(s)) / float(np.min(s))) ** 2
    if cond > _COND_LIMIT:
        raise FloatingPointError(f"covariance condition number {cond:.3e} too extreme")
    quad = float(n @ g.inv_covariance() @ n)
    return float(np.pi * g.sqrt_det_covariance() * np.sqrt(quad))


@dataclass(frozen=True, eq=False)
class CameraRayBundle:
    """Per-pixel ray origins and unit directions, (H, W, 3) each."""

    origins: np.ndarray
    directions: np.ndarray
    intrinsics_tag: str = "custom"

    def __post_init__(self):
        o = np.asarray(self.origins, dtype=np.float64)
        d = np.asarray(self.directions, dtype=np.float64)
        if o.ndim != 3 or o.shape[2] != 3 or o.shape != d.shape:
            raise SceneValidationError("bundle arrays must both be (H, W, 3)")
        norms = np.linalg.norm(d, axis=2)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise SceneValidationError("all ray directions must be unit length")
        object.__setattr__(self, "origins", o)
        object.__setattr__(self, "directions", d)

    @property
    def shape(self):
        return self.origins.shape[:2]


def orthographic_bundle(center, direction, up, width_m: float, height_m: float,
                        h: int, w: int) -> CameraRayBundle:
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(d, upv)
    right /= np.linalg.norm(right)
    down = np.cross(d, right)
    down /= np.linalg.norm(down)
    ys = (np.arange(h) + 0.5) / h - 0.5
    xs = (np.arange(w) + 0.5) / w - 0.5
    origins = (np.asarray(center, dtype=np.float64)[None, None, :]
               + ys[:, None, None] * height_m * down[None, None, :]
               + xs[None, :, None] * width_m * right[None, None, :])
    dirs = np.broadcast_to(d, (h, w, 3)).copy()
    return CameraRayBundle(origins, dirs, intrinsics_tag=f"ortho:{width_m}x{height_m}")


def pinhole_bundle(origin, look_at, up, fov_deg: float, h: int, w: int) -> CameraRayBundle:
    o = np.asarray(origin, dtype=np.float64)
    fwd = np.asarray(look_at, dtype=np.float64) - o
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    down /= np.linalg.norm(down)
    half = np.tan(np.radians(fov_deg) / 2.0)
    ys = ((np.arange(h) + 0.5) / h * 2.0 - 1.0) * half * (h / w)
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * half
    dirs = (fwd[None, None, :]
            + ys[:, None, None] * down[None, None, :]
            + xs[None, :, None] * right[None, None, :])
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    origins = np.broadcast_to(o, (h, w, 3)).copy()
    return CameraRayBundle(origins, dirs, intrinsics_tag=f"pinhole:{fov_deg}deg")


@dataclass(frozen=True, eq=False)
class GeometryMaps:
    depth: np.ndarray      # (H, W) sum_i w_i d_i with w_i = a_i T_i
    normal: np.ndarray     # (H, W, 3)
    depth_sq: np.ndarray   # (H, W) second moment sum_i w_i d_i^2
    weight: np.ndarray     # (H, W) accumulated w


def render_geometry_maps(scene: Scene, rays: CameraRayBundle, bvh: Bvh | None = None) -> GeometryMaps:
    """Front-to-back blended depth/normal/second-moment maps.

    Uses uncapped per-ray opacity alpha_i * density so a fully opaque
    Gaussian accumulates weight exactly 1 (the RF cap only exists to keep
    transmittance gradients alive).
    """
    h, w = rays.shape
    depth = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    depth_sq = np.zeros((h, w))
    weight = np.zeros((h, w))
    if len(scene) == 0:
        return GeometryMaps(depth, normal, depth_sq, weight)
    arrays = scene_arrays(scene)
    if bvh is None:
        bvh = build_bvh(scene)
    nq = h * w
    origins = rays.origins.reshape(nq, 3)
    dirs = rays.directions.reshape(nq, 3)
    offsets, idx, tst, den, _ = kernels.segment_hits(
        arrays.mu, arrays.icov6, arrays.alpha, bvh.arrays(), origins, dirs,
        np.zeros(nq), np.full(nq, np.inf), np.full(nq, -1, np.int32),
        2.0, MAHAL_CUTOFF ** 2)  # cap > 1 so nothing is capped here
    a = arrays.alpha[idx] * den
    flat_d = depth.reshape(nq)
    flat_n = normal.reshape(nq, 3)
    flat_d2 = depth_sq.reshape(nq)
    flat_w = weight.reshape(nq)
    for q in range(nq):
        lo, hi = int(offsets[q]), int(offsets[q + 1])
        transmittance = 1.0
        for k in range(lo, hi):
            omega = a[k] * transmittance
            flat_d[q] += omega * tst[k]
            flat_d2[q] += omega * tst[k] * tst[k]
            flat_n[q] += omega * arrays.normal[idx[k]]
            flat_w[q] += omega
            transmittance *= 1.0 - a[k]
    return GeometryMaps(depth, normal, depth_sq, weight)


def _pseudo_normals(maps: GeometryMaps, rays: CameraRayBundle):
    """Central-difference pseudo-normals from back-projected depth points.

    Returns (normals (H,W,3), valid (H,W)); border pixels and pixels whose
    4-neighborhood is not fully covered are invalid.
    """
    h, w = maps.depth.shape
    pts = rays.origins + maps.depth[:, :, None] * rays.directions
    covered = maps.weight > 0
    valid = np.zeros((h, w), dtype=bool)
    valid[1:-1, 1:-1] = (covered[1:-1, 1:-1] & covered[:-2, 1:-1] & covered[2:, 1:-1]
                         & covered[1:-1, :-2] & covered[1:-1, 2:])
    tx = np.zeros((h, w, 3))
    ty = np.zeros((h, w, 3))
    tx[:, 1:-1] = 0.5 * (pts[:, 2:] - pts[:, :-2])
    ty[1:-1, :] = 0.5 * (pts[2:, :] - pts[:-2, :])
    n = np.cross(ty, tx)
    norms = np.linalg.norm(n, axis=2)
    good = norms > 1e-12
    valid &= good
    n = np.where(good[:, :, None], n / np.where(good, norms, 1.0)[:, :, None], 0.0)
    # orient toward the camera
    flip = np.sum(n * rays.directions, axis=2) > 0
    n = np.where(flip[:, :, None], -n, n)
    return n, valid


def loss_depth_normal(maps: GeometryMaps, rays: CameraRayBundle) -> float:
    """Mean |N_hat - N_pseudo|_2 over pixels with a defined depth gradient."""
    pseudo, valid = _pseudo_normals(maps, rays)
    if not np.any(valid):
        return 0.0
    norms = np.linalg.norm(maps.normal, axis=2)
    ok = valid & (norms > 1e-12)
    if not np.any(ok):
        return 0.0
    rendered = maps.normal / np.maximum(norms, 1e-300)[:, :, None]
    diff = np.linalg.norm(rendered - pseudo, axis=2)
    return float(np.mean(diff[ok]))


def loss_depth_uncertainty(maps: GeometryMaps) -> float:
    """Mean depth variance proxy max(D_sq - D^2, 0) over covered pixels."""
    covered = maps.weight > 0
    if not np.any(covered):
        return 0.0
    var = np.maximum(maps.depth_sq - maps.depth ** 2, 0.0)
    return float(np.mean(var[covered]))


def loss_normal_smoothness(maps: GeometryMaps, reference_image: np.ndarray) -> float:
    """Edge-aware normal smoothness |grad N| * exp(-|grad C|)."""
    ref = np.asarray(reference_image, dtype=np.float64)
    if ref.shape != maps.depth.shape:
        raise SceneValidationError("reference image must match the map shape")
    covered = maps.weight > 0
    norms = np.linalg.norm(maps.normal, axis=2)
    n = maps.normal / np.maximum(norms, 1e-300)[:, :, None]

    def grad_mag(img):
        gx = np.zeros_like(img)
        gy = np.zeros_like(img)
        gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
        gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
        return gx, gy

    total = np.zeros(maps.depth.shape)
    for ch in range(3):
        gx, gy = grad_mag(n[:, :, ch])
        total += gx * gx + gy * gy
    grad_n = np.sqrt(total)
    gx, gy = grad_mag(ref)
    grad_c = np.sqrt(gx * gx + gy * gy)
    valid = np.zeros(maps.depth.shape, dtype=bool)
    valid[1:-1, 1:-1] = (covered[1:-1, 1:-1] & covered[:-2, 1:-1] & covered[2:, 1:-1]
                         & covered[1:-1, :-2] & covered[1:-1, 2:])
    if not np.any(valid):
        return 0.0
    return float(np.mean((grad_n * np.exp(-grad_c))[valid]))


@dataclass(frozen=True)
class GeometricLossWeights:
    photometric: float = 1.0
    ssim: float = 0.2
    depth_normal: float = 0.1
    depth_uncertainty: float = 0.05
    normal_smoothness: float = 0.05

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise SceneValidationError(f"loss weight {name} must be >= 0")


def loss_geometric_total(weights: GeometricLossWeights, photometric: float, ssim: float,
                         depth_normal: float, depth_uncertainty: float,
                         normal_smoothness: float) -> float:
    """Weighted sum; photometric terms arrive as externally supplied scalars."""
    return (weights.photometric * photometric
            + weights.ssim * ssim
            + weights.depth_normal * depth_normal
            + weights.depth_uncertainty * depth_uncertainty
            + weights.normal_smoothness * normal_smoothness)
