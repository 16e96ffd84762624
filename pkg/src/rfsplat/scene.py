"""Domain types shared by every stage: Gaussians, scenes, antennas, signals.

Units throughout the package: positions and distances in meters, frequencies
in Hz, transmit power in watts, antenna gain linear, signal amplitudes
dimensionless linear, power levels reported as dB = 10*log10(|S|^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

C_LIGHT = 299792458.0  # m/s

ALPHA_CAP = 0.99        # ray opacity cap; keeps transmittance > 0
MAHAL_CUTOFF = 3.0      # Gaussians are culled beyond 3 sigma of a ray
MIN_LINK_DISTANCE = 1e-6  # meters; closer Tx placement is degenerate


class SceneValidationError(ValueError):
    """A scene-level invariant was violated."""


class DegeneratePlacementError(ValueError):
    """An antenna sits on top of a Gaussian or another antenna."""


def _vec3(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (3,):
        raise SceneValidationError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneValidationError(f"{name} must be finite")
    out = arr.copy()
    out.flags.writeable = False
    return out


def _quat(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (4,):
        raise SceneValidationError(f"rotation must be a quaternion (w,x,y,z), got shape {arr.shape}")
    out = arr.copy()
    out.flags.writeable = False
    return out


def wrap_phase(x):
    """Wrap an angle (scalar or array) to the canonical range (-pi, pi]."""
    y = np.remainder(np.asarray(x, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(x) == 0 else y


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def covariance_from(scale, rotation) -> np.ndarray:
    """Build the 3x3 covariance R * diag(scale^2) * R^T.

    The factored storage guarantees symmetric positive-definiteness as long
    as every scale component is strictly positive.
    """
    s = np.asarray(scale, dtype=np.float64)
    q = np.asarray(rotation, dtype=np.float64)
    if s.shape != (3,) or np.any(s <= 0):
        raise SceneValidationError(f"scale must be three strictly positive values, got {s}")
    if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
        raise SceneValidationError("rotation must be a unit quaternion (w,x,y,z)")
    rot = quaternion_to_rotation(q)
    cov = rot @ np.diag(s * s) @ rot.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class RFGaussian:
    """One scene primitive: anisotropic Gaussian with RF attributes.

    Construction canonicalizes gamma_phase to (-pi, pi] but does not enforce
    range invariants; ``validate_scene`` reports violations instead, so
    intentionally broken scenes can be inspected.
    """

    mu: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    normal: np.ndarray
    alpha: float = 0.5
    roughness: float = 2.0
    gamma_mag: float = 0.5
    gamma_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _vec3(self.mu, "mu"))
        object.__setattr__(self, "scale", _vec3(self.scale, "scale"))
        object.__setattr__(self, "rotation", _quat(self.rotation))
        object.__setattr__(self, "normal", _vec3(self.normal, "normal"))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "roughness", float(self.roughness))
        object.__setattr__(self, "gamma_mag", float(self.gamma_mag))
        object.__setattr__(self, "gamma_phase", wrap_phase(float(self.gamma_phase)))

    def covariance(self) -> np.ndarray:
        return covariance_from(self.scale, self.rotation)

    def inv_covariance(self) -> np.ndarray:
        rot = quaternion_to_rotation(self.rotation)
        inv = rot @ np.diag(1.0 / (self.scale * self.scale)) @ rot.T
        return 0.5 * (inv + inv.T)

    def sqrt_det_covariance(self) -> float:
        return float(np.prod(self.scale))

    def with_attributes(self, alpha=None, roughness=None, gamma_mag=None, gamma_phase=None) -> "RFGaussian":
        return replace(
            self,
            alpha=self.alpha if alpha is None else alpha,
            roughness=self.roughness if roughness is None else roughness,
            gamma_mag=self.gamma_mag if gamma_mag is None else gamma_mag,
            gamma_phase=self.gamma_phase if gamma_phase is None else gamma_phase,
        )


@dataclass(frozen=True, eq=False)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec3(self.lo, "bounds.lo"))
        object.__setattr__(self, "hi", _vec3(self.hi, "bounds.hi"))
        if np.any(self.hi < self.lo):
            raise SceneValidationError("bounds.hi must dominate bounds.lo")

    def contains(self, p: np.ndarray, pad: float = 0.0) -> bool:
        return bool(np.all(p >= self.lo - pad) and np.all(p <= self.hi + pad))


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable collection of RF Gaussians.

    Geometry edits on a frozen scene raise; RF attribute updates always go
    through :meth:`with_attribute_arrays`, which returns a new Scene, so a
    Scene can be shared read-only across parallel render workers.
    """

    gaussians: tuple
    bounds: Aabb
    geometry_frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gaussians", tuple(self.gaussians))

    def __len__(self) -> int:
        return len(self.gaussians)

    def with_attribute_arrays(self, alpha=None, roughness=None, gamma_mag=None, gamma_phase=None) -> "Scene":
        """Copy-on-write attribute update keyed by Gaussian index."""
        n = len(self.gaussians)

        def pick(arr, i, current):
            return current if arr is None else float(np.asarray(arr)[i])

        new = [
            g.with_attributes(
                alpha=pick(alpha, i, g.alpha),
                roughness=pick(roughness, i, g.roughness),
                gamma_mag=pick(gamma_mag, i, g.gamma_mag),
                gamma_phase=pick(gamma_phase, i, g.gamma_phase),
            )
            for i, g in enumerate(self.gaussians)
        ]
        return Scene(tuple(new), self.bounds, self.geometry_frozen)

    def with_moved_gaussian(self, index: int, mu=None, scale=None, rotation=None, normal=None) -> "Scene":
        """Geometry edit; rejected once the geometry is frozen."""
        if self.geometry_frozen:
            raise SceneValidationError("scene geometry is frozen; geometric parameters cannot change")
        g = self.gaussians[index]
        new = replace(
            g,
            mu=g.mu if mu is None else mu,
            scale=g.scale if scale is None else scale,
            rotation=g.rotation if rotation is None else rotation,
            normal=g.normal if normal is None else normal,
        )
        gs = list(self.gaussians)
        gs[index] = new
        return Scene(tuple(gs), self.bounds, self.geometry_frozen)


@dataclass(frozen=True, eq=False)
class Antenna:
    """Tx or Rx antenna. ``pattern`` is "omni" or "horn".

    For a horn the per-direction receive gain is max(0, dir . boresight)^q
    with q = pattern_exponent; an omni pattern returns constant gain 1 for
    every direction. ``pattern_fn`` optionally overrides the per-direction
    complex gain programmatically (not serialized; the render graph accepts
    real-valued overrides only). Tx directionality beyond the scalar
    ``gain`` is not modeled by the incident-field stage.
    """

    role: str
    position: np.ndarray
    power_watts: float = 1.0
    gain: float = 1.0
    pattern: str = "omni"
    boresight: Optional[np.ndarray] = None
    pattern_exponent: float = 2.0
    pattern_fn: Optional[object] = None

    def __post_init__(self):
        if self.role not in ("tx", "rx"):
            raise SceneValidationError(f"antenna role must be 'tx' or 'rx', got {self.role!r}")
        if self.pattern not in ("omni", "horn"):
            raise SceneValidationError(f"antenna pattern must be 'omni' or 'horn', got {self.pattern!r}")
        object.__setattr__(self, "position", _vec3(self.position, "antenna position"))
        if self.power_watts <= 0:
            raise SceneValidationError("power_watts must be > 0")
        if self.gain <= 0:
            raise SceneValidationError("gain must be > 0")
        if self.pattern == "horn":
            if self.boresight is None:
                raise SceneValidationError("horn antenna requires a boresight direction")
            b = np.asarray(self.boresight, dtype=np.float64)
            norm = np.linalg.norm(b)
            if abs(norm - 1.0) > 1e-9:
                raise SceneValidationError("horn boresight must be a unit vector")
            object.__setattr__(self, "boresight", _vec3(b, "boresight"))

    def pattern_gain(self, direction: np.ndarray, frequency: float | None = None):
        """Per-direction gain C(dir, f); complex when pattern_fn returns one.

        ``direction`` points from the antenna out into the scene.
        """
        if self.pattern_fn is not None:
            return self.pattern_fn(np.asarray(direction, dtype=np.float64), frequency)
        if self.pattern == "omni":
            return 1.0
        c = float(np.dot(np.asarray(direction, dtype=np.float64), self.boresight))
        return max(0.0, c) ** self.pattern_exponent

    def moved_to(self, position) -> "Antenna":
        return replace(self, position=position)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Ascending frequency samples in Hz with derived wavelengths."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).ravel()
        if arr.size == 0:
            raise SceneValidationError("frequency grid must be nonempty")
        if np.any(arr <= 0):
            raise SceneValidationError("frequencies must be positive")
        if np.any(np.diff(arr) <= 0):
            raise SceneValidationError("frequencies must be strictly ascending")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def wavelengths(self) -> np.ndarray:
        return C_LIGHT / self.samples

    @staticmethod
    def single(frequency_hz: float) -> "FrequencyGrid":
        return FrequencyGrid(np.array([float(frequency_hz)]))


@dataclass(frozen=True, eq=False)
class ComplexSignal:
    """Complex amplitude per frequency sample of a grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128).ravel()
        if vals.size != len(self.grid):
            raise SceneValidationError("signal length must match the frequency grid")
        if not np.all(np.isfinite(vals)):
            raise SceneValidationError("signal values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def rssi_db(self, floor_db: float = -300.0) -> np.ndarray:
        power = np.abs(self.values) ** 2
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(power)
        return np.maximum(db, floor_db)


@dataclass(frozen=True, eq=False)
class ObservationRecord:
    """One measurement row driving inverse rendering."""

    tx: Antenna
    rx: Antenna
    freq_index: int
    rssi_db: Optional[float] = None
    complex_value: Optional[complex] = None
    split: str = "train"

    def __post_init__(self):
        if self.rssi_db is None and self.complex_value is None:
            raise SceneValidationError("observation needs rssi_db or a complex sample")
        if self.rssi_db is not None and not math.isfinite(self.rssi_db):
            raise SceneValidationError("rssi_db must be finite")
        if self.split not in ("train", "test"):
            raise SceneValidationError(f"split must be train/test, got {self.split!r}")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    records: tuple
    grid: FrequencyGrid
    scene_id: str = "scene"
    units: str = "db"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.units not in ("db", "linear"):
            raise SceneValidationError(f"units tag must be 'db' or 'linear', got {self.units!r}")
        n = len(self.grid)
        for i, rec in enumerate(self.records):
            if not 0 <= rec.freq_index < n:
                raise SceneValidationError(f"record {i}: frequency index {rec.freq_index} outside grid")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, split: str) -> "ObservationSet":
        recs = tuple(r for r in self.records if r.split == split)
        return ObservationSet(recs, self.grid, self.scene_id, self.units)


@dataclass(frozen=True)
class Violation:
    index: int          # Gaussian index, or -1 for scene-level problems
    field: str
    message: str


def validate_scene(scene: Scene) -> list[Violation]:
    """Check every invariant; returns an empty list iff the scene is valid."""
    report: list[Violation] = []
    for i, g in enumerate(scene.gaussians):
        if np.any(g.scale <= 0):
            report.append(Violation(i, "scale", f"scale must be strictly positive, got {g.scale}"))
        qn = float(np.linalg.norm(g.rotation))
        if abs(qn - 1.0) > 1e-9:
            report.append(Violation(i, "rotation", f"quaternion norm {qn} not within 1e-9 of 1"))
        nn = float(np.linalg.norm(g.normal))
        if abs(nn - 1.0) > 1e-9:
            report.append(Violation(i, "normal", f"normal norm {nn} not within 1e-9 of 1"))
        if not 0.0 <= g.alpha <= 1.0:
            report.append(Violation(i, "alpha", f"alpha {g.alpha} outside [0, 1]"))
        if g.roughness < 1.0:
            report.append(Violation(i, "roughness", f"roughness {g.roughness} violates R >= 1"))
        if not 0.0 <= g.gamma_mag <= 1.0:
            report.append(Violation(i, "gamma_mag", f"gamma_mag {g.gamma_mag} outside [0, 1]"))
        if np.all(g.scale > 0) and abs(qn - 1.0) <= 1e-9:
            cov = g.covariance()
            eig = np.linalg.eigvalsh(cov)
            if np.any(eig <= 0):
                report.append(Violation(i, "covariance", "covariance not positive definite"))
            pad = 3.0 * float(np.max(g.scale))
            if not scene.bounds.contains(g.mu, pad=pad):
                report.append(Violation(i, "mu", "center outside bounds (padded by 3x max scale)"))
    return report


@dataclass(frozen=True, eq=False)
class SceneArrays:
    """Flat float64 views of a scene, the layout the kernels operate on.

    ``icov6`` packs each symmetric inverse covariance as
    (q00, q01, q02, q11, q12, q22).
    """

    mu: np.ndarray        # (N, 3)
    icov6: np.ndarray     # (N, 6)
    alpha: np.ndarray     # (N,)
    normal: np.ndarray    # (N, 3)
    sqrt_det: np.ndarray  # (N,)
    roughness: np.ndarray
    gamma_mag: np.ndarray
    gamma_phase: np.ndarray
    aabb_lo: np.ndarray   # (N, 3) 3-sigma boxes
    aabb_hi: np.ndarray


def scene_arrays(scene: Scene) -> SceneArrays:
    n = len(scene.gaussians)
    mu = np.zeros((n, 3))
    icov6 = np.zeros((n, 6))
    alpha = np.zeros(n)
    normal = np.zeros((n, 3))
    sqrt_det = np.zeros(n)
    rough = np.zeros(n)
    gmag = np.zeros(n)
    gphase = np.zeros(n)
    lo = np.zeros((n, 3))
    hi = np.zeros((n, 3))
    for i, g in enumerate(scene.gaussians):
        mu[i] = g.mu
        inv = g.inv_covariance()
        icov6[i] = (inv[0, 0], inv[0, 1], inv[0, 2], inv[1, 1], inv[1, 2], inv[2, 2])
        alpha[i] = g.alpha
        normal[i] = g.normal
        sqrt_det[i] = g.sqrt_det_covariance()
        rough[i] = g.roughness
        gmag[i] = g.gamma_mag
        gphase[i] = g.gamma_phase
        cov = g.covariance()
        half = MAHAL_CUTOFF * np.sqrt(np.diag(cov))
        lo[i] = g.mu - half
        hi[i] = g.mu + half
    return SceneArrays(mu, icov6, alpha, normal, sqrt_det, rough, gmag, gphase, lo, hi)
