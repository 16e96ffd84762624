"""Independent brute-force reference implementations and synthetic data.

The renderer here shares no visibility or blending code with the main path
(only the domain types and covariance accessors), so corruption of either
side fails the equivalence suite. Ground-truth observations for the fitting
tasks come from the main forward model; this module's renderer exists to
check it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .scene import (ALPHA_CAP, C_LIGHT, MAHAL_CUTOFF, Aabb, Antenna,
                    FrequencyGrid, ObservationRecord, ObservationSet,
                    RFGaussian, Scene, SceneValidationError)
from .render import (LinkConfig, LosNlosParams, RenderOptions,
                     build_render_graph, make_records,
                     scene_attribute_groups, _rotate_z)

BRUTE_FORCE_CAP = 2000


def _gauss_tables(scene: Scene):
    mu = np.array([g.mu for g in scene.gaussians])
    icov = np.array([g.inv_covariance() for g in scene.gaussians])
    return mu, icov


def _segment_transmittance(mu, icov, alphas, p, q, exclude: int) -> float:
    """prod(1 - a_m) over Gaussians near the open segment p->q.

    Same endpoint padding rule as the tracer: t in (eps, span - eps) with
    eps = 1e-6 * span; written independently of it.
    """
    seg = q - p
    span = float(np.linalg.norm(seg))
    u = seg / span
    eps = 1e-6 * span
    v = 1.0
    for m in range(mu.shape[0]):
        if m == exclude:
            continue
        e = p - mu[m]
        qu = icov[m] @ u
        a_quad = float(u @ qu)
        b = float(e @ qu)
        t = -b / a_quad
        if not (eps < t < span - eps):
            continue
        closest = e + t * u
        m2 = float(closest @ (icov[m] @ closest))
        if m2 > MAHAL_CUTOFF ** 2:
            continue
        v *= 1.0 - min(alphas[m] * math.exp(-0.5 * m2), ALPHA_CAP)
    return v


def brute_force_render(scene: Scene, tx: Antenna, rx: Antenna, frequency: float,
                       los: Optional[LosNlosParams] = None, path_loss: bool = True,
                       los_force_visible: bool = False,
                       s_tx: complex = 1.0 + 0.0j) -> complex:
    """Exact per-Gaussian loop: no BVH, no FoV binning, all-pairs visibility."""
    if len(scene) > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force refuses scenes over {BRUTE_FORCE_CAP} Gaussians")
    lam = C_LIGHT / frequency
    mu, icov = _gauss_tables(scene) if len(scene) else (np.zeros((0, 3)), np.zeros((0, 3, 3)))
    alphas = np.array([g.alpha for g in scene.gaussians])
    total = 0.0 + 0.0j
    for l, g in enumerate(scene.gaussians):
        d_t = float(np.linalg.norm(g.mu - tx.position))
        u_t = (g.mu - tx.position) / d_t
        cos_in = max(0.0, -float(u_t @ g.normal))
        if cos_in <= 0.0:
            continue
        d_r = float(np.linalg.norm(g.mu - rx.position))
        omega_o = (rx.position - g.mu) / d_r
        cos_o = float(omega_o @ g.normal)
        if cos_o <= 0.0:
            continue
        spec = u_t - 2.0 * float(u_t @ g.normal) * g.normal
        h = 0.5 * (1.0 + min(1.0, max(-1.0, float(omega_o @ spec))))
        if h <= 0.0:
            continue
        gain = rx.pattern_gain((g.mu - rx.position) / d_r, frequency)
        if gain <= 0.0:
            continue
        area = math.pi * g.sqrt_det_covariance() * math.sqrt(float(u_t @ g.inv_covariance() @ u_t))
        vis = _segment_transmittance(mu, icov, alphas, tx.position, g.mu, l)
        f_pattern = math.sqrt(cos_o) * h ** g.roughness
        trans = _segment_transmittance(mu, icov, alphas, rx.position, g.mu, l)
        a = min(g.alpha, ALPHA_CAP)
        magnitude = (math.sqrt(tx.power_watts * tx.gain * area / (4.0 * math.pi * d_t * d_t))
                     * vis * g.gamma_mag * f_pattern * cos_in * a * trans * gain)
        travelled = d_t
        if path_loss:
            magnitude *= math.sqrt(1.0 / (4.0 * math.pi * d_r * d_r))
            travelled += d_r
        phase = g.gamma_phase - 2.0 * math.pi * travelled / lam
        total += magnitude * np.exp(1j * phase) * s_tx
    if los is not None:
        d = float(np.linalg.norm(rx.position - tx.position))
        v_geo = 1.0
        if len(scene) and not los_force_visible:
            v_geo = _segment_transmittance(mu, icov, alphas, tx.position, rx.position, -1)
        total += (los.v_vis * los.s_tx_strength * los.c_dis
                  * math.sqrt(tx.power_watts * tx.gain)
                  * math.sqrt(1.0 / (4.0 * math.pi * d * d)) * v_geo
                  * np.exp(1j * 2.0 * np.pi * d / lam) * s_tx)
    return complex(total)


# ---------------------------------------------------------------------------
# Cross-section oracles


def _plane_basis(n: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(helper, n)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(n, b1)
    return np.stack([b1, b2], axis=1)  # (3, 2)


def analytic_cross_section(g: RFGaussian, n_dir) -> float:
    """Projected-ellipse area via the Schur complement of Sigma^-1.

    Independent derivation: the shadow of the 1-sigma ellipsoid along n is
    the ellipse u^T M u <= 1 with M the n-direction Schur complement of the
    inverse covariance; area = pi / sqrt(det M).
    """
    n = np.asarray(n_dir, dtype=np.float64)
    n = n / np.linalg.norm(n)
    q = g.inv_covariance()
    b = _plane_basis(n)
    qn = q @ n
    m = b.T @ q @ b - np.outer(b.T @ qn, qn @ b) / float(n @ qn)
    det = float(np.linalg.det(m))
    return float(np.pi / math.sqrt(det))


def monte_carlo_cross_section(g: RFGaussian, n_dir, samples: int = 1_000_000,
                              seed: int = 0) -> tuple[float, float]:
    """Silhouette-area estimate with standard error via plane sampling."""
    if samples < 1e5:
        raise ValueError("use at least 1e5 samples")
    n = np.asarray(n_dir, dtype=np.float64)
    n = n / np.linalg.norm(n)
    q = g.inv_covariance()
    b = _plane_basis(n)
    half = float(np.max(g.scale)) * 1.0001
    rng = np.random.default_rng(seed)
    box_area = (2.0 * half) ** 2
    a_quad = float(n @ q @ n)
    hits = 0
    chunk = 200_000
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        uv = rng.uniform(-half, half, size=(k, 2))
        pts = uv @ b.T                     # (k, 3) in the plane through origin
        qb = pts @ q
        c = np.einsum("ij,ij->i", qb, pts)
        bq = pts @ (q @ n)
        min_quad = c - bq * bq / a_quad
        hits += int(np.count_nonzero(min_quad <= 1.0))
        done += k
    p = hits / samples
    area = p * box_area
    stderr = box_area * math.sqrt(max(p * (1.0 - p), 0.0) / samples)
    return area, stderr


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class SyntheticSceneSpec:
    template: str                      # plate | two_material_plate | random_cloud | classroom
    seed: int = 0
    nx: int = 10
    ny: int = 10
    spacing: float = 0.04
    thickness: float = 0.004
    count: int = 100
    attributes: dict = field(default_factory=dict)
    sigma_factor: float = 0.75         # plate in-plane sigma / spacing
    center: tuple = (0.0, 0.0, 0.0)    # plates only
    normal: tuple = (0.0, 0.0, 1.0)
    tangent: tuple = (1.0, 0.0, 0.0)


_PLATE_DEFAULTS = dict(alpha=0.8, roughness=2.0, gamma_mag=0.8, gamma_phase=0.0)
_TWO_MATERIAL = (
    dict(alpha=0.55, roughness=2.0, gamma_mag=0.35, gamma_phase=-0.8),
    dict(alpha=0.80, roughness=5.0, gamma_mag=0.80, gamma_phase=0.9),
)


def _plate_gaussians(nx, ny, spacing, thickness, attr_fn, center=(0.0, 0.0, 0.0),
                     normal=(0.0, 0.0, 1.0), tangent=(1.0, 0.0, 0.0),
                     sigma_factor=0.75):
    n = np.asarray(normal, dtype=np.float64)
    t1 = np.asarray(tangent, dtype=np.float64)
    t2 = np.cross(n, t1)
    center = np.asarray(center, dtype=np.float64)
    rot = _rotation_quat_from_frame(t1, t2, n)
    sigma = sigma_factor * spacing
    out = []
    for iy in range(ny):
        for ix in range(nx):
            u = (ix - (nx - 1) / 2.0) * spacing
            v = (iy - (ny - 1) / 2.0) * spacing
            mu = center + u * t1 + v * t2
            attrs = attr_fn(u, v)
            out.append(RFGaussian(mu=mu, scale=[sigma, sigma, thickness],
                                  rotation=rot, normal=n, **attrs))
    return out


def _rotation_quat_from_frame(e1, e2, e3):
    """Quaternion (w,x,y,z) whose rotation maps x->e1, y->e2, z->e3."""
    m = np.stack([e1, e2, e3], axis=1)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def _random_unit(rng, size=None):
    v = rng.standard_normal(3 if size is None else (size, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True) if size else v / np.linalg.norm(v)


def generate_scene(spec: SyntheticSceneSpec) -> Scene:
    """Deterministic synthetic scene for a template and seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.template == "plate":
        attrs = dict(_PLATE_DEFAULTS)
        attrs.update(spec.attributes)
        gs = _plate_gaussians(spec.nx, spec.ny, spec.spacing, spec.thickness,
                              lambda u, v: attrs, center=spec.center,
                              normal=spec.normal, tangent=spec.tangent,
                              sigma_factor=spec.sigma_factor)
        half = max(spec.nx, spec.ny) * spec.spacing
        c = np.asarray(spec.center, dtype=np.float64)
        bounds = Aabb(c - half - 0.5, c + half + 0.5)
    elif spec.template == "two_material_plate":
        left = dict(_TWO_MATERIAL[0])
        right = dict(_TWO_MATERIAL[1])
        left.update(spec.attributes.get("left", {}))
        right.update(spec.attributes.get("right", {}))
        gs = _plate_gaussians(spec.nx, spec.ny, spec.spacing, spec.thickness,
                              lambda u, v: left if u < 0 else right,
                              center=spec.center, normal=spec.normal,
                              tangent=spec.tangent,
                              sigma_factor=spec.sigma_factor)
        half = max(spec.nx, spec.ny) * spec.spacing
        c = np.asarray(spec.center, dtype=np.float64)
        bounds = Aabb(c - half - 0.5, c + half + 0.5)
    elif spec.template == "random_cloud":
        gs = []
        for _ in range(spec.count):
            scale = np.exp(rng.uniform(math.log(0.03), math.log(0.12), size=3))
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            gs.append(RFGaussian(
                mu=rng.uniform(-1.0, 1.0, size=3),
                scale=scale,
                rotation=q,
                normal=_random_unit(rng),
                alpha=rng.uniform(0.15, 0.9),
                roughness=1.0 + float(np.exp(rng.uniform(math.log(0.5), math.log(5.0)))),
                gamma_mag=rng.uniform(0.2, 0.95),
                gamma_phase=rng.uniform(-math.pi, math.pi),
            ))
        bounds = Aabb([-1.6, -1.6, -1.6], [1.6, 1.6, 1.6])
    elif spec.template == "classroom":
        gs = _classroom_gaussians()
        bounds = Aabb([0.0, 0.0, 0.0], [6.0, 4.0, 3.0])
    else:
        raise SceneValidationError(f"unknown scene template {spec.template!r}")
    return Scene(tuple(gs), bounds, geometry_frozen=True)


def _classroom_gaussians():
    gs = []
    floor = dict(alpha=0.7, roughness=2.5, gamma_mag=0.5, gamma_phase=0.3)
    wall = dict(alpha=0.75, roughness=3.0, gamma_mag=0.6, gamma_phase=-0.4)
    desk = dict(alpha=0.85, roughness=6.0, gamma_mag=0.85, gamma_phase=1.2)
    divider = dict(alpha=0.9, roughness=4.0, gamma_mag=0.7, gamma_phase=0.8)
    gs += _plate_gaussians(10, 7, 0.55, 0.02, lambda u, v: floor,
                           center=(3.0, 2.0, 0.05), normal=(0, 0, 1), tangent=(1, 0, 0))
    gs += _plate_gaussians(8, 5, 0.5, 0.02, lambda u, v: wall,
                           center=(0.05, 2.0, 1.4), normal=(1, 0, 0), tangent=(0, 1, 0))
    gs += _plate_gaussians(11, 5, 0.5, 0.02, lambda u, v: wall,
                           center=(3.0, 0.05, 1.4), normal=(0, 1, 0), tangent=(1, 0, 0))
    for cx, cy in ((1.5, 1.2), (1.5, 2.8), (4.0, 1.2), (4.0, 2.8)):
        gs += _plate_gaussians(2, 2, 0.3, 0.02, lambda u, v: desk,
                               center=(cx, cy, 0.75), normal=(0, 0, 1), tangent=(1, 0, 0))
    # free-standing partition; shadows the far half of the room
    gs += _plate_gaussians(6, 6, 0.33, 0.02, lambda u, v: divider,
                           center=(3.5, 2.0, 1.2), normal=(1, 0, 0), tangent=(0, 1, 0))
    return gs


def classroom_tx_positions(n: int = 24) -> np.ndarray:
    """Candidate omni Tx sites on a ceiling grid (6 x 4 by default)."""
    xs = np.linspace(0.8, 5.2, 6)
    ys = np.linspace(0.8, 3.2, 4)
    pts = np.array([[x, y, 2.6] for y in ys for x in xs])
    return pts[:n]


# ---------------------------------------------------------------------------
# Observation protocols (ground truth from the main forward model)


def _monostatic_links(radar_range, angles_deg, power, gain, center=(0.0, 0.0, 0.0),
                      elevation_deg: float = 0.0, los=None):
    center = np.asarray(center, dtype=np.float64)
    base = center + np.array([
        radar_range * math.cos(math.radians(elevation_deg)), 0.0,
        radar_range * math.sin(math.radians(elevation_deg))])
    links = []
    for ang in angles_deg:
        pos = _rotate_z(base, math.radians(float(ang)), center)
        links.append(LinkConfig(Antenna("tx", pos, power, gain),
                                Antenna("rx", pos), los))
    return links


def _render_links_db(scene: Scene, links, frequency: float, options: RenderOptions):
    from .render import graph_signal
    from .scene import scene_arrays
    from .tracing import build_bvh

    bvh = build_bvh(scene)
    graph = build_render_graph(scene, bvh, links, options)
    n = len(links)
    records = make_records(np.arange(n, dtype=np.int32), np.full(n, frequency))
    attrs = scene_attribute_groups(scene_arrays(scene))
    values = graph_signal(graph, records, attrs)
    power = np.abs(values) ** 2
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, -300.0)


def generate_observations(scene: Scene, protocol: str, params: dict, seed: int = 0,
                          noise_db: float = 0.0,
                          options: RenderOptions = RenderOptions()) -> ObservationSet:
    """Forward-rendered RSSI observations with optional Gaussian dB noise.

    Protocols: monostatic_sweep, radio_map_grid, distance_set (train
    distances {2, 2.5, 4, 4.5, 5} m, test {3} m by default).
    """
    rng = np.random.default_rng(seed)
    frequency = float(params.get("frequency", 2.4e9))
    grid = FrequencyGrid.single(frequency)
    power = float(params.get("power", 1.0))
    gain = float(params.get("gain", 1.0))
    los = params.get("los")
    records = []

    if protocol == "monostatic_sweep":
        angles = np.asarray(params.get("angles_deg", np.arange(0.0, 360.0, 3.0)))
        links = _monostatic_links(params.get("range_m", 3.0), angles, power, gain,
                                  elevation_deg=params.get("elevation_deg", 0.0), los=los)
        db = _render_links_db(scene, links, frequency, options)
        for link, value in zip(links, db):
            records.append(ObservationRecord(link.tx, link.rx, 0, float(value), split="train"))
    elif protocol == "distance_set":
        train_d = list(params.get("train_distances", (2.0, 2.5, 4.0, 4.5, 5.0)))
        test_d = list(params.get("test_distances", (3.0,)))
        angles = np.asarray(params.get("angles_deg", np.arange(-45.0, 46.0, 15.0)))
        elevation = params.get("elevation_deg", 0.0)
        links, tags = [], []
        for dist, tag in [(d, "train") for d in train_d] + [(d, "test") for d in test_d]:
            ls = _monostatic_links(dist, angles, power, gain, elevation_deg=elevation, los=los)
            links += ls
            tags += [tag] * len(ls)
        db = _render_links_db(scene, links, frequency, options)
        for link, value, tag in zip(links, db, tags):
            records.append(ObservationRecord(link.tx, link.rx, 0, float(value), split=tag))
    elif protocol == "radio_map_grid":
        tx_positions = params.get("tx_positions")
        if tx_positions is None:
            tx_positions = classroom_tx_positions(int(params.get("n_tx", 24)))
        h, w = params.get("grid_shape", (22, 20))
        height = float(params.get("height", 1.2))
        from .render import radio_map_cells

        xs, ys = radio_map_cells(scene, h, w, height)
        cells = np.array([[x, y, height] for y in ys for x in xs])
        train_frac = float(params.get("train_fraction", 0.8))
        links = []
        for tp in np.asarray(tx_positions, dtype=np.float64):
            tx = Antenna("tx", tp, power, gain)
            for cell in cells:
                links.append(LinkConfig(tx, Antenna("rx", cell), los))
        db = _render_links_db(scene, links, frequency, options)
        n_total = len(links)
        order = rng.permutation(n_total)
        n_train = int(round(train_frac * n_total))
        split = np.empty(n_total, dtype=object)
        split[order[:n_train]] = "train"
        split[order[n_train:]] = "test"
        for link, value, tag in zip(links, db, split):
            records.append(ObservationRecord(link.tx, link.rx, 0, float(value), split=str(tag)))
    else:
        raise SceneValidationError(f"unknown observation protocol {protocol!r}")

    if noise_db > 0.0:
        noisy = []
        for rec in records:
            noisy.append(ObservationRecord(rec.tx, rec.rx, rec.freq_index,
                                           rec.rssi_db + float(rng.normal(0.0, noise_db)),
                                           split=rec.split))
        records = noisy
    return ObservationSet(tuple(records), grid, scene_id=params.get("scene_id", "scene"))
