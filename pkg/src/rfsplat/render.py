"""End-to-end forward model.

Propagation per Gaussian l (Tx -> Gaussian -> Rx, one scattering event):

  s_in   = sqrt(P_T G_T A_l / (4 pi d_t^2)) * V_l * S_tx(f) * e^{-j 2 pi d_t / lam}
  s_out  = |Gamma| e^{j phase} * F(omega_o, omega_i, n; R) * s_in * cos_in
  S     += C_rx(omega) * s_out * a_l * T_l * sqrt(1/(4 pi d_r^2)) * e^{-j 2 pi d_r / lam}

with V_l / T_l the Tx/Rx-side segment transmittances, a_l the capped own
opacity, and omega the receiver FoV cell holding the Rx->Gaussian direction
(nearest-cell splatting; cell quantization only affects the directions fed
to F and C_rx). The optional LoS term v_vis * S_tx * c_dis * e^{+j phi} is
added on top. Everything is flattened into a render graph evaluated by the
kernel backends so the same machinery serves rendering and gradient fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .scene import (ALPHA_CAP, C_LIGHT, MAHAL_CUTOFF, MIN_LINK_DISTANCE,
                    Antenna, ComplexSignal, DegeneratePlacementError,
                    FrequencyGrid, Scene, SceneArrays, SceneValidationError,
                    scene_arrays)
from .tracing import SEGMENT_EPS_FACTOR, Bvh, build_bvh, ray_chain

RSSI_FLOOR_DB = -300.0


@dataclass(frozen=True)
class LosNlosParams:
    """Line-of-sight mixing coefficients.

    ``c_dis`` scales the free-space spreading the drivers fold in; ``v_vis``
    multiplies the geometric Tx->Rx transmittance.
    """

    v_vis: float = 1.0
    s_tx_strength: float = 1.0
    c_dis: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.v_vis <= 1.0:
            raise SceneValidationError("v_vis must lie in [0, 1]")
        if self.s_tx_strength < 0 or self.c_dis < 0:
            raise SceneValidationError("LoS coefficients must be >= 0")


@dataclass(frozen=True)
class RenderOptions:
    """Switches for test modes and ablations."""

    exact_direction: bool = False        # bypass FoV quantization
    path_loss: bool = True               # Rx-side spreading + phase (ablation)
    attenuation_per_occluder: bool = False  # literal per-occluder reading
    fov_step_deg: float = 1.0
    los_force_visible: bool = False      # ablation: v_vis -> 1
    use_bvh: bool = True


def mix_los_nlos(params: LosNlosParams, d_los: float, lam: float, s_nlos: complex) -> complex:
    """Coherent LoS + NLoS sum with phi = 2 pi d_los / lambda."""
    if d_los <= 0:
        raise DegeneratePlacementError("LoS distance must be positive")
    los = params.v_vis * params.s_tx_strength * params.c_dis * np.exp(1j * 2.0 * np.pi * d_los / lam)
    return complex(los + s_nlos)


# ---------------------------------------------------------------------------
# Receiver field-of-view discretization


@dataclass(frozen=True, eq=False)
class FovGrid:
    """Spherical receive-direction grid around a polar axis.

    Omni antennas span 180 deg elevation, directional horns 90 deg, both
    over 360 deg azimuth; cells are step_deg x step_deg with solid angle
    sin(theta) dtheta dphi.
    """

    frame: np.ndarray        # rows e1, e2, e3 (polar axis)
    theta_span_deg: float
    step_deg: float

    @property
    def n_theta(self) -> int:
        return int(round(self.theta_span_deg / self.step_deg))

    @property
    def n_phi(self) -> int:
        return int(round(360.0 / self.step_deg))

    def __len__(self) -> int:
        return self.n_theta * self.n_phi

    def solid_angles(self) -> np.ndarray:
        step = math.radians(self.step_deg)
        theta_c = (np.arange(self.n_theta) + 0.5) * step
        per_theta = np.sin(theta_c) * step * step
        return np.repeat(per_theta, self.n_phi)

    def directions(self) -> np.ndarray:
        step = math.radians(self.step_deg)
        theta_c = (np.arange(self.n_theta) + 0.5) * step
        phi_c = (np.arange(self.n_phi) + 0.5) * step
        st, ct = np.sin(theta_c), np.cos(theta_c)
        cp, sp = np.cos(phi_c), np.sin(phi_c)
        e1, e2, e3 = self.frame
        dirs = (st[:, None, None] * (cp[None, :, None] * e1 + sp[None, :, None] * e2)
                + ct[:, None, None] * e3)
        return dirs.reshape(-1, 3)

    def bin_many(self, v: np.ndarray):
        """Flat cell index per direction (-1 outside span) and cell centers."""
        e1, e2, e3 = self.frame
        ct = np.clip(v @ e3, -1.0, 1.0)
        theta = np.degrees(np.arccos(ct))
        phi = np.degrees(np.arctan2(v @ e2, v @ e1)) % 360.0
        inside = theta <= self.theta_span_deg
        ti = np.minimum((theta / self.step_deg).astype(np.int64), self.n_theta - 1)
        pi_ = np.minimum((phi / self.step_deg).astype(np.int64), self.n_phi - 1)
        idx = np.where(inside, ti * self.n_phi + pi_, -1)
        step = math.radians(self.step_deg)
        theta_c = (ti + 0.5) * step
        phi_c = (pi_ + 0.5) * step
        st, c2 = np.sin(theta_c), np.cos(theta_c)
        centers = (st[:, None] * (np.cos(phi_c)[:, None] * e1 + np.sin(phi_c)[:, None] * e2)
                   + c2[:, None] * e3)
        return idx, centers


def _orthonormal_frame(axis: np.ndarray) -> np.ndarray:
    e3 = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, e3)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3])


def make_fov_grid(pattern, step_deg: float = 1.0, boresight=None) -> FovGrid:
    """FoV preset for an antenna or a pattern name ('omni'/'horn')."""
    if isinstance(pattern, Antenna):
        boresight = pattern.boresight if pattern.pattern == "horn" else None
        pattern = pattern.pattern
    if pattern == "omni":
        return FovGrid(_orthonormal_frame(np.array([0.0, 0.0, 1.0])), 180.0, step_deg)
    if pattern == "horn":
        if boresight is None:
            raise SceneValidationError("directional grid needs a boresight")
        return FovGrid(_orthonormal_frame(np.asarray(boresight, dtype=np.float64)), 90.0, step_deg)
    raise SceneValidationError(f"unknown antenna pattern {pattern!r}")


@dataclass(frozen=True, eq=False)
class DirectionalRender:
    """Per-FoV-direction complex signal and contributing Gaussian count."""

    grid: FovGrid
    values: np.ndarray   # (len(grid),) complex
    counts: np.ndarray   # (len(grid),) int


def integrate_receiver(render: DirectionalRender, rx: Antenna, frequency: float) -> complex:
    """Coherent receiver-pattern-weighted sum over the FoV directions."""
    nz = np.nonzero(render.values)[0]
    if nz.size == 0:
        return 0.0 + 0.0j
    dirs = render.grid.directions()[nz]
    gains = np.array([rx.pattern_gain(d, frequency) for d in dirs])
    return complex(np.sum(gains * render.values[nz]))


# ---------------------------------------------------------------------------
# Render graph: flattened geometry-frozen forward model


@dataclass(frozen=True, eq=False)
class LinkConfig:
    tx: Antenna
    rx: Antenna
    los: Optional[LosNlosParams] = None


@dataclass(frozen=True, eq=False)
class RenderGraph:
    """Flat per-link geometry constants consumed by the kernel backends."""

    kernel_arrays: tuple
    n_configs: int
    n_gauss: int
    options: RenderOptions


def _empty_graph_piece():
    return dict(gauss=np.zeros(0, np.int32), amp=np.zeros(0), dsum=np.zeros(0),
                fz=np.zeros(0), h=np.zeros(0), ownden=np.zeros(0),
                occt=(np.zeros(1, np.int64), np.zeros(0, np.int32), np.zeros(0)),
                occr=(np.zeros(1, np.int64), np.zeros(0, np.int32), np.zeros(0)))


def _segment_queries(arrays, bvh, origin, targets, exclude, use_bvh):
    """Occluder CSR for segments origin -> each target (endpoint-padded)."""
    nt = targets.shape[0]
    if nt == 0:
        return np.zeros(1, np.int64), np.zeros(0, np.int32), np.zeros(0)
    delta = targets - origin[None, :]
    span = np.linalg.norm(delta, axis=1)
    dirs = delta / span[:, None]
    eps = SEGMENT_EPS_FACTOR * span
    fn = kernels.segment_hits if use_bvh else kernels.segment_hits_brute
    offsets, idx, tst, den, _ = fn(
        arrays.mu, arrays.icov6, arrays.alpha, bvh.arrays(),
        np.broadcast_to(origin, (nt, 3)).copy(), dirs, eps, span - eps,
        exclude.astype(np.int32), ALPHA_CAP, MAHAL_CUTOFF ** 2)
    return offsets, idx, den if den.size else np.zeros(0), tst


def _build_link(arrays: SceneArrays, bvh: Bvh, link: LinkConfig, options: RenderOptions):
    tx, rx = link.tx, link.rx
    n = arrays.mu.shape[0]
    piece = _empty_graph_piece()
    los_amp, los_d = 0.0, 1.0
    losocc = (np.zeros(0, np.int32), np.zeros(0))

    if n:
        delta_t = arrays.mu - tx.position[None, :]
        d_t = np.linalg.norm(delta_t, axis=1)
        delta_r = arrays.mu - rx.position[None, :]
        d_r = np.linalg.norm(delta_r, axis=1)
        if np.any(d_t < MIN_LINK_DISTANCE) or np.any(d_r < MIN_LINK_DISTANCE):
            raise DegeneratePlacementError("antenna placed on a Gaussian center")
        u_t = delta_t / d_t[:, None]
        v = delta_r / d_r[:, None]

        if options.exact_direction:
            rx_dir = v
        else:
            grid = make_fov_grid(rx, options.fov_step_deg)
            cell, centers = grid.bin_many(v)
            rx_dir = centers
            in_fov = cell >= 0
        omega_o = -rx_dir
        cos_in = np.maximum(0.0, -np.sum(u_t * arrays.normal, axis=1))
        cos_o = np.maximum(0.0, np.sum(omega_o * arrays.normal, axis=1))
        spec = u_t - 2.0 * np.sum(u_t * arrays.normal, axis=1)[:, None] * arrays.normal
        cos_psi = np.clip(np.sum(omega_o * spec, axis=1), -1.0, 1.0)
        h = 0.5 * (1.0 + cos_psi)
        quad = (arrays.icov6[:, 0] * u_t[:, 0] ** 2 + arrays.icov6[:, 3] * u_t[:, 1] ** 2
                + arrays.icov6[:, 5] * u_t[:, 2] ** 2
                + 2.0 * (arrays.icov6[:, 1] * u_t[:, 0] * u_t[:, 1]
                         + arrays.icov6[:, 2] * u_t[:, 0] * u_t[:, 2]
                         + arrays.icov6[:, 4] * u_t[:, 1] * u_t[:, 2]))
        area = np.pi * arrays.sqrt_det * np.sqrt(quad)
        if rx.pattern_fn is not None:
            gain = np.array([float(np.real(rx.pattern_gain(d))) for d in rx_dir])
        elif rx.pattern == "omni":
            gain = np.ones(n)
        else:
            gain = np.maximum(0.0, rx_dir @ rx.boresight) ** rx.pattern_exponent
        ptg = tx.power_watts * tx.gain
        amp = gain * cos_in * np.sqrt(ptg * area / (4.0 * np.pi * d_t * d_t))
        if options.path_loss and not options.attenuation_per_occluder:
            amp = amp * np.sqrt(1.0 / (4.0 * np.pi * d_r * d_r))
            dsum = d_t + d_r
        else:
            dsum = d_t.copy()

        keep = (amp > 0.0) & (cos_o > 0.0) & (h > 0.0)
        if not options.exact_direction:
            keep &= in_fov
        sel = np.nonzero(keep)[0].astype(np.int32)
        if sel.size:
            occt = _segment_queries(arrays, bvh, tx.position, arrays.mu[sel], sel, options.use_bvh)
            occr = _segment_queries(arrays, bvh, rx.position, arrays.mu[sel], sel, options.use_bvh)
            amp_s = amp[sel]
            dsum_s = dsum[sel]
            if options.path_loss and options.attenuation_per_occluder:
                # literal reading: spreading and phase applied once per occluder
                off, _, _, tstar = occr
                for i in range(sel.size):
                    k0, k1 = int(off[i]), int(off[i + 1])
                    for k in range(k0, k1):
                        amp_s[i] *= math.sqrt(1.0 / (4.0 * math.pi * tstar[k] ** 2))
                        dsum_s[i] += tstar[k]
            piece = dict(gauss=sel, amp=amp_s, dsum=dsum_s,
                         fz=np.sqrt(cos_o[sel]), h=h[sel],
                         ownden=np.ones(sel.size),
                         occt=occt[:3], occr=occr[:3])

    if link.los is not None:
        d_los = float(np.linalg.norm(rx.position - tx.position))
        if d_los < MIN_LINK_DISTANCE:
            raise DegeneratePlacementError("Tx and Rx coincide; LoS undefined")
        los_amp = (link.los.v_vis * link.los.s_tx_strength * link.los.c_dis
                   * math.sqrt(tx.power_watts * tx.gain)
                   * math.sqrt(1.0 / (4.0 * math.pi * d_los * d_los)))
        los_d = d_los
        if n and not options.los_force_visible:
            off, idx, den, _ = _segment_queries(
                arrays, bvh, tx.position, rx.position[None, :],
                np.full(1, -1, np.int32), options.use_bvh)
            losocc = (idx[:int(off[1])], den[:int(off[1])])
    return piece, los_amp, los_d, losocc


def build_render_graph(scene: Scene | SceneArrays, bvh: Bvh,
                       links: Sequence[LinkConfig],
                       options: RenderOptions = RenderOptions()) -> RenderGraph:
    """Precompute every geometry-dependent constant for a set of links.

    Valid while the scene geometry is unchanged; attribute values are
    supplied at evaluation time.
    """
    arrays = scene_arrays(scene) if isinstance(scene, Scene) else scene
    n = arrays.mu.shape[0]
    pieces = []
    for link in links:
        pieces.append(_build_link(arrays, bvh, link, options))

    cfg_node_ptr = np.zeros(len(links) + 1, np.int64)
    cfg_los_amp = np.zeros(len(links))
    cfg_los_d = np.ones(len(links))
    cfg_losocc_ptr = np.zeros(len(links) + 1, np.int64)
    gauss, amp, dsum, fz, h, ownden = [], [], [], [], [], []
    occt_ptr_parts, occt_idx, occt_den = [], [], []
    occr_ptr_parts, occr_idx, occr_den = [], [], []
    losocc_idx, losocc_den = [], []
    nt = nr = 0
    for c, (piece, la, ld, locc) in enumerate(pieces):
        m = piece["gauss"].size
        cfg_node_ptr[c + 1] = cfg_node_ptr[c] + m
        gauss.append(piece["gauss"])
        amp.append(piece["amp"])
        dsum.append(piece["dsum"])
        fz.append(piece["fz"])
        h.append(piece["h"])
        ownden.append(piece["ownden"])
        ot, oi, od = piece["occt"]
        occt_ptr_parts.append(ot[1:] + nt if m else np.zeros(0, np.int64))
        nt += int(ot[-1])
        occt_idx.append(oi)
        occt_den.append(od)
        orp, oir, odr = piece["occr"]
        occr_ptr_parts.append(orp[1:] + nr if m else np.zeros(0, np.int64))
        nr += int(orp[-1])
        occr_idx.append(oir)
        occr_den.append(odr)
        cfg_los_amp[c] = la
        cfg_los_d[c] = ld
        cfg_losocc_ptr[c + 1] = cfg_losocc_ptr[c] + locc[0].size
        losocc_idx.append(locc[0])
        losocc_den.append(locc[1])

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    m_total = int(cfg_node_ptr[-1])
    occt_ptr = np.zeros(m_total + 1, np.int64)
    occt_ptr[1:] = cat(occt_ptr_parts, np.int64)
    occr_ptr = np.zeros(m_total + 1, np.int64)
    occr_ptr[1:] = cat(occr_ptr_parts, np.int64)
    kernel_arrays = (
        cfg_node_ptr, cfg_los_amp, cfg_los_d, cfg_losocc_ptr,
        cat(losocc_idx, np.int32), cat(losocc_den, np.float64),
        cat(gauss, np.int32), cat(amp, np.float64), cat(dsum, np.float64),
        cat(fz, np.float64), cat(h, np.float64), cat(ownden, np.float64),
        occt_ptr, cat(occt_idx, np.int32), cat(occt_den, np.float64),
        occr_ptr, cat(occr_idx, np.int32), cat(occr_den, np.float64),
    )
    return RenderGraph(kernel_arrays, len(links), n, options)


def make_records(config_ids, frequencies, s_tx=None, groups=None, targets_lin=None):
    """Record arrays: one row per (link, frequency) evaluation."""
    cfg = np.asarray(config_ids, np.int32)
    freqs = np.asarray(frequencies, np.float64)
    lam = C_LIGHT / freqs
    stx = (np.full(cfg.size, 1.0 + 0.0j) if s_tx is None
           else np.asarray(s_tx, np.complex128))
    grp = np.zeros(cfg.size, np.int32) if groups is None else np.asarray(groups, np.int32)
    tgt = np.zeros(cfg.size) if targets_lin is None else np.asarray(targets_lin, np.float64)
    return cfg, lam, stx, grp, tgt


def scene_attribute_groups(arrays: SceneArrays):
    """Scene attribute arrays shaped (1, N) for the kernels."""
    return (np.ascontiguousarray(arrays.alpha[None, :]),
            np.ascontiguousarray(arrays.roughness[None, :]),
            np.ascontiguousarray(arrays.gamma_mag[None, :]),
            np.ascontiguousarray(arrays.gamma_phase[None, :]))


def graph_signal(graph: RenderGraph, records, attrs) -> np.ndarray:
    cfg, lam, stx, grp, _ = records
    alpha, rough, gmag, gphase = attrs
    return kernels.graph_forward(cfg, lam, stx, grp, graph.kernel_arrays,
                                 alpha, rough, gmag, gphase, ALPHA_CAP)


# ---------------------------------------------------------------------------
# Spec-level operations


def blend_direction(scene: Scene, bvh: Bvh, rx_position, omega, s_out_values,
                    frequency: float, options: RenderOptions = RenderOptions()) -> complex:
    """Coherent front-to-back blend of the Gaussians on one receive ray.

    ``s_out_values`` maps Gaussian index -> outgoing complex amplitude
    (array of length N; Gaussians absent from the ray contribute only
    occlusion). Sorting is internal, so input order never matters.
    """
    chain = ray_chain(bvh, scene, rx_position, omega, use_bvh=options.use_bvh)
    s_out = np.asarray(s_out_values, dtype=np.complex128)
    lam = C_LIGHT / frequency
    acc = 0.0 + 0.0j
    transmittance = 1.0 + 0.0j
    for k in range(len(chain)):
        l = int(chain.gauss_index[k])
        a = float(chain.alpha[k])
        d = float(chain.distance[k])
        if options.path_loss and not options.attenuation_per_occluder:
            att = math.sqrt(1.0 / (4.0 * math.pi * d * d)) * np.exp(-1j * 2.0 * np.pi * d / lam)
        else:
            att = 1.0
        acc += s_out[l] * a * transmittance * att
        hop = 1.0 - a
        if options.path_loss and options.attenuation_per_occluder:
            hop *= math.sqrt(1.0 / (4.0 * math.pi * d * d)) * np.exp(-1j * 2.0 * np.pi * d / lam)
        transmittance *= hop
    return complex(acc)


def render_received_signal(scene: Scene, bvh: Bvh, tx: Antenna, rx: Antenna,
                           grid: FrequencyGrid, los: Optional[LosNlosParams] = None,
                           options: RenderOptions = RenderOptions(),
                           s_tx: Optional[np.ndarray] = None) -> ComplexSignal:
    """Full Tx -> scene -> Rx forward render over a frequency grid."""
    graph = build_render_graph(scene, bvh, [LinkConfig(tx, rx, los)], options)
    nf = len(grid)
    stx = np.full(nf, 1.0 + 0.0j) if s_tx is None else np.asarray(s_tx, np.complex128)
    records = make_records(np.zeros(nf, np.int32), grid.samples, stx)
    attrs = scene_attribute_groups(scene_arrays(scene))
    values = graph_signal(graph, records, attrs)
    return ComplexSignal(grid, values)


def _rotate_z(p: np.ndarray, angle_rad: float, center: np.ndarray) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    rel = p - center
    return center + np.array([c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]])


def render_rcs_sweep(scene: Scene, radar: Antenna, angles_deg, grid: FrequencyGrid,
                     options: RenderOptions = RenderOptions(),
                     center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Monostatic sweep: the co-located Tx/Rx orbits the object about +z.

    Returns RSSI dB shaped (n_angles, n_freq), floored at -300 dB.
    """
    center = np.asarray(center, dtype=np.float64)
    angles = np.asarray(angles_deg, dtype=np.float64)
    bvh = build_bvh(scene)
    links = []
    for ang in angles:
        pos = _rotate_z(radar.position, math.radians(float(ang)), center)
        bore = None
        if radar.pattern == "horn":
            bore = center - pos
            bore = bore / np.linalg.norm(bore)
        tx = Antenna("tx", pos, radar.power_watts, radar.gain, radar.pattern, bore,
                     radar.pattern_exponent)
        rx = Antenna("rx", pos, radar.power_watts, radar.gain, radar.pattern, bore,
                     radar.pattern_exponent)
        links.append(LinkConfig(tx, rx, None))
    graph = build_render_graph(scene, bvh, links, options)
    na, nf = angles.size, len(grid)
    cfg = np.repeat(np.arange(na, dtype=np.int32), nf)
    freqs = np.tile(grid.samples, na)
    records = make_records(cfg, freqs)
    attrs = scene_attribute_groups(scene_arrays(scene))
    values = graph_signal(graph, records, attrs).reshape(na, nf)
    power = np.abs(values) ** 2
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, RSSI_FLOOR_DB)


@dataclass(frozen=True, eq=False)
class RadioMap:
    cells_db: np.ndarray   # (H, W)
    xs: np.ndarray         # (W,) cell-center x
    ys: np.ndarray         # (H,) cell-center y
    height: float
    frequency: float

    def stats(self, threshold_db: float = -90.0) -> dict:
        flat = self.cells_db.ravel()
        return {
            "min_db": float(flat.min()),
            "mean_db": float(flat.mean()),
            "max_db": float(flat.max()),
            "coverage_pct": float(100.0 * np.mean(flat >= threshold_db)),
        }


def radio_map_cells(scene: Scene, h: int, w: int, height: float):
    lo, hi = scene.bounds.lo, scene.bounds.hi
    xs = lo[0] + (np.arange(w) + 0.5) / w * (hi[0] - lo[0])
    ys = lo[1] + (np.arange(h) + 0.5) / h * (hi[1] - lo[1])
    return xs, ys


def render_radio_map(scene: Scene, bvh: Bvh, tx: Antenna, h: int, w: int,
                     frequency: float, los: Optional[LosNlosParams] = None,
                     height: float = 1.0, options: RenderOptions = RenderOptions(),
                     rx_template: Optional[Antenna] = None) -> RadioMap:
    """RSSI map over an H x W grid of Rx positions at a fixed height."""
    if not scene.bounds.contains(tx.position, pad=0.0):
        raise SceneValidationError("Tx outside scene bounds")
    xs, ys = radio_map_cells(scene, h, w, height)
    links = []
    for y in ys:
        for x in xs:
            pos = np.array([x, y, height])
            if float(np.linalg.norm(pos - tx.position)) < MIN_LINK_DISTANCE:
                raise DegeneratePlacementError("map cell co-located with the Tx")
            if rx_template is None:
                rx = Antenna("rx", pos)
            else:
                rx = rx_template.moved_to(pos)
            links.append(LinkConfig(tx, rx, los))
    graph = build_render_graph(scene, bvh, links, options)
    n_cells = h * w
    records = make_records(np.arange(n_cells, dtype=np.int32), np.full(n_cells, frequency))
    attrs = scene_attribute_groups(scene_arrays(scene))
    values = graph_signal(graph, records, attrs)
    power = np.abs(values) ** 2
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return RadioMap(np.maximum(db, RSSI_FLOOR_DB).reshape(h, w), xs, ys, height, frequency)


def export_attribute_maps(scene: Scene, rx: Antenna, bvh: Optional[Bvh] = None,
                          step_deg: float = 1.0, no_data: float = np.nan,
                          options: RenderOptions = RenderOptions()) -> dict:
    """Splat |Gamma|, phase, and roughness over the Rx FoV.

    Values are alpha-blended with the same a_l * T_l weights the signal
    blend uses, normalized per cell; uncovered cells hold ``no_data``.
    """
    from .tracing import visibility_chain

    arrays = scene_arrays(scene)
    if bvh is None:
        bvh = build_bvh(scene)
    grid = make_fov_grid(rx, step_deg)
    n_cells = len(grid)
    shape = (grid.n_theta, grid.n_phi)
    acc = {k: np.zeros(n_cells) for k in ("gamma_mag", "gamma_phase", "roughness")}
    wsum = np.zeros(n_cells)
    n = arrays.mu.shape[0]
    if n:
        delta = arrays.mu - rx.position[None, :]
        d = np.linalg.norm(delta, axis=1)
        if np.any(d < MIN_LINK_DISTANCE):
            raise DegeneratePlacementError("Rx placed on a Gaussian center")
        v = delta / d[:, None]
        cell, _ = grid.bin_many(v)
        for l in range(n):
            if cell[l] < 0:
                continue
            t_vis, _ = visibility_chain(bvh, arrays, rx.position, arrays.mu[l],
                                        exclude_index=l, use_bvh=options.use_bvh)
            weight = min(arrays.alpha[l], ALPHA_CAP) * t_vis
            c = int(cell[l])
            wsum[c] += weight
            acc["gamma_mag"][c] += weight * arrays.gamma_mag[l]
            acc["gamma_phase"][c] += weight * arrays.gamma_phase[l]
            acc["roughness"][c] += weight * arrays.roughness[l]
    covered = wsum > 0
    out = {}
    for k, vals in acc.items():
        m = np.full(n_cells, no_data)
        m[covered] = vals[covered] / wsum[covered]
        out[k] = m.reshape(shape)
    out["weight"] = wsum.reshape(shape)
    out["grid"] = grid
    return out
