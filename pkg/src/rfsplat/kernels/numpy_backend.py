"""Vectorized pure-numpy implementations of the hot kernels.

Selected via RFSPLAT_KERNELS=numpy (or automatically when numba is not
importable). Must return the same values as the numba backend; equivalence
is covered by the test suite and timed by bench/kernel_bench.py.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"

_EMPTY_HITS = (
    np.zeros(1, np.int64),
    np.zeros(0, np.int32),
    np.zeros(0, np.float64),
    np.zeros(0, np.float64),
    np.zeros(0, np.float64),
)


def _closest_approach(origins, dirs, mu, icov6):
    """Per-pair ray parameter of minimal Mahalanobis distance and its value.

    origins/dirs/mu are (K, 3); icov6 is the packed symmetric inverse
    covariance per pair. Returns (t_star, mahal_sq).
    """
    e = origins - mu
    d = dirs
    q00, q01, q02, q11, q12, q22 = (icov6[:, i] for i in range(6))
    qd0 = q00 * d[:, 0] + q01 * d[:, 1] + q02 * d[:, 2]
    qd1 = q01 * d[:, 0] + q11 * d[:, 1] + q12 * d[:, 2]
    qd2 = q02 * d[:, 0] + q12 * d[:, 1] + q22 * d[:, 2]
    a = d[:, 0] * qd0 + d[:, 1] * qd1 + d[:, 2] * qd2
    b = e[:, 0] * qd0 + e[:, 1] * qd1 + e[:, 2] * qd2
    t = -b / a
    # quadratic evaluated at the closest point; c - b^2/a cancels badly
    px = e[:, 0] + t * d[:, 0]
    py = e[:, 1] + t * d[:, 1]
    pz = e[:, 2] + t * d[:, 2]
    m2 = (px * (q00 * px + q01 * py + q02 * pz)
          + py * (q01 * px + q11 * py + q12 * pz)
          + pz * (q02 * px + q12 * py + q22 * pz))
    return t, m2


def _finish_hits(qq, pp, t, m2, alpha, t_lo, t_hi, exclude, cap, m2max, n_queries):
    keep = (t > t_lo[qq]) & (t < t_hi[qq]) & (m2 <= m2max) & (pp != exclude[qq])
    qq, pp, t, m2 = qq[keep], pp[keep], t[keep], m2[keep]
    order = np.lexsort((pp, t, qq))
    qq, pp, t, m2 = qq[order], pp[order], t[order], m2[order]
    den = np.exp(-0.5 * m2)
    acontrib = np.minimum(alpha[pp] * den, cap)
    offsets = np.zeros(n_queries + 1, np.int64)
    np.cumsum(np.bincount(qq, minlength=n_queries), out=offsets[1:])
    return offsets, pp.astype(np.int32), t, den, acontrib


def segment_hits_brute(mu, icov6, alpha, bvh, origins, dirs, t_lo, t_hi, exclude, cap, m2max):
    """All-Gaussians version of segment_hits; same output contract."""
    nq = origins.shape[0]
    n = mu.shape[0]
    if n == 0 or nq == 0:
        out = list(_EMPTY_HITS)
        out[0] = np.zeros(nq + 1, np.int64)
        return tuple(out)
    qq = np.repeat(np.arange(nq, dtype=np.int64), n)
    pp = np.tile(np.arange(n, dtype=np.int64), nq)
    t, m2 = _closest_approach(origins[qq], dirs[qq], mu[pp], icov6[pp])
    return _finish_hits(qq, pp, t, m2, alpha, t_lo, t_hi, exclude, cap, m2max, nq)


def segment_hits(mu, icov6, alpha, bvh, origins, dirs, t_lo, t_hi, exclude, cap, m2max):
    """Gaussians within the Mahalanobis cutoff of each query ray segment.

    Returns CSR data (offsets, gaussian index, t_star, peak density, capped
    alpha contribution) sorted by (t_star, index) within each query. The
    parametric window is (t_lo, t_hi) exclusive; ``exclude`` suppresses one
    Gaussian index per query (-1 for none).
    """
    node_lo, node_hi, node_left, node_right, node_start, node_count, prim_index = bvh
    nq = origins.shape[0]
    if node_lo.shape[0] == 0 or nq == 0:
        out = list(_EMPTY_HITS)
        out[0] = np.zeros(nq + 1, np.int64)
        return tuple(out)

    # breadth-first frontier of (query, node) pairs, vectorized slab tests
    q_act = np.arange(nq, dtype=np.int64)
    n_act = np.zeros(nq, dtype=np.int64)
    cand_q: list[np.ndarray] = []
    cand_p: list[np.ndarray] = []
    while q_act.size:
        o = origins[q_act]
        d = dirs[q_act]
        lo = node_lo[n_act]
        hi = node_hi[n_act]
        tmin = t_lo[q_act].copy()
        tmax = t_hi[q_act].copy()
        ok = np.ones(q_act.size, dtype=bool)
        for a in range(3):
            da = d[:, a]
            oa = o[:, a]
            small = np.abs(da) < 1e-300
            ok &= ~(small & ((oa < lo[:, a]) | (oa > hi[:, a])))
            safe = np.where(small, 1.0, da)
            t1 = (lo[:, a] - oa) / safe
            t2 = (hi[:, a] - oa) / safe
            lo12 = np.minimum(t1, t2)
            hi12 = np.maximum(t1, t2)
            tmin = np.where(small, tmin, np.maximum(tmin, lo12))
            tmax = np.where(small, tmax, np.minimum(tmax, hi12))
        ok &= tmin <= tmax
        q_act = q_act[ok]
        n_act = n_act[ok]
        if q_act.size == 0:
            break
        is_leaf = node_count[n_act] > 0
        if np.any(is_leaf):
            lq = q_act[is_leaf]
            ln = n_act[is_leaf]
            counts = node_count[ln].astype(np.int64)
            starts = node_start[ln].astype(np.int64)
            total = int(counts.sum())
            base = np.repeat(starts, counts)
            step = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
            cand_q.append(np.repeat(lq, counts))
            cand_p.append(prim_index[base + step].astype(np.int64))
        inner = ~is_leaf
        iq = q_act[inner]
        innode = n_act[inner]
        q_act = np.concatenate([iq, iq])
        n_act = np.concatenate([node_left[innode].astype(np.int64), node_right[innode].astype(np.int64)])

    if not cand_q:
        out = list(_EMPTY_HITS)
        out[0] = np.zeros(nq + 1, np.int64)
        return tuple(out)
    qq = np.concatenate(cand_q)
    pp = np.concatenate(cand_p)
    t, m2 = _closest_approach(origins[qq], dirs[qq], mu[pp], icov6[pp])
    return _finish_hits(qq, pp, t, m2, alpha, t_lo, t_hi, exclude, cap, m2max, nq)


def _csr_log_products(values, ptr):
    """Product of ``values`` over each CSR segment; empty segments give 1."""
    if values.size == 0:
        return np.ones(ptr.size - 1)
    cs = np.concatenate(([0.0], np.cumsum(np.log(values))))
    return np.exp(cs[ptr[1:]] - cs[ptr[:-1]])


def _record_terms(r, rec_cfg, rec_lam, rec_stx, rec_group, graph, alpha, rough, gmag, gphase, cap):
    """Per-node complex terms of one record plus reusable factors."""
    (cfg_node_ptr, cfg_los_amp, cfg_los_d, cfg_losocc_ptr, losocc_idx, losocc_den,
     node_gauss, node_amp, node_dsum, node_fz, node_h, node_ownden,
     occt_ptr, occt_idx, occt_den, occr_ptr, occr_idx, occr_den) = graph
    c = rec_cfg[r]
    g = rec_group[r]
    lam = rec_lam[r]
    stx = rec_stx[r]
    n0, n1 = int(cfg_node_ptr[c]), int(cfg_node_ptr[c + 1])
    gi = node_gauss[n0:n1]
    al = alpha[g]

    kt0, kt1 = int(occt_ptr[n0]), int(occt_ptr[n1])
    vt = 1.0 - np.minimum(al[occt_idx[kt0:kt1]] * occt_den[kt0:kt1], cap)
    V = _csr_log_products(vt, occt_ptr[n0:n1 + 1] - kt0)
    kr0, kr1 = int(occr_ptr[n0]), int(occr_ptr[n1])
    vr = 1.0 - np.minimum(al[occr_idx[kr0:kr1]] * occr_den[kr0:kr1], cap)
    T = _csr_log_products(vr, occr_ptr[n0:n1 + 1] - kr0)

    own = al[gi] * node_ownden[n0:n1]
    a = np.minimum(own, cap)
    F = node_fz[n0:n1] * node_h[n0:n1] ** rough[g][gi]
    base = node_amp[n0:n1] * F * V * T          # no gamma, no alpha
    phase = np.exp(1j * (gphase[g][gi] - 2.0 * np.pi * node_dsum[n0:n1] / lam)) * stx
    terms = base * gmag[g][gi] * a * phase

    los = 0.0 + 0.0j
    vlos = 1.0
    if cfg_los_amp[c] > 0.0:
        j0, j1 = int(cfg_losocc_ptr[c]), int(cfg_losocc_ptr[c + 1])
        vl = 1.0 - np.minimum(al[losocc_idx[j0:j1]] * losocc_den[j0:j1], cap)
        vlos = float(np.prod(vl)) if j1 > j0 else 1.0
        los = cfg_los_amp[c] * vlos * np.exp(1j * 2.0 * np.pi * cfg_los_d[c] / lam) * stx
    return n0, n1, gi, a, own, V, T, F, base, phase, terms, los, vlos


def graph_forward(rec_cfg, rec_lam, rec_stx, rec_group, graph, alpha, rough, gmag, gphase, cap):
    """Received complex signal per record of a flattened render graph."""
    nr = rec_cfg.size
    S = np.zeros(nr, np.complex128)
    for r in range(nr):
        *_, terms, los, _ = _record_terms(r, rec_cfg, rec_lam, rec_stx, rec_group,
                                          graph, alpha, rough, gmag, gphase, cap)
        S[r] = terms.sum() + los
    return S


def graph_loss_grad(rec_cfg, rec_lam, rec_stx, rec_group, rec_target, graph,
                    alpha, rough, gmag, gphase, cap, n_groups, n_gauss):
    """Total squared power-residual loss, per-record signal, and gradients.

    Gradients are in constrained attribute space, shaped (n_groups, n_gauss, 4)
    ordered (alpha, roughness, gamma_mag, gamma_phase).
    """
    (cfg_node_ptr, cfg_los_amp, cfg_los_d, cfg_losocc_ptr, losocc_idx, losocc_den,
     node_gauss, node_amp, node_dsum, node_fz, node_h, node_ownden,
     occt_ptr, occt_idx, occt_den, occr_ptr, occr_idx, occr_den) = graph
    nr = rec_cfg.size
    S = np.zeros(nr, np.complex128)
    grads = np.zeros((n_groups, n_gauss, 4))
    loss = 0.0
    logh_cache: dict[int, np.ndarray] = {}
    for r in range(nr):
        c = int(rec_cfg[r])
        g = int(rec_group[r])
        (n0, n1, gi, a, own, V, T, F, base, phase, terms, los, vlos) = _record_terms(
            r, rec_cfg, rec_lam, rec_stx, rec_group, graph, alpha, rough, gmag, gphase, cap)
        Sr = terms.sum() + los
        S[r] = Sr
        res = (Sr.real * Sr.real + Sr.imag * Sr.imag) - rec_target[r]
        loss += res * res
        adj = 4.0 * res * np.conj(Sr)

        if n1 > n0:
            gm = gmag[g][gi]
            adj_terms_re = np.real(adj * terms)
            if c not in logh_cache:
                logh_cache[c] = np.log(node_h[n0:n1])
            logh = logh_cache[c]
            np.add.at(grads[g, :, 2], gi, np.real(adj * base * a * phase))
            np.add.at(grads[g, :, 3], gi, np.real(adj * 1j * terms))
            np.add.at(grads[g, :, 1], gi, adj_terms_re * logh)
            uncapped = own < cap
            np.add.at(grads[g, :, 0], gi,
                      np.where(uncapped, np.real(adj * base * gm * phase) * node_ownden[n0:n1], 0.0))

            # occluder transmittance gradients (Tx side then Rx side)
            for ptr, idxs, dens in ((occt_ptr, occt_idx, occt_den), (occr_ptr, occr_idx, occr_den)):
                k0, k1 = int(ptr[n0]), int(ptr[n1])
                if k1 == k0:
                    continue
                m = idxs[k0:k1]
                dk = dens[k0:k1]
                am = alpha[g][m] * dk
                factor = np.where(am < cap, -dk / (1.0 - np.minimum(am, cap)), 0.0)
                counts = (ptr[n0 + 1:n1 + 1] - ptr[n0:n1]).astype(np.int64)
                parent = np.repeat(np.arange(n1 - n0), counts)
                np.add.at(grads[g, :, 0], m, adj_terms_re[parent] * factor)

        if cfg_los_amp[c] > 0.0:
            j0, j1 = int(cfg_losocc_ptr[c]), int(cfg_losocc_ptr[c + 1])
            if j1 > j0:
                m = losocc_idx[j0:j1]
                dk = losocc_den[j0:j1]
                am = alpha[g][m] * dk
                factor = np.where(am < cap, -dk / (1.0 - np.minimum(am, cap)), 0.0)
                np.add.at(grads[g, :, 0], m, np.real(adj * los) * factor)
    return loss, S, grads
