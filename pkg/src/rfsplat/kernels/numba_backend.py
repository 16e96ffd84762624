"""Numba-jitted hot kernels: BVH segment queries and render-graph evaluation.

Same contracts as numpy_backend; loops compile with cache=True so repeat
runs skip JIT. Kept serial so outputs are deterministic bit-for-bit.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"

_STACK = 128


@njit(cache=True, inline="always")
def _pair_closest(ox, oy, oz, dx, dy, dz, mx, my, mz, q00, q01, q02, q11, q12, q22):
    ex = ox - mx
    ey = oy - my
    ez = oz - mz
    qd0 = q00 * dx + q01 * dy + q02 * dz
    qd1 = q01 * dx + q11 * dy + q12 * dz
    qd2 = q02 * dx + q12 * dy + q22 * dz
    a = dx * qd0 + dy * qd1 + dz * qd2
    b = ex * qd0 + ey * qd1 + ez * qd2
    t = -b / a
    # evaluate the quadratic at the closest point; the closed form
    # c - b^2/a cancels catastrophically for distant Gaussians
    px = ex + t * dx
    py = ey + t * dy
    pz = ez + t * dz
    m2 = (px * (q00 * px + q01 * py + q02 * pz)
          + py * (q01 * px + q11 * py + q12 * pz)
          + pz * (q02 * px + q12 * py + q22 * pz))
    return t, m2


@njit(cache=True, inline="always")
def _slab_hit(lox, loy, loz, hix, hiy, hiz, ox, oy, oz, dx, dy, dz, t0, t1):
    tmin = t0
    tmax = t1
    for axis in range(3):
        if axis == 0:
            o = ox
            d = dx
            lo = lox
            hi = hix
        elif axis == 1:
            o = oy
            d = dy
            lo = loy
            hi = hiy
        else:
            o = oz
            d = dz
            lo = loz
            hi = hiz
        if abs(d) < 1e-300:
            if o < lo or o > hi:
                return False
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
    return tmin <= tmax


@njit(cache=True)
def _segment_query(mu, icov6, node_lo, node_hi, node_left, node_right, node_start,
                   node_count, prim_index, ox, oy, oz, dx, dy, dz, t0, t1, excl,
                   m2max, out_idx, out_t, out_m2, fill):
    count = 0
    stack = np.empty(_STACK, np.int64)
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab_hit(node_lo[node, 0], node_lo[node, 1], node_lo[node, 2],
                         node_hi[node, 0], node_hi[node, 1], node_hi[node, 2],
                         ox, oy, oz, dx, dy, dz, t0, t1):
            continue
        if node_count[node] > 0:
            s = node_start[node]
            for k in range(node_count[node]):
                p = prim_index[s + k]
                if p == excl:
                    continue
                t, m2 = _pair_closest(ox, oy, oz, dx, dy, dz,
                                      mu[p, 0], mu[p, 1], mu[p, 2],
                                      icov6[p, 0], icov6[p, 1], icov6[p, 2],
                                      icov6[p, 3], icov6[p, 4], icov6[p, 5])
                if t > t0 and t < t1 and m2 <= m2max:
                    if fill:
                        out_idx[count] = p
                        out_t[count] = t
                        out_m2[count] = m2
                    count += 1
        else:
            stack[top] = node_left[node]
            stack[top + 1] = node_right[node]
            top += 2
    return count


@njit(cache=True)
def _brute_query(mu, icov6, ox, oy, oz, dx, dy, dz, t0, t1, excl, m2max,
                 out_idx, out_t, out_m2, fill):
    count = 0
    for p in range(mu.shape[0]):
        if p == excl:
            continue
        t, m2 = _pair_closest(ox, oy, oz, dx, dy, dz,
                              mu[p, 0], mu[p, 1], mu[p, 2],
                              icov6[p, 0], icov6[p, 1], icov6[p, 2],
                              icov6[p, 3], icov6[p, 4], icov6[p, 5])
        if t > t0 and t < t1 and m2 <= m2max:
            if fill:
                out_idx[count] = p
                out_t[count] = t
                out_m2[count] = m2
            count += 1
    return count


@njit(cache=True)
def _sort_slice(idx, t, m2, lo, hi):
    # insertion sort by (t, idx); chains are short
    for i in range(lo + 1, hi):
        ti = t[i]
        ii = idx[i]
        mi = m2[i]
        j = i - 1
        while j >= lo and (t[j] > ti or (t[j] == ti and idx[j] > ii)):
            t[j + 1] = t[j]
            idx[j + 1] = idx[j]
            m2[j + 1] = m2[j]
            j -= 1
        t[j + 1] = ti
        idx[j + 1] = ii
        m2[j + 1] = mi


@njit(cache=True)
def _hits_batch(mu, icov6, alpha, node_lo, node_hi, node_left, node_right,
                node_start, node_count, prim_index, origins, dirs, t_lo, t_hi,
                exclude, cap, m2max, use_bvh):
    nq = origins.shape[0]
    offsets = np.zeros(nq + 1, np.int64)
    dummy_i = np.empty(0, np.int32)
    dummy_f = np.empty(0, np.float64)
    for q in range(nq):
        if use_bvh:
            offsets[q + 1] = _segment_query(
                mu, icov6, node_lo, node_hi, node_left, node_right, node_start,
                node_count, prim_index, origins[q, 0], origins[q, 1], origins[q, 2],
                dirs[q, 0], dirs[q, 1], dirs[q, 2], t_lo[q], t_hi[q], exclude[q],
                m2max, dummy_i, dummy_f, dummy_f, False)
        else:
            offsets[q + 1] = _brute_query(
                mu, icov6, origins[q, 0], origins[q, 1], origins[q, 2],
                dirs[q, 0], dirs[q, 1], dirs[q, 2], t_lo[q], t_hi[q], exclude[q],
                m2max, dummy_i, dummy_f, dummy_f, False)
    for q in range(nq):
        offsets[q + 1] += offsets[q]
    total = offsets[nq]
    idx = np.empty(total, np.int32)
    tst = np.empty(total, np.float64)
    m2v = np.empty(total, np.float64)
    for q in range(nq):
        lo = offsets[q]
        hi = offsets[q + 1]
        if hi == lo:
            continue
        if use_bvh:
            _segment_query(mu, icov6, node_lo, node_hi, node_left, node_right,
                           node_start, node_count, prim_index,
                           origins[q, 0], origins[q, 1], origins[q, 2],
                           dirs[q, 0], dirs[q, 1], dirs[q, 2], t_lo[q], t_hi[q],
                           exclude[q], m2max, idx[lo:hi], tst[lo:hi], m2v[lo:hi], True)
        else:
            _brute_query(mu, icov6, origins[q, 0], origins[q, 1], origins[q, 2],
                         dirs[q, 0], dirs[q, 1], dirs[q, 2], t_lo[q], t_hi[q],
                         exclude[q], m2max, idx[lo:hi], tst[lo:hi], m2v[lo:hi], True)
        _sort_slice(idx, tst, m2v, lo, hi)
    den = np.empty(total, np.float64)
    acontrib = np.empty(total, np.float64)
    for k in range(total):
        den[k] = math.exp(-0.5 * m2v[k])
        a = alpha[idx[k]] * den[k]
        acontrib[k] = a if a < cap else cap
    return offsets, idx, tst, den, acontrib


def segment_hits(mu, icov6, alpha, bvh, origins, dirs, t_lo, t_hi, exclude, cap, m2max):
    node_lo, node_hi, node_left, node_right, node_start, node_count, prim_index = bvh
    if node_lo.shape[0] == 0 or origins.shape[0] == 0:
        return (np.zeros(origins.shape[0] + 1, np.int64), np.zeros(0, np.int32),
                np.zeros(0), np.zeros(0), np.zeros(0))
    return _hits_batch(mu, icov6, alpha, node_lo, node_hi, node_left, node_right,
                       node_start, node_count, prim_index, origins, dirs, t_lo,
                       t_hi, exclude, cap, m2max, True)


def segment_hits_brute(mu, icov6, alpha, bvh, origins, dirs, t_lo, t_hi, exclude, cap, m2max):
    if mu.shape[0] == 0 or origins.shape[0] == 0:
        return (np.zeros(origins.shape[0] + 1, np.int64), np.zeros(0, np.int32),
                np.zeros(0), np.zeros(0), np.zeros(0))
    empty3 = np.zeros((0, 3))
    empty_i = np.zeros(0, np.int32)
    return _hits_batch(mu, icov6, alpha, empty3, empty3, empty_i, empty_i,
                       empty_i, empty_i, empty_i, origins, dirs, t_lo, t_hi,
                       exclude, cap, m2max, False)


@njit(cache=True)
def _graph_forward_impl(rec_cfg, rec_lam, rec_stx, rec_group,
                        cfg_node_ptr, cfg_los_amp, cfg_los_d, cfg_losocc_ptr,
                        losocc_idx, losocc_den, node_gauss, node_amp, node_dsum,
                        node_fz, node_h, node_ownden, occt_ptr, occt_idx, occt_den,
                        occr_ptr, occr_idx, occr_den, alpha, rough, gmag, gphase, cap):
    nr = rec_cfg.shape[0]
    S = np.zeros(nr, np.complex128)
    two_pi = 2.0 * math.pi
    for r in range(nr):
        c = rec_cfg[r]
        g = rec_group[r]
        lam = rec_lam[r]
        acc = 0.0 + 0.0j
        for n in range(cfg_node_ptr[c], cfg_node_ptr[c + 1]):
            l = node_gauss[n]
            v = 1.0
            for k in range(occt_ptr[n], occt_ptr[n + 1]):
                am = alpha[g, occt_idx[k]] * occt_den[k]
                v *= 1.0 - (am if am < cap else cap)
            tr = 1.0
            for k in range(occr_ptr[n], occr_ptr[n + 1]):
                am = alpha[g, occr_idx[k]] * occr_den[k]
                tr *= 1.0 - (am if am < cap else cap)
            own = alpha[g, l] * node_ownden[n]
            a = own if own < cap else cap
            F = node_fz[n] * node_h[n] ** rough[g, l]
            mag = node_amp[n] * gmag[g, l] * F * v * tr * a
            ph = gphase[g, l] - two_pi * node_dsum[n] / lam
            acc += mag * complex(math.cos(ph), math.sin(ph))
        if cfg_los_amp[c] > 0.0:
            vl = 1.0
            for k in range(cfg_losocc_ptr[c], cfg_losocc_ptr[c + 1]):
                am = alpha[g, losocc_idx[k]] * losocc_den[k]
                vl *= 1.0 - (am if am < cap else cap)
            ph = two_pi * cfg_los_d[c] / lam
            acc += cfg_los_amp[c] * vl * complex(math.cos(ph), math.sin(ph))
        S[r] = acc * rec_stx[r]
    return S


def graph_forward(rec_cfg, rec_lam, rec_stx, rec_group, graph, alpha, rough, gmag, gphase, cap):
    return _graph_forward_impl(rec_cfg, rec_lam, rec_stx, rec_group, *graph,
                               alpha, rough, gmag, gphase, cap)


@njit(cache=True)
def _graph_loss_grad_impl(rec_cfg, rec_lam, rec_stx, rec_group, rec_target,
                          cfg_node_ptr, cfg_los_amp, cfg_los_d, cfg_losocc_ptr,
                          losocc_idx, losocc_den, node_gauss, node_amp, node_dsum,
                          node_fz, node_h, node_ownden, occt_ptr, occt_idx, occt_den,
                          occr_ptr, occr_idx, occr_den, alpha, rough, gmag, gphase,
                          cap, n_groups, n_gauss):
    nr = rec_cfg.shape[0]
    S = np.zeros(nr, np.complex128)
    grads = np.zeros((n_groups, n_gauss, 4))
    loss = 0.0
    two_pi = 2.0 * math.pi
    for r in range(nr):
        c = rec_cfg[r]
        g = rec_group[r]
        lam = rec_lam[r]
        stx = rec_stx[r]
        acc = 0.0 + 0.0j
        los = 0.0 + 0.0j
        for n in range(cfg_node_ptr[c], cfg_node_ptr[c + 1]):
            l = node_gauss[n]
            v = 1.0
            for k in range(occt_ptr[n], occt_ptr[n + 1]):
                am = alpha[g, occt_idx[k]] * occt_den[k]
                v *= 1.0 - (am if am < cap else cap)
            tr = 1.0
            for k in range(occr_ptr[n], occr_ptr[n + 1]):
                am = alpha[g, occr_idx[k]] * occr_den[k]
                tr *= 1.0 - (am if am < cap else cap)
            own = alpha[g, l] * node_ownden[n]
            a = own if own < cap else cap
            F = node_fz[n] * node_h[n] ** rough[g, l]
            mag = node_amp[n] * gmag[g, l] * F * v * tr * a
            ph = gphase[g, l] - two_pi * node_dsum[n] / lam
            acc += mag * complex(math.cos(ph), math.sin(ph))
        if cfg_los_amp[c] > 0.0:
            vl = 1.0
            for k in range(cfg_losocc_ptr[c], cfg_losocc_ptr[c + 1]):
                am = alpha[g, losocc_idx[k]] * losocc_den[k]
                vl *= 1.0 - (am if am < cap else cap)
            ph = two_pi * cfg_los_d[c] / lam
            los = cfg_los_amp[c] * vl * complex(math.cos(ph), math.sin(ph)) * stx
        Sr = acc * stx + los
        S[r] = Sr
        res = Sr.real * Sr.real + Sr.imag * Sr.imag - rec_target[r]
        loss += res * res
        adj = 4.0 * res * np.conj(Sr)

        for n in range(cfg_node_ptr[c], cfg_node_ptr[c + 1]):
            l = node_gauss[n]
            v = 1.0
            for k in range(occt_ptr[n], occt_ptr[n + 1]):
                am = alpha[g, occt_idx[k]] * occt_den[k]
                v *= 1.0 - (am if am < cap else cap)
            tr = 1.0
            for k in range(occr_ptr[n], occr_ptr[n + 1]):
                am = alpha[g, occr_idx[k]] * occr_den[k]
                tr *= 1.0 - (am if am < cap else cap)
            own = alpha[g, l] * node_ownden[n]
            a = own if own < cap else cap
            F = node_fz[n] * node_h[n] ** rough[g, l]
            base = node_amp[n] * F * v * tr
            ph = gphase[g, l] - two_pi * node_dsum[n] / lam
            rot = complex(math.cos(ph), math.sin(ph)) * stx
            term = base * gmag[g, l] * a * rot
            adj_term = adj * term
            grads[g, l, 2] += (adj * (base * a * rot)).real
            grads[g, l, 3] += (adj_term * 1j).real
            grads[g, l, 1] += adj_term.real * math.log(node_h[n])
            if own < cap:
                grads[g, l, 0] += (adj * (base * gmag[g, l] * rot)).real * node_ownden[n]
            for k in range(occt_ptr[n], occt_ptr[n + 1]):
                m = occt_idx[k]
                am = alpha[g, m] * occt_den[k]
                if am < cap:
                    grads[g, m, 0] += adj_term.real * (-occt_den[k] / (1.0 - am))
            for k in range(occr_ptr[n], occr_ptr[n + 1]):
                m = occr_idx[k]
                am = alpha[g, m] * occr_den[k]
                if am < cap:
                    grads[g, m, 0] += adj_term.real * (-occr_den[k] / (1.0 - am))
        if cfg_los_amp[c] > 0.0:
            adj_los = (adj * los).real
            for k in range(cfg_losocc_ptr[c], cfg_losocc_ptr[c + 1]):
                m = losocc_idx[k]
                am = alpha[g, m] * losocc_den[k]
                if am < cap:
                    grads[g, m, 0] += adj_los * (-losocc_den[k] / (1.0 - am))
    return loss, S, grads


def graph_loss_grad(rec_cfg, rec_lam, rec_stx, rec_group, rec_target, graph,
                    alpha, rough, gmag, gphase, cap, n_groups, n_gauss):
    return _graph_loss_grad_impl(rec_cfg, rec_lam, rec_stx, rec_group, rec_target,
                                 *graph, alpha, rough, gmag, gphase, cap,
                                 n_groups, n_gauss)
