"""Frequency-aware attribute modulation for wideband rendering.

A small MLP maps (frequency features, per-Gaussian embedding) to additive
deltas on the raw (roughness, |Gamma|, phase) parameters; opacity is not
deformed. The output layer is zero-initialized so an untrained network is
an exact identity deformation at every frequency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scene import ObservationSet, Scene, SceneValidationError, wrap_phase
from .inverse import (Adam, AttributeBank, FitConfig, FitReport,
                      build_fit_problem, cosine_lr, sigmoid, softplus)

N_FREQ_OCTAVES = 4  # sinusoidal feature pairs on top of the normalized frequency


@dataclass
class FamConfig:
    layers: int = 3        # hidden layers (paper-scale preset: 6)
    hidden: int = 64       # hidden width (paper-scale preset: 256)
    embed_dim: int = 8
    seed: int = 0

    @staticmethod
    def paper_scale() -> "FamConfig":
        return FamConfig(layers=6, hidden=256)


class FamNetwork:
    """tanh MLP emitting (d_rough_raw, d_gmag_raw, d_phase) per Gaussian."""

    def __init__(self, n_gauss: int, band: tuple[float, float],
                 config: FamConfig = FamConfig()):
        f_lo, f_hi = float(band[0]), float(band[1])
        if f_hi <= f_lo:
            raise SceneValidationError("band must be (f_lo, f_hi) with f_hi > f_lo")
        self.n_gauss = n_gauss
        self.band = (f_lo, f_hi)
        self.config = config
        rng = np.random.default_rng(config.seed)
        in_dim = 1 + 2 * N_FREQ_OCTAVES + config.embed_dim
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        prev = in_dim
        for _ in range(config.layers):
            bound = math.sqrt(6.0 / (prev + config.hidden))
            self.weights.append(rng.uniform(-bound, bound, size=(prev, config.hidden)))
            self.biases.append(np.zeros(config.hidden))
            prev = config.hidden
        self.w_out = np.zeros((prev, 3))   # zero init => identity deformation
        self.b_out = np.zeros(3)
        self.embeddings = 0.1 * rng.standard_normal((n_gauss, config.embed_dim))

    # -- parameter plumbing -------------------------------------------------
    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.w_out, self.b_out, self.embeddings]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        k = len(self.weights)
        self.weights = [p.copy() for p in params[:k]]
        self.biases = [p.copy() for p in params[k:2 * k]]
        self.w_out = params[2 * k].copy()
        self.b_out = params[2 * k + 1].copy()
        self.embeddings = params[2 * k + 2].copy()

    def output_layer_norm(self) -> float:
        return float(np.sqrt(np.sum(self.w_out ** 2) + np.sum(self.b_out ** 2)))

    # -- forward / backward -------------------------------------------------
    def freq_features(self, frequency: float) -> np.ndarray:
        f_lo, f_hi = self.band
        tau = (frequency - f_lo) / (f_hi - f_lo)
        feats = [tau]
        for k in range(N_FREQ_OCTAVES):
            w = math.pi * (2.0 ** k) * tau
            feats.append(math.sin(w))
            feats.append(math.cos(w))
        return np.array(feats)

    def forward(self, frequency: float):
        """Deltas (N, 3) and the cache needed for backward."""
        feats = self.freq_features(frequency)
        x = np.concatenate(
            [np.broadcast_to(feats, (self.n_gauss, feats.size)), self.embeddings], axis=1)
        activations = [x]
        h = x
        for w, b in zip(self.weights, self.biases):
            h = np.tanh(h @ w + b)
            activations.append(h)
        deltas = h @ self.w_out + self.b_out
        return deltas, activations

    def backward(self, activations, d_deltas: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients in the order of :meth:`parameters`."""
        grads_w = [np.zeros_like(w) for w in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]
        h_last = activations[-1]
        gw_out = h_last.T @ d_deltas
        gb_out = d_deltas.sum(axis=0)
        dh = d_deltas @ self.w_out.T
        for k in range(len(self.weights) - 1, -1, -1):
            act = activations[k + 1]
            dz = dh * (1.0 - act * act)
            grads_w[k] = activations[k].T @ dz
            grads_b[k] = dz.sum(axis=0)
            dh = dz @ self.weights[k].T
        g_emb = dh[:, -self.config.embed_dim:].copy()
        return [*grads_w, *grads_b, gw_out, gb_out, g_emb]


def fam_apply(net: FamNetwork, bank: AttributeBank, frequency: float) -> dict:
    """Constrained attribute views at one frequency.

    Opacity is untouched; the frequency-dependent set {R, |Gamma|, phase}
    receives the network deltas in raw space before reconstraining.
    """
    deltas, _ = net.forward(frequency)
    r_eff = bank.raw[:, 1] + deltas[:, 0]
    g_eff = bank.raw[:, 2] + deltas[:, 1]
    p_eff = bank.raw[:, 3] + deltas[:, 2]
    return {
        "alpha": bank.alpha,
        "roughness": 1.0 + softplus(r_eff),
        "gamma_mag": sigmoid(g_eff),
        "gamma_phase": wrap_phase(p_eff),
        "raw_effective": np.stack([bank.raw[:, 0], r_eff, g_eff, p_eff], axis=1),
    }


def fit_wideband(scene: Scene, bank: AttributeBank, net: FamNetwork,
                 observations: ObservationSet,
                 config: FitConfig = FitConfig()) -> tuple[FitReport, FamNetwork]:
    """Train only the modulation network against wideband observations.

    The base bank stays frozen; records are grouped by frequency index so
    each frequency carries its own deformed attribute row.
    """
    if len(observations) == 0:
        raise SceneValidationError("wideband fit needs at least one observation")
    freq_idx = np.array([rec.freq_index for rec in observations.records])
    unique_f = np.unique(freq_idx)
    group_of = {int(fi): g for g, fi in enumerate(unique_f)}
    groups = np.array([group_of[int(fi)] for fi in freq_idx], np.int32)
    problem = build_fit_problem(scene, observations, config.options, config.los, groups)
    n_groups = len(unique_f)
    n = bank.n
    frequencies = observations.grid.samples[unique_f]

    params = net.parameters()
    adam = Adam([p.shape for p in params])
    trace = np.zeros(config.iterations + 1)
    best_loss = math.inf
    best_params = [p.copy() for p in params]
    diverged = False
    it = 0

    def eval_loss_grads():
        alpha = np.empty((n_groups, n))
        rough = np.empty((n_groups, n))
        gmag = np.empty((n_groups, n))
        gphase = np.empty((n_groups, n))
        caches = []
        raw_eff = []
        for g, f in enumerate(frequencies):
            deltas, cache = net.forward(float(f))
            r_eff = bank.raw[:, 1] + deltas[:, 0]
            g_eff = bank.raw[:, 2] + deltas[:, 1]
            p_eff = bank.raw[:, 3] + deltas[:, 2]
            alpha[g] = sigmoid(bank.raw[:, 0])
            rough[g] = 1.0 + softplus(r_eff)
            gmag[g] = sigmoid(g_eff)
            gphase[g] = p_eff
            caches.append(cache)
            raw_eff.append((r_eff, g_eff))
        loss, _, gc = problem.loss_signal_grad(
            (np.ascontiguousarray(alpha), np.ascontiguousarray(rough),
             np.ascontiguousarray(gmag), np.ascontiguousarray(gphase)))
        pgrads = [np.zeros_like(p) for p in params]
        for g in range(n_groups):
            r_eff, g_eff = raw_eff[g]
            d_deltas = np.stack([
                gc[g, :, 1] * sigmoid(r_eff),
                gc[g, :, 2] * sigmoid(g_eff) * (1.0 - sigmoid(g_eff)),
                gc[g, :, 3],
            ], axis=1)
            for acc, piece in zip(pgrads, net.backward(caches[g], d_deltas)):
                acc += piece
        return loss, pgrads

    loss, pgrads = eval_loss_grads()
    for it in range(config.iterations):
        trace[it] = loss
        if not math.isfinite(loss):
            diverged = True
            break
        if loss < best_loss:
            best_loss = loss
            best_params = [p.copy() for p in net.parameters()]
        if loss <= config.loss_stop:
            break
        lr = cosine_lr(it, config.iterations, config.lr_start, config.lr_end)
        steps = adam.step(pgrads, lr)
        net.set_parameters([p - s for p, s in zip(net.parameters(), steps)])
        loss, pgrads = eval_loss_grads()
    else:
        it = config.iterations
    trace_end = it if it < config.iterations else config.iterations
    trace[trace_end] = loss
    if math.isfinite(loss) and loss < best_loss:
        best_loss = loss
        best_params = [p.copy() for p in net.parameters()]
    net.set_parameters(best_params)
    report = FitReport(
        loss_trace=trace[:trace_end + 1].copy(),
        final_loss=best_loss,
        initial_loss=float(trace[0]),
        converged=(not diverged) and best_loss <= trace[0],
        diverged=diverged,
        iterations_run=trace_end,
        seed=config.seed,
        final_attributes={"output_layer_norm": net.output_layer_norm()},
    )
    return report, net
