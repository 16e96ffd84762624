"""Inverse rendering: recover per-Gaussian RF attributes from RSSI data.

Parameters live in unconstrained space (alpha = sigmoid(a_raw),
R = 1 + softplus(r_raw), |Gamma| = sigmoid(g_raw), phase = p_raw wrapped on
readout), so no optimizer step can leave the valid ranges. Gradients are a
hand-derived reverse sweep over the render graph; central finite
differences are the correctness authority in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .scene import (ALPHA_CAP, Antenna, ComplexSignal, ObservationRecord,
                    ObservationSet, Scene, SceneValidationError, scene_arrays,
                    wrap_phase)
from .render import (LinkConfig, LosNlosParams, RenderGraph, RenderOptions,
                     build_render_graph, make_records)
from .tracing import build_bvh

PARAM_NAMES = ("alpha", "roughness", "gamma_mag", "gamma_phase")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)


def softplus_inv(y):
    y = np.maximum(np.asarray(y, dtype=np.float64), 1e-12)
    return y + np.log1p(-np.exp(-y))


@dataclass(eq=False)
class AttributeBank:
    """Unconstrained per-Gaussian parameters, shape (N, 4).

    Column order: a_raw, r_raw, g_raw, p_raw.
    """

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1, 4).copy()

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @staticmethod
    def default_init(n: int) -> "AttributeBank":
        raw = np.zeros((n, 4))
        raw[:, 0] = logit(0.5)
        raw[:, 1] = softplus_inv(2.0 - 1.0)
        raw[:, 2] = logit(0.5)
        return AttributeBank(raw)

    @staticmethod
    def from_scene(scene: Scene) -> "AttributeBank":
        arrays = scene_arrays(scene)
        raw = np.stack([
            logit(arrays.alpha),
            softplus_inv(arrays.roughness - 1.0),
            logit(arrays.gamma_mag),
            arrays.gamma_phase.copy(),
        ], axis=1)
        return AttributeBank(raw)

    @property
    def alpha(self) -> np.ndarray:
        return sigmoid(self.raw[:, 0])

    @property
    def roughness(self) -> np.ndarray:
        return 1.0 + softplus(self.raw[:, 1])

    @property
    def gamma_mag(self) -> np.ndarray:
        return sigmoid(self.raw[:, 2])

    @property
    def gamma_phase(self) -> np.ndarray:
        return wrap_phase(self.raw[:, 3])

    def constrained_groups(self):
        """(alpha, roughness, gamma_mag, gamma_phase) shaped (1, N)."""
        return (np.ascontiguousarray(self.alpha[None, :]),
                np.ascontiguousarray(self.roughness[None, :]),
                np.ascontiguousarray(self.gamma_mag[None, :]),
                np.ascontiguousarray(self.raw[:, 3][None, :]))

    def apply_to_scene(self, scene: Scene) -> Scene:
        return scene.with_attribute_arrays(self.alpha, self.roughness,
                                           self.gamma_mag, self.gamma_phase)

    def copy(self) -> "AttributeBank":
        return AttributeBank(self.raw.copy())


def rssi_db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def observed_linear_power(record: ObservationRecord, units: str) -> float:
    if units == "db":
        if record.rssi_db is None:
            raise SceneValidationError("record holds no rssi_db but units tag is 'db'")
        return float(rssi_db_to_linear(record.rssi_db))
    if units == "linear":
        if record.rssi_db is None:
            raise SceneValidationError("record holds no linear power value")
        return float(record.rssi_db)
    raise SceneValidationError(f"unit tag mismatch: {units!r}")


def rf_loss(predicted, record: ObservationRecord, units: str = "db") -> float:
    """Squared power residual (|S|^2 - rssi_linear)^2 for one record.

    Depends on |S|^2 only, so any global phase rotation of S leaves the
    loss unchanged.
    """
    target = observed_linear_power(record, units)
    if isinstance(predicted, ComplexSignal):
        s = predicted.values[record.freq_index]
    else:
        s = complex(predicted)
    power = (s.real * s.real + s.imag * s.imag)
    return (power - target) ** 2


def total_rf_loss(predicted: ComplexSignal, observations: ObservationSet) -> float:
    return float(sum(rf_loss(predicted, rec, observations.units) for rec in observations.records))


# ---------------------------------------------------------------------------
# Fit problem: graph + records + chain rule raw<->constrained


@dataclass(eq=False)
class FitProblem:
    graph: RenderGraph
    records: tuple
    n_gauss: int
    n_groups: int = 1

    def loss_signal_grad(self, constrained):
        cfg, lam, stx, grp, tgt = self.records
        alpha, rough, gmag, gphase = constrained
        return kernels.graph_loss_grad(cfg, lam, stx, grp, tgt, self.graph.kernel_arrays,
                                       alpha, rough, gmag, gphase, ALPHA_CAP,
                                       self.n_groups, self.n_gauss)

    def signal(self, constrained):
        cfg, lam, stx, grp, _ = self.records
        alpha, rough, gmag, gphase = constrained
        return kernels.graph_forward(cfg, lam, stx, grp, self.graph.kernel_arrays,
                                     alpha, rough, gmag, gphase, ALPHA_CAP)


def build_fit_problem(scene: Scene, observations: ObservationSet,
                      options: RenderOptions = RenderOptions(),
                      los: Optional[LosNlosParams] = None,
                      groups=None) -> FitProblem:
    if len(observations) == 0:
        raise SceneValidationError("at least one observation is required")
    if not scene.geometry_frozen:
        raise SceneValidationError("inverse rendering requires frozen geometry")
    arrays = scene_arrays(scene)
    bvh = build_bvh(arrays)
    links: list[LinkConfig] = []
    link_key: dict[tuple, int] = {}
    cfg_ids = np.zeros(len(observations), np.int32)
    for i, rec in enumerate(observations.records):
        key = (id(rec.tx), id(rec.rx))
        if key not in link_key:
            link_key[key] = len(links)
            links.append(LinkConfig(rec.tx, rec.rx, los))
        cfg_ids[i] = link_key[key]
    graph = build_render_graph(arrays, bvh, links, options)
    freqs = observations.grid.samples[[rec.freq_index for rec in observations.records]]
    targets = np.array([observed_linear_power(rec, observations.units)
                        for rec in observations.records])
    grp = np.zeros(len(observations), np.int32) if groups is None else np.asarray(groups, np.int32)
    records = make_records(cfg_ids, freqs, None, grp, targets)
    n_groups = int(grp.max()) + 1 if grp.size else 1
    return FitProblem(graph, records, len(scene), n_groups)


def chain_to_raw(bank: AttributeBank, grad_constrained: np.ndarray) -> np.ndarray:
    """d loss / d raw from constrained-space gradients, shape (N, 4)."""
    g = grad_constrained.reshape(bank.n, 4)
    a = sigmoid(bank.raw[:, 0])
    gm = sigmoid(bank.raw[:, 2])
    out = np.empty_like(g)
    out[:, 0] = g[:, 0] * a * (1.0 - a)
    out[:, 1] = g[:, 1] * sigmoid(bank.raw[:, 1])   # softplus'
    out[:, 2] = g[:, 2] * gm * (1.0 - gm)
    out[:, 3] = g[:, 3]
    return out


def loss_and_raw_gradient(problem: FitProblem, bank: AttributeBank):
    loss, signal, grads = problem.loss_signal_grad(bank.constrained_groups())
    return loss, signal, chain_to_raw(bank, grads[0])


def gradients(scene: Scene, bank: AttributeBank, observations: ObservationSet,
              options: RenderOptions = RenderOptions(),
              los: Optional[LosNlosParams] = None) -> np.ndarray:
    """Analytic gradient of the total loss w.r.t. the raw parameters."""
    problem = build_fit_problem(scene, observations, options, los)
    loss, signal, grad = loss_and_raw_gradient(problem, bank)
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))
        i, j = bad[0]
        raise FloatingPointError(
            f"non-finite gradient for Gaussian {i}, parameter {PARAM_NAMES[j]}")
    return grad


def gradient_check(problem: FitProblem, bank: AttributeBank,
                   rel_tol: float = 1e-4, abs_tol: float = 1e-10,
                   zero_cut: float = 1e-12) -> dict:
    """Central-difference verification of every analytic partial.

    Partials below the FD roundoff floor (eps * loss / (2 h rel_tol), with a
    10x safety margin) cannot meet the relative tolerance at double
    precision for any correct gradient, so they are compared absolutely
    (tol ``abs_tol``) like the sub-``zero_cut`` ones.
    """
    loss0, _, analytic = loss_and_raw_gradient(problem, bank)
    targets = problem.records[4]

    def loss_at(raw):
        power = np.abs(problem.signal(AttributeBank(raw).constrained_groups())) ** 2
        res = power - targets
        return float(np.sum(res * res))

    eps = np.finfo(np.float64).eps
    n = bank.n
    max_rel = 0.0
    max_abs = 0.0
    failures = []
    for i in range(n):
        for j in range(4):
            h = 1e-4 * max(1.0, abs(bank.raw[i, j]))
            plus = bank.raw.copy()
            plus[i, j] += h
            minus = bank.raw.copy()
            minus[i, j] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h)
            a = analytic[i, j]
            fd_floor = 10.0 * eps * loss0 / (2.0 * h * rel_tol)
            cut = max(zero_cut, fd_floor)
            if abs(a) < cut and abs(fd) < cut:
                max_abs = max(max_abs, abs(a - fd))
                if abs(a - fd) > abs_tol:
                    failures.append((i, PARAM_NAMES[j], a, fd))
                continue
            rel = abs(a - fd) / max(abs(a), abs(fd))
            max_rel = max(max_rel, rel)
            if rel > rel_tol:
                failures.append((i, PARAM_NAMES[j], a, fd))
    return {
        "n_params": 4 * n,
        "max_rel_err": max_rel,
        "max_abs_err_near_zero": max_abs,
        "failures": failures,
        "passed": not failures,
    }


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class FitConfig:
    iterations: int = 2000
    lr_start: float = 0.01
    lr_end: float = 0.001
    seed: int = 0
    optimizer: str = "adam"              # "adam" | "adam-monotone" | "adam-gn" | "gn"
    optimize: tuple = PARAM_NAMES        # subset of attribute names
    los: Optional[LosNlosParams] = None
    options: RenderOptions = field(default_factory=RenderOptions)
    init: Optional[AttributeBank] = None
    loss_stop: float = 0.0               # early stop threshold
    gn_budget: int = 120                 # evaluations reserved for the GN tail


@dataclass(eq=False)
class FitReport:
    loss_trace: np.ndarray
    final_loss: float
    initial_loss: float
    converged: bool
    diverged: bool
    iterations_run: int
    seed: int
    final_attributes: dict
    gradient_check: Optional[dict] = None

    def improvement_db(self) -> float:
        if self.final_loss <= 0:
            return math.inf
        return 10.0 * math.log10(self.initial_loss / self.final_loss)


class Adam:
    """Deterministic Adam over a list of parameter arrays."""

    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = []
        for k, g in enumerate(grads):
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            out.append(lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def cosine_lr(it: int, total: int, lr_start: float, lr_end: float) -> float:
    if total <= 1:
        return lr_start
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * it / (total - 1)))


def _param_mask(optimize) -> np.ndarray:
    mask = np.zeros(4)
    for name in optimize:
        if name not in PARAM_NAMES:
            raise SceneValidationError(f"unknown attribute {name!r}")
        mask[PARAM_NAMES.index(name)] = 1.0
    return mask


def fit(scene: Scene, observations: ObservationSet,
        config: FitConfig = FitConfig()) -> tuple[FitReport, AttributeBank]:
    """Adam fit of the RF attributes; deterministic given the seed.

    The optimizer objective is the squared power residual normalized by the
    summed observed power squared, which keeps gradient magnitudes in
    Adam's working range regardless of absolute signal level (the minimizer
    and loss ratios are unchanged). Returns the bank at the best loss seen,
    so the final loss never exceeds the initial one. With
    optimizer="adam-monotone" each step is accepted only if it does not
    increase the loss (backtracking halving).
    """
    problem = build_fit_problem(scene, observations, config.options, config.los)
    bank = (config.init.copy() if config.init is not None
            else AttributeBank.from_scene(scene))
    if bank.n != len(scene):
        raise SceneValidationError("init bank size does not match the scene")
    mask = _param_mask(config.optimize)
    adam = Adam([bank.raw.shape])
    best_loss = math.inf
    best_raw = bank.raw.copy()
    diverged = False
    it = 0
    monotone = config.optimizer == "adam-monotone"
    if config.optimizer not in ("adam", "adam-monotone", "adam-gn", "gn"):
        raise SceneValidationError(f"unknown optimizer {config.optimizer!r}")
    gn_tail = 0
    if config.optimizer == "adam-gn":
        gn_tail = min(config.gn_budget, config.iterations)
    elif config.optimizer == "gn":
        gn_tail = config.iterations
    adam_iters = config.iterations - gn_tail
    trace = np.zeros(config.iterations + 1)
    targets = problem.records[4]
    scale = 1.0 / max(float(np.sum(targets * targets)), 1e-300)

    def eval_scaled(b):
        raw_loss, signal, grad = loss_and_raw_gradient(problem, b)
        return raw_loss * scale, signal, grad * scale

    loss, _, grad = eval_scaled(bank)
    for it in range(adam_iters):
        trace[it] = loss
        if not math.isfinite(loss):
            diverged = True
            break
        if loss < best_loss:
            best_loss = loss
            best_raw = bank.raw.copy()
        if loss <= config.loss_stop:
            break
        lr = cosine_lr(it, adam_iters, config.lr_start, config.lr_end)
        step = adam.step([grad * mask[None, :]], lr)[0]
        if monotone:
            accepted = False
            backtrack = 1.0
            for _ in range(30):
                cand = AttributeBank(bank.raw - backtrack * step)
                cand_loss, _, cand_grad = eval_scaled(cand)
                if math.isfinite(cand_loss) and cand_loss <= loss:
                    bank, loss, grad = cand, cand_loss, cand_grad
                    accepted = True
                    break
                backtrack *= 0.5
            if not accepted:
                break
        else:
            bank = AttributeBank(bank.raw - step)
            loss, _, grad = eval_scaled(bank)
    else:
        it = adam_iters
    trace_end = it if it < adam_iters else adam_iters
    trace[trace_end] = loss
    if math.isfinite(loss) and loss < best_loss:
        best_loss = loss
        best_raw = bank.raw.copy()

    if gn_tail > 0 and not diverged and best_loss > config.loss_stop:
        # damped Gauss-Newton tail: fast quadratic convergence once Adam has
        # found the basin; works on the full parameter set
        free = None
        if not np.all(mask == 1.0):
            free = np.nonzero(np.tile(mask.astype(bool), bank.n))[0]
        refined, gn_loss, used, gn_trace = gauss_newton_refine(
            problem, AttributeBank(best_raw), gn_tail, scale, free)
        for value in gn_trace:
            trace_end += 1
            trace[trace_end] = min(value, trace[trace_end - 1])
        if math.isfinite(gn_loss) and gn_loss < best_loss:
            best_loss = gn_loss
            best_raw = refined.raw.copy()
    bank = AttributeBank(best_raw)
    report = FitReport(
        loss_trace=trace[:trace_end + 1].copy(),
        final_loss=best_loss,
        initial_loss=float(trace[0]),
        converged=(not diverged) and best_loss <= trace[0],
        diverged=diverged,
        iterations_run=trace_end,
        seed=config.seed,
        final_attributes={
            "alpha": bank.alpha.tolist(),
            "roughness": bank.roughness.tolist(),
            "gamma_mag": bank.gamma_mag.tolist(),
            "gamma_phase": bank.gamma_phase.tolist(),
        },
    )
    return report, bank


def power_jacobian(problem: FitProblem, bank: AttributeBank):
    """Predicted powers P (R,) and the Jacobian dP/draw (R, N*4).

    Reuses the loss-gradient kernel: with per-record groups and targets
    P - 1/2 the residual is 1/2, so each group's gradient equals
    2 Re(conj(S) dS/dtheta) = dP/dtheta exactly.
    """
    cfg, lam, stx, _, _ = problem.records
    n_rec = cfg.size
    groups = np.arange(n_rec, dtype=np.int32)
    constrained = bank.constrained_groups()
    tiled = tuple(np.ascontiguousarray(np.repeat(c, n_rec, axis=0)) for c in constrained)
    signal = kernels.graph_forward(cfg, lam, stx, groups, problem.graph.kernel_arrays,
                                   *tiled, ALPHA_CAP)
    power = np.abs(signal) ** 2
    shifted = (cfg, lam, stx, groups, power - 0.5)
    _, _, grads = kernels.graph_loss_grad(*shifted, problem.graph.kernel_arrays,
                                          *tiled, ALPHA_CAP, n_rec, problem.n_gauss)
    jac = np.stack([chain_to_raw(bank, grads[i]).ravel() for i in range(n_rec)])
    return power, jac


def gauss_newton_refine(problem: FitProblem, bank: AttributeBank, budget: int,
                        scale: float, free=None) -> tuple[AttributeBank, float, int, list]:
    """Damped Gauss-Newton on the power residuals; returns the refined bank,
    its scaled loss, evaluations consumed, and the loss trace. ``free``
    optionally restricts the step to a subset of raveled raw indices."""
    targets = problem.records[4]
    lam_damp = 1e-3
    raw = bank.raw.copy()
    power, jac = power_jacobian(problem, AttributeBank(raw))
    if free is not None:
        jac = jac[:, free]
    residual = power - targets
    loss = float(np.sum(residual * residual)) * scale
    used = 0
    trace = []
    n_par = jac.shape[1]
    eye = np.eye(n_par)
    while used < budget:
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        ok = False
        for _ in range(8):
            if used >= budget:
                break
            damp = lam_damp * (np.diag(np.diag(jtj)) + 1e-12 * eye)
            try:
                delta = np.linalg.solve(jtj + damp, jtr)
            except np.linalg.LinAlgError:
                lam_damp *= 10.0
                continue
            flat = raw.ravel().copy()
            if free is None:
                flat -= delta
            else:
                flat[free] -= delta
            cand = AttributeBank(flat.reshape(-1, 4))
            p_new, j_new = power_jacobian(problem, cand)
            if free is not None:
                j_new = j_new[:, free]
            used += 1
            r_new = p_new - targets
            loss_new = float(np.sum(r_new * r_new)) * scale
            trace.append(min(loss, loss_new))
            if math.isfinite(loss_new) and loss_new < loss:
                raw = cand.raw
                power, jac, residual, loss = p_new, j_new, r_new, loss_new
                lam_damp = max(lam_damp / 3.0, 1e-12)
                ok = True
                break
            lam_damp *= 4.0
        if not ok:
            break
        if loss <= 0.0:
            break
    return AttributeBank(raw), loss, used, trace


def contribution_weights(problem: FitProblem, bank: AttributeBank) -> np.ndarray:
    """Total blended contribution weight per Gaussian: sum over records of
    a_l * T_l * V_l. Gaussians below ~1e-3 are effectively unobserved and
    cannot be recovered."""
    (cfg_node_ptr, _, _, _, _, _, node_gauss, _, _, _, _, node_ownden,
     occt_ptr, occt_idx, occt_den, occr_ptr, occr_idx, occr_den) = problem.graph.kernel_arrays
    alpha = bank.alpha
    weights = np.zeros(problem.n_gauss)
    cfg, _, _, _, _ = problem.records
    counts = np.bincount(cfg, minlength=problem.graph.n_configs)
    for c in range(problem.graph.n_configs):
        if counts[c] == 0:
            continue
        for nidx in range(int(cfg_node_ptr[c]), int(cfg_node_ptr[c + 1])):
            l = int(node_gauss[nidx])
            v = 1.0
            for k in range(int(occt_ptr[nidx]), int(occt_ptr[nidx + 1])):
                v *= 1.0 - min(alpha[occt_idx[k]] * occt_den[k], ALPHA_CAP)
            t = 1.0
            for k in range(int(occr_ptr[nidx]), int(occr_ptr[nidx + 1])):
                t *= 1.0 - min(alpha[occr_idx[k]] * occr_den[k], ALPHA_CAP)
            a = min(alpha[l] * node_ownden[nidx], ALPHA_CAP)
            weights[l] += counts[c] * a * v * t
    return weights
