"""Property/oracle suites shared by the CLI and the acceptance tests.

Each check builds seeded random inputs, compares an implementation against
its independent oracle, and reports the worst deviation observed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scene import (ALPHA_CAP, MAHAL_CUTOFF, Antenna, FrequencyGrid,
                    ObservationRecord, ObservationSet, scene_arrays)
from .oracle import (SyntheticSceneSpec, analytic_cross_section,
                     brute_force_render, generate_scene,
                     monte_carlo_cross_section)
from .render import LosNlosParams, RenderOptions, render_received_signal
from .tracing import build_bvh
from .geometry import projected_cross_section
from .inverse import AttributeBank, build_fit_problem, gradient_check


@dataclass
class CheckResult:
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)


def _random_observations(scene, rng, n_obs, with_los=True):
    grid = FrequencyGrid.single(float(rng.uniform(1.0e9, 3.0e9)))
    records = []
    for _ in range(n_obs):
        tx = Antenna("tx", rng.uniform(-3.0, 3.0, 3) + np.array([0.0, 0.0, 2.2]),
                     float(rng.uniform(1.0, 20.0)), float(rng.uniform(1.0, 3.0)))
        rx = Antenna("rx", rng.uniform(-3.0, 3.0, 3) - np.array([0.0, 0.0, 2.2]))
        records.append(ObservationRecord(tx, rx, 0, rssi_db=float(rng.uniform(-90, -40))))
    los = LosNlosParams(v_vis=1.0, s_tx_strength=float(rng.uniform(0.3, 1.5)),
                        c_dis=float(rng.uniform(0.5, 1.5))) if with_los else None
    return ObservationSet(tuple(records), grid), los


def check_gradients(seed: int = 0, n_scenes: int = 20, verbose: bool = False) -> CheckResult:
    """Analytic gradients vs central finite differences on random scenes."""
    rng = np.random.default_rng(seed)
    worst_rel = 0.0
    worst_abs = 0.0
    n_params = 0
    t0 = time.time()
    for s in range(n_scenes):
        count = int(rng.integers(8, 51))
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=seed + 1000 + s,
                                                  count=count))
        obs, los = _random_observations(scene, rng, int(rng.integers(2, 9)),
                                        with_los=bool(rng.integers(0, 2)))
        problem = build_fit_problem(scene, obs, RenderOptions(), los)
        bank = AttributeBank.from_scene(scene)
        bank.raw += rng.uniform(-0.25, 0.25, bank.raw.shape)
        res = gradient_check(problem, bank)
        worst_rel = max(worst_rel, res["max_rel_err"])
        worst_abs = max(worst_abs, res["max_abs_err_near_zero"])
        n_params += res["n_params"]
        if res["failures"]:
            return CheckResult(False, f"scene {s}: {len(res['failures'])} partials off "
                                      f"(max rel {res['max_rel_err']:.2e})")
        if verbose:
            print(f"  scene {s}: {res['n_params']} partials, max rel {res['max_rel_err']:.2e}")
    dt = time.time() - t0
    return CheckResult(True, f"{n_scenes} scenes / {n_params} partials, "
                             f"max rel {worst_rel:.2e}, {dt:.1f}s",
                       {"max_rel": worst_rel, "max_abs": worst_abs, "seconds": dt})


def check_visibility(seed: int = 0, n_scenes: int = 50, n_queries: int = 1000,
                     verbose: bool = False) -> CheckResult:
    """BVH hit chains and transmittance equal brute force exactly."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in range(n_scenes):
        count = int(rng.integers(5, 501))
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=seed + 2000 + s,
                                                  count=count))
        arrays = scene_arrays(scene)
        bvh = build_bvh(arrays)
        src = rng.uniform(-2.0, 2.0, (n_queries, 3))
        dst = rng.uniform(-2.0, 2.0, (n_queries, 3))
        span = np.linalg.norm(dst - src, axis=1)
        keep = span > 1e-6
        src, dst, span = src[keep], dst[keep], span[keep]
        dirs = (dst - src) / span[:, None]
        eps = 1e-6 * span
        t_lo, t_hi = eps, span - eps
        exclude = np.full(src.shape[0], -1, np.int32)
        args = (arrays.mu, arrays.icov6, arrays.alpha, bvh.arrays(), src, dirs,
                t_lo, t_hi, exclude, ALPHA_CAP, MAHAL_CUTOFF ** 2)
        off_a, idx_a, t_a, _, al_a = kernels.segment_hits(*args)
        off_b, idx_b, t_b, _, al_b = kernels.segment_hits_brute(*args)
        if not (np.array_equal(off_a, off_b) and np.array_equal(idx_a, idx_b)):
            return CheckResult(False, f"scene {s}: hit sets differ")
        for q in range(src.shape[0]):
            lo, hi = int(off_a[q]), int(off_a[q + 1])
            va = float(np.prod(1.0 - al_a[lo:hi])) if hi > lo else 1.0
            vb = float(np.prod(1.0 - al_b[lo:hi])) if hi > lo else 1.0
            worst = max(worst, abs(va - vb))
        if worst > 1e-12:
            return CheckResult(False, f"scene {s}: V mismatch {worst:.2e}")
        if verbose and s % 10 == 0:
            print(f"  scene {s}: {count} gaussians, {src.shape[0]} segments ok")
    return CheckResult(True, f"{n_scenes} scenes x {n_queries} segments, max |dV| {worst:.2e}",
                       {"max_dv": worst})


def check_cross_section(seed: int = 0, cases: int = 100, mc_samples: int = 1_000_000,
                        verbose: bool = False) -> CheckResult:
    """Closed form vs projected-ellipse analytic area and Monte Carlo."""
    rng = np.random.default_rng(seed)
    from .scene import RFGaussian

    worst_analytic = 0.0
    worst_mc = 0.0
    for c in range(cases):
        scale = np.exp(rng.uniform(np.log(0.05), np.log(1.5), size=3))
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        g = RFGaussian(mu=np.zeros(3), scale=scale, rotation=q, normal=np.array([0.0, 0.0, 1.0]))
        a_formula = projected_cross_section(g, n)
        a_exact = analytic_cross_section(g, n)
        rel = abs(a_formula - a_exact) / a_exact
        worst_analytic = max(worst_analytic, rel)
        a_mc, stderr = monte_carlo_cross_section(g, n, samples=mc_samples, seed=seed + c)
        rel_mc = abs(a_formula - a_mc) / a_formula
        worst_mc = max(worst_mc, rel_mc)
        if verbose and c % 20 == 0:
            print(f"  case {c}: area {a_formula:.5f}, analytic rel {rel:.2e}, mc rel {rel_mc:.3%}")
    passed = worst_analytic < 1e-9 and worst_mc < 0.01
    return CheckResult(passed, f"{cases} cases: analytic rel {worst_analytic:.2e}, "
                               f"MC rel {worst_mc:.3%}",
                       {"analytic": worst_analytic, "mc": worst_mc})


def check_blend(seed: int = 0, n_scenes: int = 50, verbose: bool = False) -> CheckResult:
    """Exact-direction renderer equals the brute-force oracle to 1e-12."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    options = RenderOptions(exact_direction=True)
    for s in range(n_scenes):
        count = int(rng.integers(5, 201))
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=seed + 3000 + s,
                                                  count=count))
        bvh = build_bvh(scene)
        tx = Antenna("tx", rng.uniform(2.0, 4.0, 3), float(rng.uniform(1, 10)),
                     float(rng.uniform(1, 3)))
        rx = Antenna("rx", -rng.uniform(2.0, 4.0, 3))
        f = float(rng.uniform(1e9, 6e9))
        los = LosNlosParams(s_tx_strength=0.8) if rng.integers(0, 2) else None
        got = render_received_signal(scene, bvh, tx, rx, FrequencyGrid.single(f),
                                     los=los, options=options).values[0]
        want = brute_force_render(scene, tx, rx, f, los=los)
        rel = abs(got - want) / max(abs(want), 1e-30)
        worst = max(worst, rel)
        if rel > 1e-12:
            return CheckResult(False, f"scene {s}: rel dev {rel:.2e}")
        if verbose and s % 10 == 0:
            print(f"  scene {s}: {count} gaussians, rel dev {rel:.2e}")
    return CheckResult(True, f"{n_scenes} scenes, worst rel dev {worst:.2e}",
                       {"worst": worst})
