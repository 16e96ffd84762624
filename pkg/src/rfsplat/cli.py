"""Command-line entry points: rcs sweeps, radio maps, fitting, oracle checks,
and the HTTP service.

Exit codes: 0 success, 1 failed check, 2 usage/input errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as rfio
from .scene import (Antenna, FrequencyGrid, Scene, SceneValidationError,
                    validate_scene)
from .render import (LosNlosParams, RenderOptions, RadioMap,
                     render_radio_map, render_rcs_sweep)
from .tracing import build_bvh


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _load_scene_file(path):
    if not Path(path).exists():
        raise rfio.SceneFormatError(f"scene file not found: {path}")
    scene, grid, antennas, los, scene_id = rfio.load_scene(path)
    problems = validate_scene(scene)
    if problems:
        raise rfio.SceneFormatError(
            f"invalid scene: {problems[0].field} on gaussian {problems[0].index}: "
            f"{problems[0].message}")
    return scene, grid, antennas, los, scene_id


def _parse_vec3(text: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"expected x,y,z got {text!r}")
    return np.array([float(p) for p in parts])


def _first_antenna(antennas, role: str):
    for a in antennas:
        if a.role == role:
            return a
    return None


def cmd_rcs(args) -> int:
    try:
        scene, grid, antennas, _, _ = _load_scene_file(args.scene)
        if args.band:
            if grid is None:
                raise rfio.SceneFormatError("--band requires a frequency_grid in the scene file")
            freq_grid = grid
        else:
            freq_grid = FrequencyGrid.single(args.freq)
        if args.range <= 0:
            raise SceneValidationError("--range must be positive")
        radar = Antenna("tx", [args.range, 0.0, args.height],
                        args.power, args.gain)
        angles = np.arange(args.start, args.stop + 1e-9, args.step_deg)
        db = render_rcs_sweep(scene, radar, angles, freq_grid)
        rows = []
        for i, ang in enumerate(angles):
            for j, f in enumerate(freq_grid.samples):
                rows.append((float(ang), float(f), float(db[i, j])))
        rfio.write_csv(args.out, ["angle_deg", "freq_hz", "rssi_db"], rows)
        print(f"wrote {len(rows)} rows to {args.out}")
        return 0
    except (rfio.SceneFormatError, SceneValidationError, ValueError) as exc:
        return _fail(str(exc))


def cmd_map(args) -> int:
    try:
        scene, grid, antennas, los, _ = _load_scene_file(args.scene)
        try:
            h, w = (int(v) for v in args.grid.lower().split("x"))
        except Exception:
            raise ValueError(f"--grid must look like 64x64, got {args.grid!r}")
        if args.tx is not None:
            tx = Antenna("tx", _parse_vec3(args.tx), args.power, args.gain)
        else:
            tx = _first_antenna(antennas, "tx")
            if tx is None:
                raise SceneValidationError("scene file has no Tx antenna; pass --tx x,y,z")
        if not scene.bounds.contains(tx.position):
            raise SceneValidationError("Tx position outside scene bounds")
        bvh = build_bvh(scene)
        rmap = render_radio_map(scene, bvh, tx, h, w, args.freq,
                                los=los if args.los else None, height=args.height)
        rows = []
        for iy in range(h):
            for ix in range(w):
                rows.append((float(rmap.xs[ix]), float(rmap.ys[iy]),
                             float(rmap.cells_db[iy, ix])))
        rfio.write_csv(args.out, ["x_m", "y_m", "rssi_db"], rows)
        rfio.write_binary_grid(str(args.out) + ".grid", {"rssi_db": rmap.cells_db})
        print(f"wrote {h * w} cells to {args.out}")
        return 0
    except (rfio.SceneFormatError, SceneValidationError, ValueError) as exc:
        return _fail(str(exc))


def cmd_fit(args) -> int:
    from .fam import FamNetwork, fit_wideband
    from .inverse import AttributeBank, FitConfig, fit

    try:
        scene, grid, antennas, los, scene_id = _load_scene_file(args.scene)
        if not Path(args.data).exists():
            raise rfio.SceneFormatError(f"dataset file not found: {args.data}")
        observations = rfio.load_dataset(args.data, antennas)
        if observations.scene_id != scene_id:
            raise rfio.SceneFormatError(
                f"dataset references scene {observations.scene_id!r}, "
                f"file holds {scene_id!r}")
        train = observations.subset("train")
        if len(train) == 0:
            train = observations
        config = FitConfig(iterations=args.iters, seed=args.seed, los=los,
                           optimizer=args.optimizer)
        if args.wideband:
            bank = AttributeBank.from_scene(scene)
            f = observations.grid.samples
            net = FamNetwork(len(scene), (float(f[0]), float(f[-1] + 1.0)))
            report, net = fit_wideband(scene, bank, net, train, config)
        else:
            report, bank = fit(scene, train, config)
            if args.save_scene:
                fitted = bank.apply_to_scene(scene)
                rfio.save_scene(args.save_scene, fitted, grid, antennas, los, scene_id)
        rfio.save_fit_report(args.out, report)
        print(f"fit: initial loss {report.initial_loss:.6g}, final {report.final_loss:.6g}, "
              f"converged={report.converged}")
        return 0
    except (rfio.SceneFormatError, SceneValidationError, ValueError) as exc:
        return _fail(str(exc))


def cmd_oracle(args) -> int:
    from . import checks

    runners = {
        "gradients": checks.check_gradients,
        "blend": checks.check_blend,
        "cross-section": checks.check_cross_section,
        "visibility": checks.check_visibility,
    }
    if args.check not in runners:
        return _fail(f"unknown check {args.check!r}; choose from {sorted(runners)}")
    result = runners[args.check](seed=args.seed, verbose=True)
    print(f"{args.check}: {'PASS' if result.passed else 'FAIL'} ({result.summary})")
    return 0 if result.passed else 1


def cmd_serve(args) -> int:
    try:
        import uvicorn

        from .service import create_app
    except ImportError as exc:
        return _fail(f"service dependencies missing: {exc}")
    app = create_app(scene_dir=args.scene_dir)
    port = args.port or int(os.environ.get("RFSPLAT_PORT", "8000"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfsplat",
                                     description="RF rendering over Gaussian scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rcs", help="monostatic RCS sweep to CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--range", type=float, default=3.0)
    p.add_argument("--height", type=float, default=0.0)
    p.add_argument("--freq", type=float, default=2.4e9)
    p.add_argument("--band", action="store_true",
                   help="sweep every frequency of the scene file's grid")
    p.add_argument("--step-deg", type=float, default=1.0)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=359.0)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rcs)

    p = sub.add_parser("map", help="RSSI radio map to CSV + binary grid")
    p.add_argument("--scene", required=True)
    p.add_argument("--tx", help="x,y,z (defaults to the scene file's Tx preset)")
    p.add_argument("--grid", default="64x64")
    p.add_argument("--freq", type=float, default=2.4e9)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--los", action="store_true", default=True)
    p.add_argument("--no-los", dest="los", action="store_false")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("fit", help="inverse-render RF attributes from a dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", default="adam",
                   choices=["adam", "adam-monotone", "adam-gn", "gn"])
    p.add_argument("--wideband", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--save-scene")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("oracle", help="run a property/oracle suite")
    p.add_argument("--check", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.add_argument("--scene-dir", default=os.environ.get("RFSPLAT_SCENE_DIR"))
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
