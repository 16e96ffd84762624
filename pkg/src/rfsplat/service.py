"""HTTP API for interactive scene exploration.

Stateless beyond an in-memory scene registry; every render is a pure
function of the stored scene plus query parameters, so repeated GETs are
byte-identical. Edits (antenna moves) are optimistic-concurrency POSTs
carrying the revision they were based on; a stale revision gets 409.
"""
from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, Response
from pydantic import BaseModel, Field

from . import io as rfio
from .render import RenderOptions, export_attribute_maps, render_radio_map, render_rcs_sweep
from .scene import (Antenna, DegeneratePlacementError, FrequencyGrid, Scene,
                    SceneValidationError, validate_scene)
from .tracing import build_bvh

MAX_GRID = 256  # per-request render budget: reject grids beyond 256x256


class SceneEntry:
    def __init__(self, scene: Scene, grid, antennas, los, scene_id: str):
        self.scene = scene
        self.grid = grid
        self.antennas = list(antennas)
        self.los = los
        self.scene_id = scene_id
        self.revision = 0
        self.lock = threading.Lock()
        self.bvh = build_bvh(scene)


class AntennaEdit(BaseModel):
    role: str
    position: list[float] = Field(min_length=3, max_length=3)
    power: float = 1.0
    gain: float = 1.0
    pattern: str = "omni"
    boresight: Optional[list[float]] = None
    index: Optional[int] = None          # move an existing antenna
    revision: int


def _antenna_summary(a: Antenna) -> dict:
    out = {"role": a.role, "position": [float(v) for v in a.position],
           "power_watts": a.power_watts, "gain": a.gain, "pattern": a.pattern}
    if a.pattern == "horn":
        out["boresight"] = [float(v) for v in a.boresight]
    return out


def create_app(scene_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="rfsplat", version="0.1.0")
    registry: dict[str, SceneEntry] = {}
    counter = {"next": 1}
    registry_lock = threading.Lock()

    if scene_dir:
        for path in sorted(Path(scene_dir).glob("*.json")):
            try:
                scene, grid, antennas, los, scene_id = rfio.load_scene(path)
            except rfio.SceneFormatError:
                continue
            registry[path.stem] = SceneEntry(scene, grid, antennas, los, scene_id)

    def entry_or_404(scene_key: str) -> SceneEntry:
        entry = registry.get(scene_key)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_key!r}")
        return entry

    def canonical(payload: dict) -> Response:
        return Response(content=rfio.dumps_canonical(payload),
                        media_type="application/json")

    @app.post("/scene")
    def post_scene(doc: dict = Body(...)):
        try:
            scene, grid, antennas, los, scene_id = rfio.parse_scene_document(doc)
        except (rfio.SceneFormatError, SceneValidationError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        problems = validate_scene(scene)
        if problems:
            raise HTTPException(status_code=422, detail=[
                {"index": p.index, "field": p.field, "message": p.message}
                for p in problems])
        with registry_lock:
            key = f"s{counter['next']}"
            counter["next"] += 1
            registry[key] = SceneEntry(scene, grid, antennas, los, scene_id)
        return {"id": key, "revision": 0, "n_gaussians": len(scene)}

    @app.get("/scene/{scene_key}")
    def get_scene(scene_key: str):
        entry = entry_or_404(scene_key)
        scene = entry.scene
        return canonical({
            "id": scene_key,
            "scene_id": entry.scene_id,
            "revision": entry.revision,
            "n_gaussians": len(scene),
            "bounds": {"lo": scene.bounds.lo, "hi": scene.bounds.hi},
            "geometry_frozen": scene.geometry_frozen,
            "antennas": [_antenna_summary(a) for a in entry.antennas],
            "frequency_grid": entry.grid.samples if entry.grid is not None else None,
            "los": None if entry.los is None else {
                "v_vis": entry.los.v_vis, "s_tx_strength": entry.los.s_tx_strength,
                "c_dis": entry.los.c_dis},
        })

    @app.post("/scene/{scene_key}/antenna")
    def post_antenna(scene_key: str, edit: AntennaEdit):
        entry = entry_or_404(scene_key)
        with entry.lock:
            if edit.revision != entry.revision:
                raise HTTPException(status_code=409,
                                    detail=f"revision {edit.revision} is stale "
                                           f"(current {entry.revision})")
            try:
                antenna = Antenna(edit.role, np.array(edit.position), edit.power,
                                  edit.gain, edit.pattern,
                                  None if edit.boresight is None else np.array(edit.boresight))
            except SceneValidationError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            if edit.index is not None:
                if not 0 <= edit.index < len(entry.antennas):
                    raise HTTPException(status_code=422, detail="antenna index out of range")
                entry.antennas[edit.index] = antenna
                index = edit.index
            else:
                entry.antennas.append(antenna)
                index = len(entry.antennas) - 1
            entry.revision += 1
            return {"revision": entry.revision, "index": index,
                    "antenna": _antenna_summary(antenna)}

    def resolve_tx(entry: SceneEntry, tx: Optional[str]):
        if tx is None:
            for a in entry.antennas:
                if a.role == "tx":
                    return a
            raise HTTPException(status_code=422, detail="scene has no Tx antenna")
        try:
            index = int(tx)
        except ValueError:
            raise HTTPException(status_code=422, detail="tx must be an antenna index")
        if not 0 <= index < len(entry.antennas):
            raise HTTPException(status_code=404, detail=f"no antenna {index}")
        return entry.antennas[index]

    @app.get("/scene/{scene_key}/map")
    def get_map(scene_key: str, tx: Optional[str] = None, grid: str = "64x64",
                freq: float = 2.4e9, height: float = 1.0,
                threshold: float = -90.0, los: bool = True):
        entry = entry_or_404(scene_key)
        try:
            h, w = (int(v) for v in grid.lower().split("x"))
        except ValueError:
            raise HTTPException(status_code=422, detail="grid must look like 64x64")
        if h < 1 or w < 1 or h > MAX_GRID or w > MAX_GRID:
            raise HTTPException(status_code=422,
                                detail=f"grid capped at {MAX_GRID}x{MAX_GRID} per request")
        antenna = resolve_tx(entry, tx)
        if not entry.scene.bounds.contains(antenna.position):
            raise HTTPException(status_code=422, detail="Tx outside scene bounds")
        try:
            rmap = render_radio_map(entry.scene, entry.bvh, antenna, h, w, freq,
                                    los=entry.los if los else None, height=height)
        except (SceneValidationError, DegeneratePlacementError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return canonical({
            "revision": entry.revision,
            "h": h, "w": w, "height": height, "freq": freq,
            "bounds": {"lo": entry.scene.bounds.lo, "hi": entry.scene.bounds.hi},
            "cells_db": rmap.cells_db.ravel(),
            "stats": rmap.stats(threshold),
        })

    @app.get("/scene/{scene_key}/rcs")
    def get_rcs(scene_key: str, range_m: float = 3.0, freq: float = 2.4e9,
                start: float = -60.0, stop: float = 60.0, step: float = 1.0,
                height: float = 0.0, power: float = 1.0, gain: float = 1.0):
        entry = entry_or_404(scene_key)
        if step <= 0 or stop < start:
            raise HTTPException(status_code=422, detail="bad sweep range")
        angles = np.arange(start, stop + 1e-9, step)
        if angles.size > 100000:
            raise HTTPException(status_code=422, detail="sweep too large")
        radar = Antenna("tx", [range_m, 0.0, height], power, gain)
        try:
            db = render_rcs_sweep(entry.scene, radar, angles, FrequencyGrid.single(freq))
        except (SceneValidationError, DegeneratePlacementError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return canonical({
            "revision": entry.revision,
            "angles_deg": angles,
            "rssi_db": db[:, 0],
            "freq": freq,
        })

    @app.get("/scene/{scene_key}/attributes")
    def get_attributes(scene_key: str, kind: str = Query(...), step: float = 2.0,
                       rx: Optional[str] = None):
        entry = entry_or_404(scene_key)
        if kind not in ("gamma_mag", "gamma_phase", "roughness"):
            raise HTTPException(status_code=422,
                                detail="kind must be gamma_mag|gamma_phase|roughness")
        if step < 0.5:
            raise HTTPException(status_code=422, detail="step >= 0.5 deg")
        antenna = None
        if rx is not None:
            antenna = resolve_tx(entry, rx)
        else:
            for a in entry.antennas:
                if a.role == "rx":
                    antenna = a
                    break
        if antenna is None:
            raise HTTPException(status_code=422, detail="scene has no Rx antenna")
        try:
            maps = export_attribute_maps(entry.scene, antenna, entry.bvh, step_deg=step,
                                         no_data=float("nan"))
        except (SceneValidationError, DegeneratePlacementError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        values = maps[kind]
        clean = np.where(np.isnan(values), None, values)
        return canonical({
            "revision": entry.revision,
            "kind": kind,
            "h": values.shape[0], "w": values.shape[1],
            "step_deg": step,
            "values": clean.tolist(),
            "no_data": None,
        })

    return app
