"""File formats: scene documents, observation datasets, grids, reports.

Text formats are versioned JSON with repr-exact float serialization, so a
round trip reproduces every finite double bit-for-bit. Unknown fields are
rejected by name. Large raster maps additionally ship as raw float64
binary alongside a small JSON header.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .scene import (Aabb, Antenna, FrequencyGrid, ObservationRecord,
                    ObservationSet, RFGaussian, Scene, SceneValidationError)
from .render import LosNlosParams

SCENE_FORMAT = "rfsplat-scene"
DATASET_FORMAT = "rfsplat-dataset"
FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    """Malformed or unknown content in a scene/dataset document."""


def _to_jsonable(x):
    if isinstance(x, np.ndarray):
        return [_to_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def dumps_canonical(obj) -> str:
    """Deterministic JSON bytes: sorted keys, repr floats, no whitespace drift."""
    return json.dumps(_to_jsonable(obj), sort_keys=True, separators=(",", ":"))


GAUSSIAN_FIELDS = {"mu", "scale", "rotation", "normal", "alpha", "roughness",
                   "gamma_mag", "gamma_phase"}
ANTENNA_FIELDS = {"role", "position", "power_watts", "gain", "pattern",
                  "boresight", "pattern_exponent"}
SCENE_FIELDS = {"format", "version", "scene_id", "units", "frequency_grid",
                "bounds", "geometry_frozen", "gaussians", "antennas", "los"}
LOS_FIELDS = {"v_vis", "s_tx_strength", "c_dis"}


def _check_fields(d: dict, allowed: set, where: str):
    for key in d:
        if key not in allowed:
            raise SceneFormatError(f"unknown field {key!r} in {where}")


def antenna_to_dict(a: Antenna) -> dict:
    out = {
        "role": a.role,
        "position": a.position,
        "power_watts": a.power_watts,
        "gain": a.gain,
        "pattern": a.pattern,
    }
    if a.pattern == "horn":
        out["boresight"] = a.boresight
        out["pattern_exponent"] = a.pattern_exponent
    return out


def antenna_from_dict(d: dict, where: str = "antenna") -> Antenna:
    _check_fields(d, ANTENNA_FIELDS, where)
    try:
        return Antenna(
            role=d["role"],
            position=np.asarray(d["position"], dtype=np.float64),
            power_watts=float(d.get("power_watts", 1.0)),
            gain=float(d.get("gain", 1.0)),
            pattern=d.get("pattern", "omni"),
            boresight=None if d.get("boresight") is None
            else np.asarray(d["boresight"], dtype=np.float64),
            pattern_exponent=float(d.get("pattern_exponent", 2.0)),
        )
    except KeyError as exc:
        raise SceneFormatError(f"missing field {exc} in {where}") from exc


def scene_document(scene: Scene, grid: Optional[FrequencyGrid] = None,
                   antennas: tuple = (), los: Optional[LosNlosParams] = None,
                   scene_id: str = "scene") -> dict:
    doc = {
        "format": SCENE_FORMAT,
        "version": FORMAT_VERSION,
        "scene_id": scene_id,
        "units": {"length": "m", "frequency": "Hz", "power": "W", "level": "dB"},
        "bounds": {"lo": scene.bounds.lo, "hi": scene.bounds.hi},
        "geometry_frozen": scene.geometry_frozen,
        "gaussians": [
            {
                "mu": g.mu, "scale": g.scale, "rotation": g.rotation,
                "normal": g.normal, "alpha": g.alpha, "roughness": g.roughness,
                "gamma_mag": g.gamma_mag, "gamma_phase": g.gamma_phase,
            }
            for g in scene.gaussians
        ],
        "antennas": [antenna_to_dict(a) for a in antennas],
    }
    if grid is not None:
        doc["frequency_grid"] = grid.samples
    if los is not None:
        doc["los"] = {"v_vis": los.v_vis, "s_tx_strength": los.s_tx_strength,
                      "c_dis": los.c_dis}
    return doc


def parse_scene_document(doc: dict):
    """-> (scene, grid|None, antennas, los|None, scene_id)."""
    if not isinstance(doc, dict):
        raise SceneFormatError("scene document must be a JSON object")
    _check_fields(doc, SCENE_FIELDS, "scene document")
    if doc.get("format") != SCENE_FORMAT:
        raise SceneFormatError(f"not a scene document: format={doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported scene version {doc.get('version')!r}")
    bounds_d = doc.get("bounds")
    if bounds_d is None:
        raise SceneFormatError("missing field 'bounds' in scene document")
    _check_fields(bounds_d, {"lo", "hi"}, "bounds")
    gaussians = []
    for i, gd in enumerate(doc.get("gaussians", [])):
        _check_fields(gd, GAUSSIAN_FIELDS, f"gaussian {i}")
        try:
            gaussians.append(RFGaussian(
                mu=np.asarray(gd["mu"], dtype=np.float64),
                scale=np.asarray(gd["scale"], dtype=np.float64),
                rotation=np.asarray(gd["rotation"], dtype=np.float64),
                normal=np.asarray(gd["normal"], dtype=np.float64),
                alpha=float(gd["alpha"]),
                roughness=float(gd["roughness"]),
                gamma_mag=float(gd["gamma_mag"]),
                gamma_phase=float(gd["gamma_phase"]),
            ))
        except KeyError as exc:
            raise SceneFormatError(f"missing field {exc} in gaussian {i}") from exc
    scene = Scene(tuple(gaussians),
                  Aabb(np.asarray(bounds_d["lo"], dtype=np.float64),
                       np.asarray(bounds_d["hi"], dtype=np.float64)),
                  geometry_frozen=bool(doc.get("geometry_frozen", False)))
    grid = None
    if doc.get("frequency_grid") is not None:
        grid = FrequencyGrid(np.asarray(doc["frequency_grid"], dtype=np.float64))
    antennas = tuple(antenna_from_dict(a, f"antenna {i}")
                     for i, a in enumerate(doc.get("antennas", [])))
    los = None
    if doc.get("los") is not None:
        _check_fields(doc["los"], LOS_FIELDS, "los")
        los = LosNlosParams(**{k: float(v) for k, v in doc["los"].items()})
    return scene, grid, antennas, los, doc.get("scene_id", "scene")


def save_scene(path, scene: Scene, grid=None, antennas=(), los=None,
               scene_id: str = "scene") -> None:
    Path(path).write_text(
        json.dumps(_to_jsonable(scene_document(scene, grid, antennas, los, scene_id)),
                   indent=1))


def load_scene(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON in {path}: {exc}") from exc
    return parse_scene_document(doc)


# ---------------------------------------------------------------------------
# Observation datasets


DATASET_FIELDS = {"format", "version", "scene_id", "frequencies_hz", "units", "records"}
RECORD_FIELDS = {"tx", "rx_position", "freq_index", "rssi_db", "split"}


def dataset_document(observations: ObservationSet, antennas: tuple) -> dict:
    """Records reference Tx antennas by index into the scene's antenna list."""
    tx_index = {}
    for i, a in enumerate(antennas):
        tx_index[id(a)] = i
    records = []
    for rec in observations.records:
        key = id(rec.tx)
        if key not in tx_index:
            tx_index[key] = len(antennas)
            antennas = antennas + (rec.tx,)
        records.append({
            "tx": tx_index[key],
            "rx_position": rec.rx.position,
            "freq_index": rec.freq_index,
            "rssi_db": rec.rssi_db,
            "split": rec.split,
        })
    return {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "scene_id": observations.scene_id,
        "units": observations.units,
        "frequencies_hz": observations.grid.samples,
        "records": records,
    }, antennas


def parse_dataset_document(doc: dict, antennas: tuple) -> ObservationSet:
    if not isinstance(doc, dict):
        raise SceneFormatError("dataset document must be a JSON object")
    _check_fields(doc, DATASET_FIELDS, "dataset document")
    if doc.get("format") != DATASET_FORMAT:
        raise SceneFormatError(f"not a dataset document: format={doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported dataset version {doc.get('version')!r}")
    grid = FrequencyGrid(np.asarray(doc["frequencies_hz"], dtype=np.float64))
    records = []
    for i, rd in enumerate(doc.get("records", [])):
        _check_fields(rd, RECORD_FIELDS, f"record {i}")
        tx_ref = int(rd["tx"])
        if not 0 <= tx_ref < len(antennas):
            raise SceneFormatError(f"record {i}: tx index {tx_ref} not in the scene's antennas")
        records.append(ObservationRecord(
            tx=antennas[tx_ref],
            rx=Antenna("rx", np.asarray(rd["rx_position"], dtype=np.float64)),
            freq_index=int(rd["freq_index"]),
            rssi_db=float(rd["rssi_db"]),
            split=rd.get("split", "train"),
        ))
    return ObservationSet(tuple(records), grid,
                          scene_id=doc.get("scene_id", "scene"),
                          units=doc.get("units", "db"))


def save_dataset(path, observations: ObservationSet, antennas: tuple = ()) -> tuple:
    doc, extended = dataset_document(observations, antennas)
    Path(path).write_text(json.dumps(_to_jsonable(doc), indent=1))
    return extended


def load_dataset(path, antennas: tuple) -> ObservationSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON in {path}: {exc}") from exc
    return parse_dataset_document(doc, antennas)


# ---------------------------------------------------------------------------
# Binary grids and CSV


def write_binary_grid(path, channels: dict) -> None:
    """Raw little-endian float64 planes plus a JSON header.

    ``path`` gets the data; ``path + '.json'`` describes (h, w, channels).
    """
    names = sorted(channels)
    first = np.asarray(channels[names[0]])
    h, w = first.shape
    with open(path, "wb") as fh:
        for name in names:
            arr = np.ascontiguousarray(np.asarray(channels[name], dtype="<f8"))
            if arr.shape != (h, w):
                raise SceneFormatError("all grid channels must share one shape")
            fh.write(arr.tobytes())
    Path(str(path) + ".json").write_text(
        json.dumps({"height": h, "width": w, "channels": names, "dtype": "<f8"}))


def read_binary_grid(path) -> dict:
    header = json.loads(Path(str(path) + ".json").read_text())
    h, w = header["height"], header["width"]
    raw = np.fromfile(path, dtype="<f8")
    out = {}
    for i, name in enumerate(header["channels"]):
        out[name] = raw[i * h * w:(i + 1) * h * w].reshape(h, w)
    return out


def write_csv(path, header: list, rows) -> None:
    """repr-exact CSV so identical values serialize to identical bytes."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def fit_report_document(report) -> dict:
    doc = {
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "improvement_db": report.improvement_db() if report.final_loss > 0 else math.inf,
        "converged": report.converged,
        "diverged": report.diverged,
        "iterations_run": report.iterations_run,
        "seed": report.seed,
        "loss_trace": report.loss_trace,
        "final_attributes": report.final_attributes,
    }
    if report.gradient_check is not None:
        doc["gradient_check"] = {
            "passed": report.gradient_check["passed"],
            "max_rel_err": report.gradient_check["max_rel_err"],
            "n_params": report.gradient_check["n_params"],
        }
    return doc


def save_fit_report(path, report) -> None:
    doc = fit_report_document(report)
    if doc["improvement_db"] == math.inf:
        doc["improvement_db"] = "inf"
    Path(path).write_text(json.dumps(_to_jsonable(doc), indent=1))
