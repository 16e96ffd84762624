import json
import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

import rfsplat.io as rfio
from rfsplat.io import scene_document
from rfsplat.oracle import SyntheticSceneSpec, generate_scene
from rfsplat.render import LosNlosParams
from rfsplat.scene import Antenna, FrequencyGrid
from rfsplat.service import create_app


@pytest.fixture
def client():
    return TestClient(create_app())


@pytest.fixture
def loaded(client):
    scene = generate_scene(SyntheticSceneSpec("classroom"))
    doc = scene_document(scene, FrequencyGrid([2.4e9]),
                         (Antenna("tx", (3.0, 2.0, 2.5)), Antenna("rx", (1.0, 1.0, 1.2))),
                         LosNlosParams(), scene_id="classroom")
    resp = client.post("/scene", json=rfio._to_jsonable(doc))
    assert resp.status_code == 200
    return client, resp.json()["id"], scene


class TestSceneLifecycle:
    def test_post_and_summary(self, loaded):
        client, key, scene = loaded
        resp = client.get(f"/scene/{key}")
        assert resp.status_code == 200
        body = resp.json()
        assert body["n_gaussians"] == len(scene)
        assert body["revision"] == 0
        assert len(body["antennas"]) == 2
        assert body["geometry_frozen"] is True

    def test_unknown_scene_404(self, client):
        assert client.get("/scene/nope").status_code == 404

    def test_malformed_position_422(self, loaded):
        client, key, _ = loaded
        resp = client.post(f"/scene/{key}/antenna",
                           json={"role": "tx", "position": [1.0, 2.0], "revision": 0})
        assert resp.status_code == 422

    def test_unknown_field_rejected_on_post(self, client):
        scene = generate_scene(SyntheticSceneSpec("plate", nx=2, ny=2))
        doc = rfio._to_jsonable(scene_document(scene))
        doc["mystery"] = 1
        assert client.post("/scene", json=doc).status_code == 422


class TestEditsAndConcurrency:
    def test_move_bumps_revision(self, loaded):
        client, key, _ = loaded
        resp = client.post(f"/scene/{key}/antenna",
                           json={"role": "tx", "position": [2.0, 2.0, 2.5],
                                 "index": 0, "revision": 0})
        assert resp.status_code == 200
        assert resp.json()["revision"] == 1

    def test_stale_revision_409(self, loaded):
        client, key, _ = loaded
        first = client.post(f"/scene/{key}/antenna",
                            json={"role": "tx", "position": [2.0, 2.0, 2.5],
                                  "index": 0, "revision": 0})
        assert first.status_code == 200
        stale = client.post(f"/scene/{key}/antenna",
                            json={"role": "tx", "position": [1.0, 2.0, 2.5],
                                  "index": 0, "revision": 0})
        assert stale.status_code == 409


class TestMapEndpoint:
    def test_repeat_get_byte_identical(self, loaded):
        client, key, _ = loaded
        url = f"/scene/{key}/map?grid=12x10&freq=2.4e9&height=1.2"
        a = client.get(url)
        b = client.get(url)
        assert a.status_code == 200
        assert a.content == b.content

    def test_move_then_map_reflects_and_reverts(self, loaded):
        client, key, _ = loaded
        url = f"/scene/{key}/map?tx=0&grid=10x8&freq=2.4e9&height=1.2"
        before = client.get(url).content
        assert client.post(f"/scene/{key}/antenna",
                           json={"role": "tx", "position": [1.2, 1.0, 2.5],
                                 "index": 0, "revision": 0}).status_code == 200
        after_move = client.get(url).content
        assert after_move != before
        # moving back restores the exact original payload modulo revision
        assert client.post(f"/scene/{key}/antenna",
                           json={"role": "tx", "position": [3.0, 2.0, 2.5],
                                 "index": 0, "revision": 1}).status_code == 200
        restored = json.loads(client.get(url).content)
        original = json.loads(before)
        assert restored["cells_db"] == original["cells_db"]
        assert restored["stats"] == original["stats"]

    def test_grid_cap(self, loaded):
        client, key, _ = loaded
        resp = client.get(f"/scene/{key}/map?grid=300x300")
        assert resp.status_code == 422

    def test_stats_present(self, loaded):
        client, key, _ = loaded
        body = client.get(f"/scene/{key}/map?grid=8x8&threshold=-60").json()
        stats = body["stats"]
        for field in ("min_db", "mean_db", "max_db", "coverage_pct"):
            assert field in stats
        assert 0.0 <= stats["coverage_pct"] <= 100.0

    def test_matches_cli_map_bytes(self, loaded, tmp_path):
        from rfsplat.cli import main as cli_main

        client, key, scene = loaded
        scene_path = tmp_path / "scene.json"
        rfio.save_scene(scene_path, scene, FrequencyGrid([2.4e9]),
                        (Antenna("tx", (3.0, 2.0, 2.5)),), LosNlosParams(),
                        scene_id="classroom")
        out = tmp_path / "map.csv"
        assert cli_main(["map", "--scene", str(scene_path), "--grid", "10x8",
                         "--freq", "2.4e9", "--height", "1.2",
                         "--out", str(out)]) == 0
        cli_cells = [float(line.split(",")[2])
                     for line in out.read_text().strip().splitlines()[1:]]
        api_cells = client.get(
            f"/scene/{key}/map?tx=0&grid=10x8&freq=2.4e9&height=1.2").json()["cells_db"]
        assert rfio.dumps_canonical(cli_cells) == rfio.dumps_canonical(api_cells)


class TestRcsAndAttributes:
    def test_rcs_sweep_closed(self, loaded):
        client, key, _ = loaded
        body = client.get(f"/scene/{key}/rcs?range_m=8&start=-60&stop=60&step=1").json()
        assert len(body["angles_deg"]) == 121
        assert len(body["rssi_db"]) == 121

    def test_bad_sweep_422(self, loaded):
        client, key, _ = loaded
        assert client.get(f"/scene/{key}/rcs?start=10&stop=-10").status_code == 422

    def test_attribute_map_kinds(self, loaded):
        client, key, _ = loaded
        for kind in ("gamma_mag", "gamma_phase", "roughness"):
            body = client.get(f"/scene/{key}/attributes?kind={kind}&step=4").json()
            assert body["kind"] == kind
            values = body["values"]
            assert len(values) == body["h"]
            flat = [v for row in values for v in row if v is not None]
            assert flat, "expected covered cells"
        assert client.get(
            f"/scene/{key}/attributes?kind=color").status_code == 422
