import math

import numpy as np
import pytest

from rfsplat.render import (DirectionalRender, LinkConfig, LosNlosParams,
                            RenderOptions, blend_direction,
                            export_attribute_maps, integrate_receiver,
                            make_fov_grid, mix_los_nlos, render_radio_map,
                            render_rcs_sweep, render_received_signal)
from rfsplat.scene import (ALPHA_CAP, Antenna, C_LIGHT,
                           DegeneratePlacementError, FrequencyGrid, Scene,
                           Aabb, SceneValidationError)
from rfsplat.tracing import build_bvh
from rfsplat.oracle import SyntheticSceneSpec, generate_scene
from conftest import canonical_monostatic, make_gaussian, make_scene

INV_SQRT_4PI = math.sqrt(1.0 / (4.0 * math.pi))
DB_PER_DOUBLING_TWO_WAY = 40.0 * math.log10(2.0)


class TestFovGrid:
    def test_omni_cell_count(self):
        grid = make_fov_grid("omni")
        assert len(grid) == 64800

    def test_directional_cell_count(self):
        grid = make_fov_grid("horn", boresight=(0, 0, 1.0))
        assert len(grid) == 32400

    def test_omni_solid_angle_sum(self):
        grid = make_fov_grid("omni")
        assert abs(grid.solid_angles().sum() - 4 * math.pi) / (4 * math.pi) < 0.005

    def test_directional_solid_angle_sum(self):
        grid = make_fov_grid("horn", boresight=(0, 1.0, 0))
        assert abs(grid.solid_angles().sum() - 2 * math.pi) / (2 * math.pi) < 0.005

    def test_bin_center_roundtrip(self, rng):
        grid = make_fov_grid("omni")
        dirs = rng.standard_normal((100, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        idx, centers = grid.bin_many(dirs)
        idx2, _ = grid.bin_many(centers)
        assert np.array_equal(idx, idx2)

    def test_out_of_fov(self):
        grid = make_fov_grid("horn", boresight=(0, 0, 1.0))
        idx, _ = grid.bin_many(np.array([[0.0, 0.0, -1.0]]))
        assert idx[0] == -1


class TestBlendDirection:
    def test_empty_ray(self):
        scene = make_scene([make_gaussian(mu=(10, 10, 10))])
        bvh = build_bvh(scene)
        out = blend_direction(scene, bvh, np.zeros(3), np.array([0, 0, -1.0]),
                              np.ones(1, complex), C_LIGHT)
        assert out == 0.0

    def test_single_gaussian_hand_value(self):
        scene = make_scene([make_gaussian(mu=(0, 0, 1.0), alpha=0.5)])
        bvh = build_bvh(scene)
        out = blend_direction(scene, bvh, np.zeros(3), np.array([0, 0, 1.0]),
                              np.ones(1, complex), C_LIGHT)  # lambda = 1, d = 1
        assert out == pytest.approx(0.5 * INV_SQRT_4PI, rel=1e-9)

    def test_capped_transmittance_scaling(self):
        gs = [make_gaussian(mu=(0, 0, 1.0), scale=(0.1, 0.1, 0.1), alpha=1.0),
              make_gaussian(mu=(0, 0, 2.0), scale=(0.1, 0.1, 0.1), alpha=1.0)]
        scene = make_scene(gs)
        bvh = build_bvh(scene)
        opts = RenderOptions(path_loss=False)
        out = blend_direction(scene, bvh, np.zeros(3), np.array([0, 0, 1.0]),
                              np.ones(2, complex), C_LIGHT, opts)
        expected = ALPHA_CAP + ALPHA_CAP * (1 - ALPHA_CAP)
        assert out == pytest.approx(expected, rel=1e-12)

    def test_input_order_irrelevant(self):
        g1 = make_gaussian(mu=(0, 0, 1.0), scale=(0.1, 0.1, 0.1), alpha=0.4,
                           gamma_mag=0.7)
        g2 = make_gaussian(mu=(0, 0, 2.0), scale=(0.1, 0.1, 0.1), alpha=0.8,
                           gamma_mag=0.3)
        s_out = np.array([0.3 + 0.1j, 0.2 - 0.4j])
        a = blend_direction(make_scene([g1, g2]), build_bvh(make_scene([g1, g2])),
                            np.zeros(3), np.array([0, 0, 1.0]), s_out, 2.4e9)
        b = blend_direction(make_scene([g2, g1]), build_bvh(make_scene([g2, g1])),
                            np.zeros(3), np.array([0, 0, 1.0]), s_out[::-1], 2.4e9)
        assert a == pytest.approx(b, rel=1e-12)

    def test_literal_per_occluder_mode(self):
        # first Gaussian receives no attenuation in the literal reading
        scene = make_scene([make_gaussian(mu=(0, 0, 1.0), alpha=0.5)])
        bvh = build_bvh(scene)
        opts = RenderOptions(attenuation_per_occluder=True)
        out = blend_direction(scene, bvh, np.zeros(3), np.array([0, 0, 1.0]),
                              np.ones(1, complex), C_LIGHT, opts)
        assert out == pytest.approx(0.5, rel=1e-12)


class TestIntegrateReceiver:
    def _render(self, values):
        grid = make_fov_grid("omni", step_deg=30.0)
        arr = np.zeros(len(grid), complex)
        for k, v in values.items():
            arr[k] = v
        return DirectionalRender(grid, arr, (np.abs(arr) > 0).astype(int))

    def test_all_zero(self):
        rx = Antenna("rx", (0, 0, 0))
        assert integrate_receiver(self._render({}), rx, 1e9) == 0.0

    def test_linear_sum(self):
        rx = Antenna("rx", (0, 0, 0))
        out = integrate_receiver(self._render({3: 0.5, 17: 0.5}), rx, 1e9)
        assert out == pytest.approx(1.0, rel=1e-12)

    def test_coherent_cancellation(self):
        render = self._render({3: 0.5, 17: 0.5})
        flip = render.grid.directions()[17]

        def pattern(direction, f):
            return -1.0 if np.allclose(direction, flip) else 1.0

        rx = Antenna("rx", (0, 0, 0), pattern_fn=pattern)
        assert integrate_receiver(render, rx, 1e9) == pytest.approx(0.0, abs=1e-15)


class TestMixLosNlos:
    def test_full_period_phase(self):
        params = LosNlosParams(v_vis=1.0, s_tx_strength=1.0, c_dis=0.5)
        lam = 0.3
        out = mix_los_nlos(params, d_los=lam, lam=lam, s_nlos=0.25 + 0.5j)
        assert out == pytest.approx(0.5 + 0.25 + 0.5j, rel=1e-12)

    def test_pure_nlos(self):
        params = LosNlosParams(v_vis=0.0)
        assert mix_los_nlos(params, 2.0, 0.3, 0.7 - 0.2j) == pytest.approx(0.7 - 0.2j)

    def test_pure_los_closed_form(self):
        params = LosNlosParams(v_vis=1.0, s_tx_strength=2.0, c_dis=0.25)
        lam = 0.125
        d = 1.03
        expected = 0.5 * np.exp(1j * 2 * np.pi * d / lam)
        assert mix_los_nlos(params, d, lam, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_ranges_validated(self):
        with pytest.raises(SceneValidationError):
            LosNlosParams(v_vis=1.5)


class TestRenderReceivedSignal:
    def test_empty_scene(self):
        scene = make_scene([])
        bvh = build_bvh(scene)
        tx = Antenna("tx", (0, 0, 1.0))
        rx = Antenna("rx", (0, 1.0, 0))
        sig = render_received_signal(scene, bvh, tx, rx, FrequencyGrid.single(1e9))
        assert np.all(sig.values == 0)

    def test_canonical_composition(self):
        scene, tx, rx, f = canonical_monostatic()
        bvh = build_bvh(scene)
        sig = render_received_signal(scene, bvh, tx, rx, FrequencyGrid.single(f),
                                     options=RenderOptions(exact_direction=True))
        assert sig.values[0] == pytest.approx(0.5 * INV_SQRT_4PI, rel=1e-12)

    def test_linear_in_waveform(self, rng):
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=11, count=30))
        bvh = build_bvh(scene)
        tx = Antenna("tx", (3.0, 0.2, 1.0), 2.0, 1.0)
        rx = Antenna("rx", (-3.0, 0.5, 0.5))
        grid = FrequencyGrid.single(2.4e9)
        a = complex(rng.standard_normal(), rng.standard_normal())
        base = render_received_signal(scene, bvh, tx, rx, grid).values[0]
        scaled = render_received_signal(scene, bvh, tx, rx, grid,
                                        s_tx=np.array([a])).values[0]
        assert scaled == pytest.approx(a * base, rel=1e-12)

    def test_two_way_distance_scaling(self):
        g = make_gaussian(scale=(0.5, 0.5, 0.5), alpha=0.5, gamma_mag=1.0)
        scene = make_scene([g], pad=20.0)
        bvh = build_bvh(scene)
        grid = FrequencyGrid.single(2.4e9)
        power = []
        for d in (1.0, 2.0, 4.0, 8.0):
            tx = Antenna("tx", (0, 0, d))
            rx = Antenna("rx", (0, 0, d))
            s = render_received_signal(scene, bvh, tx, rx, grid).values[0]
            power.append(abs(s) ** 2)
        for k in range(3):
            drop = 10 * math.log10(power[k] / power[k + 1])
            assert drop == pytest.approx(DB_PER_DOUBLING_TWO_WAY, abs=0.1)

    def test_ablation_breaks_distance_scaling(self):
        g = make_gaussian(scale=(0.5, 0.5, 0.5), alpha=0.5, gamma_mag=1.0)
        scene = make_scene([g], pad=20.0)
        bvh = build_bvh(scene)
        grid = FrequencyGrid.single(2.4e9)
        opts = RenderOptions(path_loss=False)
        power = []
        for d in (1.0, 2.0):
            tx = Antenna("tx", (0, 0, d))
            rx = Antenna("rx", (0, 0, d))
            s = render_received_signal(scene, bvh, tx, rx, grid, options=opts).values[0]
            power.append(abs(s) ** 2)
        drop = 10 * math.log10(power[0] / power[1])
        assert abs(drop - DB_PER_DOUBLING_TWO_WAY) > 0.1   # must fail the 12 dB law
        assert drop == pytest.approx(20.0 * math.log10(2.0), abs=0.1)

    def test_fov_step_halving_converges(self):
        scene = generate_scene(SyntheticSceneSpec(
            "plate", nx=8, ny=8, spacing=0.05, thickness=0.005,
            normal=(1.0, 0, 0), tangent=(0, 1.0, 0)))
        bvh = build_bvh(scene)
        tx = Antenna("tx", (1.5, 0, 0))
        rx = Antenna("rx", (1.5, 0, 0))
        grid = FrequencyGrid.single(2.4e9)
        coarse = render_received_signal(scene, bvh, tx, rx, grid,
                                        options=RenderOptions(fov_step_deg=1.0)).values[0]
        fine = render_received_signal(scene, bvh, tx, rx, grid,
                                      options=RenderOptions(fov_step_deg=0.5)).values[0]
        assert abs(abs(fine) - abs(coarse)) / abs(coarse) < 0.02


class TestRcsSweep:
    def test_periodicity(self):
        scene = generate_scene(SyntheticSceneSpec(
            "plate", nx=4, ny=4, spacing=0.06, normal=(1.0, 0, 0), tangent=(0, 1.0, 0)))
        radar = Antenna("tx", (2.0, 0, 0))
        db = render_rcs_sweep(scene, radar, [0.0, 360.0], FrequencyGrid.single(2.4e9))
        assert abs(db[0, 0] - db[1, 0]) < 1e-9

    def test_empty_scene_floor(self):
        scene = make_scene([])
        radar = Antenna("tx", (2.0, 0, 0))
        db = render_rcs_sweep(scene, radar, [0.0, 10.0], FrequencyGrid.single(2.4e9))
        assert np.all(db == -300.0)


class TestRadioMap:
    def test_free_space_symmetry(self):
        scene = Scene((), Aabb([-4, -4, 0], [4, 4, 3]), geometry_frozen=True)
        bvh = build_bvh(scene)
        tx = Antenna("tx", (0, 0, 1.5))
        rmap = render_radio_map(scene, bvh, tx, 8, 8, 2.4e9,
                                los=LosNlosParams(), height=1.0)
        # grid symmetric about the Tx: mirrored cells must match
        assert np.max(np.abs(rmap.cells_db - rmap.cells_db[::-1, :])) < 0.1
        assert np.max(np.abs(rmap.cells_db - rmap.cells_db[:, ::-1])) < 0.1

    def test_power_scaling(self):
        scene = generate_scene(SyntheticSceneSpec("classroom"))
        bvh = build_bvh(scene)
        tx1 = Antenna("tx", (3.0, 2.0, 2.5), 1.0)
        tx4 = Antenna("tx", (3.0, 2.0, 2.5), 4.0)
        los = LosNlosParams()
        m1 = render_radio_map(scene, bvh, tx1, 6, 6, 2.4e9, los=los, height=1.2)
        m4 = render_radio_map(scene, bvh, tx4, 6, 6, 2.4e9, los=los, height=1.2)
        assert np.allclose(m4.cells_db - m1.cells_db, 20 * math.log10(2.0), atol=1e-9)

    def test_tx_outside_bounds_rejected(self):
        scene = generate_scene(SyntheticSceneSpec("classroom"))
        bvh = build_bvh(scene)
        tx = Antenna("tx", (50.0, 0, 0))
        with pytest.raises(SceneValidationError):
            render_radio_map(scene, bvh, tx, 4, 4, 2.4e9)

    def test_cell_on_tx_rejected(self):
        scene = Scene((), Aabb([-4, -4, 0], [4, 4, 3]), geometry_frozen=True)
        bvh = build_bvh(scene)
        tx = Antenna("tx", (0.5, 0.5, 1.0))   # on the 8x8 cell lattice at height 1
        with pytest.raises(DegeneratePlacementError):
            render_radio_map(scene, bvh, tx, 8, 8, 2.4e9, height=1.0)


class TestAttributeMaps:
    def test_uniform_scene_constant_maps(self):
        scene = generate_scene(SyntheticSceneSpec(
            "plate", nx=5, ny=5, spacing=0.1,
            attributes=dict(gamma_mag=0.6, roughness=3.0, gamma_phase=0.4)))
        rx = Antenna("rx", (0, 0, 2.0))
        maps = export_attribute_maps(scene, rx, step_deg=2.0)
        covered = maps["weight"] > 0
        assert covered.any()
        assert np.allclose(maps["gamma_mag"][covered], 0.6, atol=1e-12)
        assert np.allclose(maps["roughness"][covered], 3.0, atol=1e-12)
        assert np.all(np.isnan(maps["gamma_mag"][~covered]))

    def test_two_material_plateaus(self):
        scene = generate_scene(SyntheticSceneSpec(
            "two_material_plate", nx=8, ny=4, spacing=0.2))
        rx = Antenna("rx", (0, 0, 3.0))
        maps = export_attribute_maps(scene, rx, step_deg=1.0)
        vals = maps["gamma_mag"][maps["weight"] > 0]
        lo, hi = vals.min(), vals.max()
        assert lo == pytest.approx(0.35, abs=1e-9)
        assert hi == pytest.approx(0.80, abs=1e-9)
