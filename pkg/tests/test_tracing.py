import math

import numpy as np
import pytest

from rfsplat.scene import (ALPHA_CAP, Antenna, DegeneratePlacementError,
                           scene_arrays)
from rfsplat.tracing import (Bvh, build_bvh, incident_field, ray_chain,
                             ray_gaussian_alpha, visibility_chain)
from rfsplat.oracle import SyntheticSceneSpec, generate_scene
from conftest import make_gaussian, make_scene

EXP_HALF = math.exp(-0.5)


class TestBvhBuild:
    def test_single_gaussian_single_leaf(self):
        scene = make_scene([make_gaussian()])
        bvh = build_bvh(scene)
        assert bvh.n_nodes == 1
        assert bvh.node_count[0] == 1
        chain = ray_chain(bvh, scene, (0, 0, -5.0), (0, 0, 1.0))
        assert list(chain.gauss_index) == [0]

    def test_empty_scene_sentinel(self):
        scene = make_scene([])
        bvh = build_bvh(scene)
        chain = ray_chain(bvh, scene, (0, 0, -5.0), (0, 0, 1.0))
        assert len(chain) == 0

    def test_leaf_boxes_contain_primitives(self):
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=5, count=120))
        arrays = scene_arrays(scene)
        bvh = build_bvh(arrays)
        for node in range(bvh.n_nodes):
            count = int(bvh.node_count[node])
            if count == 0:
                continue
            start = int(bvh.node_start[node])
            prims = bvh.prim_index[start:start + count]
            assert np.all(arrays.aabb_lo[prims] >= bvh.node_lo[node] - 1e-12)
            assert np.all(arrays.aabb_hi[prims] <= bvh.node_hi[node] + 1e-12)

    def test_parent_contains_children(self):
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=6, count=120))
        bvh = build_bvh(scene)
        for node in range(bvh.n_nodes):
            if bvh.node_count[node] > 0:
                continue
            for child in (bvh.node_left[node], bvh.node_right[node]):
                assert np.all(bvh.node_lo[child] >= bvh.node_lo[node] - 1e-12)
                assert np.all(bvh.node_hi[child] <= bvh.node_hi[node] + 1e-12)

    def test_hit_sets_match_brute_force(self, rng):
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=7, count=100))
        bvh = build_bvh(scene)
        for _ in range(200):
            origin = rng.uniform(-2, 2, 3)
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            fast = ray_chain(bvh, scene, origin, direction, use_bvh=True)
            slow = ray_chain(bvh, scene, origin, direction, use_bvh=False)
            assert np.array_equal(fast.gauss_index, slow.gauss_index)
            assert np.array_equal(fast.distance, slow.distance)
            assert np.array_equal(fast.alpha, slow.alpha)

    def test_ray_missing_everything(self):
        scene = make_scene([make_gaussian()])
        bvh = build_bvh(scene)
        chain = ray_chain(bvh, scene, (50.0, 0, 0), (0, 0, 1.0))
        assert len(chain) == 0


class TestRayGaussianAlpha:
    def test_through_center(self):
        g = make_gaussian(alpha=0.8)
        contrib, dist = ray_gaussian_alpha(g, (0, 0, -4.0), (0, 0, 1.0))
        assert contrib == pytest.approx(0.8, rel=1e-12)
        assert dist == pytest.approx(4.0, rel=1e-12)

    def test_unit_mahalanobis_offset(self):
        g = make_gaussian(alpha=0.8)
        contrib, _ = ray_gaussian_alpha(g, (1.0, 0, -4.0), (0, 0, 1.0))
        assert contrib == pytest.approx(0.8 * EXP_HALF, rel=1e-12)

    def test_culled_beyond_three_sigma(self):
        g = make_gaussian(alpha=0.8)
        contrib, _ = ray_gaussian_alpha(g, (4.0, 0, -4.0), (0, 0, 1.0))
        assert contrib == 0.0

    def test_behind_origin(self):
        g = make_gaussian(alpha=0.8)
        contrib, _ = ray_gaussian_alpha(g, (0, 0, 4.0), (0, 0, 1.0))
        assert contrib == 0.0

    def test_cap(self):
        g = make_gaussian(alpha=1.0)
        contrib, _ = ray_gaussian_alpha(g, (0, 0, -4.0), (0, 0, 1.0))
        assert contrib == ALPHA_CAP


class TestVisibilityChain:
    def test_unobstructed(self):
        scene = make_scene([make_gaussian(mu=(10.0, 10.0, 0.0))])
        bvh = build_bvh(scene)
        v, chain = visibility_chain(bvh, scene, (0, 0, 0), (0, 0, 5.0))
        assert v == 1.0
        assert len(chain) == 0

    def test_single_opaque_occluder(self):
        scene = make_scene([make_gaussian(mu=(0, 0, 2.0), alpha=1.0)])
        bvh = build_bvh(scene)
        v, chain = visibility_chain(bvh, scene, (0, 0, 0), (0, 0, 5.0))
        assert v == pytest.approx(1.0 - ALPHA_CAP, rel=1e-12)
        assert len(chain) == 1

    def test_two_occluders(self):
        gs = [make_gaussian(mu=(0, 0, 1.5), scale=(0.2, 0.2, 0.2), alpha=0.3),
              make_gaussian(mu=(0, 0, 3.5), scale=(0.2, 0.2, 0.2), alpha=0.5)]
        scene = make_scene(gs)
        bvh = build_bvh(scene)
        v, chain = visibility_chain(bvh, scene, (0, 0, 0), (0, 0, 5.0))
        assert v == pytest.approx(0.7 * 0.5, rel=1e-12)
        assert list(chain.gauss_index) == [0, 1]

    def test_destination_excluded(self):
        g = make_gaussian(mu=(0, 0, 5.0), alpha=0.9)
        scene = make_scene([g])
        bvh = build_bvh(scene)
        v, chain = visibility_chain(bvh, scene, (0, 0, 0), g.mu, exclude_index=0)
        assert v == 1.0
        assert len(chain) == 0

    def test_reciprocity(self, rng):
        scene = generate_scene(SyntheticSceneSpec("random_cloud", seed=9, count=80))
        bvh = build_bvh(scene)
        for _ in range(50):
            a = rng.uniform(-2, 2, 3)
            b = rng.uniform(-2, 2, 3)
            va, _ = visibility_chain(bvh, scene, a, b)
            vb, _ = visibility_chain(bvh, scene, b, a)
            assert abs(va - vb) < 1e-12

    def test_monotone_under_added_gaussian(self, rng):
        gs = [make_gaussian(mu=(0, 0, 2.0), scale=(0.3, 0.3, 0.3), alpha=0.4)]
        scene = make_scene(gs)
        v0, _ = visibility_chain(build_bvh(scene), scene, (0, 0, 0), (0, 0, 5.0))
        gs.append(make_gaussian(mu=(0, 0, 3.0), scale=(0.3, 0.3, 0.3), alpha=0.5))
        scene2 = make_scene(gs)
        v1, _ = visibility_chain(build_bvh(scene2), scene2, (0, 0, 0), (0, 0, 5.0))
        assert v1 <= v0

    def test_coincident_endpoints_rejected(self):
        scene = make_scene([make_gaussian()])
        bvh = build_bvh(scene)
        with pytest.raises(DegeneratePlacementError):
            visibility_chain(bvh, scene, (1, 1, 1), (1, 1, 1))


class TestIncidentField:
    def _canonical_gaussian(self):
        # isotropic sigma=2 -> projected area 4*pi from any direction
        return make_gaussian(scale=(2.0, 2.0, 2.0))

    def test_zero_visibility(self):
        g = self._canonical_gaussian()
        tx = Antenna("tx", (0, 0, 1.0), 1.0, 1.0)
        sample = incident_field(tx, g, 0.0, 299792458.0)
        assert sample.field[0] == 0.0

    def test_all_factors_cancel(self):
        g = self._canonical_gaussian()
        tx = Antenna("tx", (0, 0, 1.0), 1.0, 1.0)
        sample = incident_field(tx, g, 1.0, 299792458.0)   # lambda = 1 m, d = 1
        assert sample.field[0] == pytest.approx(1.0 + 0.0j, abs=1e-12)
        assert np.allclose(sample.direction, (0, 0, -1.0))
        assert sample.solid_angle == 1.0

    def test_amplitude_halves_at_double_distance(self):
        g = self._canonical_gaussian()
        tx = Antenna("tx", (0, 0, 2.0), 1.0, 1.0)
        sample = incident_field(tx, g, 1.0, 299792458.0)   # d = 2, phase -4pi
        assert sample.field[0] == pytest.approx(0.5 + 0.0j, abs=1e-12)

    def test_friis_power_slope_and_phase(self):
        g = self._canonical_gaussian()
        lam = 0.125
        f = 299792458.0 / lam
        values = []
        for d in (1.0, 2.0, 4.0, 8.0):
            tx = Antenna("tx", (0, 0, d), 1.0, 1.0)
            values.append(incident_field(tx, g, 1.0, f).field[0])
        for k in range(3):
            drop = 10 * math.log10(abs(values[k]) ** 2 / abs(values[k + 1]) ** 2)
            assert drop == pytest.approx(6.0205999, abs=1e-6)
        # phase advances by -2 pi (d2 - d1) / lambda
        d1, d2 = 1.0, 2.0
        expected = (-2 * math.pi * (d2 - d1) / lam) % (2 * math.pi)
        got = (np.angle(values[1]) - np.angle(values[0])) % (2 * math.pi)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_degenerate_placement(self):
        g = self._canonical_gaussian()
        tx = Antenna("tx", (0, 0, 1e-9), 1.0, 1.0)
        with pytest.raises(DegeneratePlacementError):
            incident_field(tx, g, 1.0, 1e9)
