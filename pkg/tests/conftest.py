import numpy as np
import pytest

from rfsplat.scene import Aabb, Antenna, RFGaussian, Scene


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_gaussian(mu=(0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0), rotation=(1.0, 0.0, 0.0, 0.0),
                  normal=(0.0, 0.0, 1.0), **attrs):
    return RFGaussian(mu=np.asarray(mu, dtype=float), scale=np.asarray(scale, dtype=float),
                      rotation=np.asarray(rotation, dtype=float),
                      normal=np.asarray(normal, dtype=float), **attrs)


def make_scene(gaussians, pad=5.0, frozen=True):
    if gaussians:
        mus = np.array([g.mu for g in gaussians])
        lo = mus.min(axis=0) - pad
        hi = mus.max(axis=0) + pad
    else:
        lo, hi = np.full(3, -pad), np.full(3, pad)
    return Scene(tuple(gaussians), Aabb(lo, hi), geometry_frozen=frozen)


def canonical_monostatic():
    """Single-Gaussian configuration where every forward factor is 1:

    isotropic sigma=2 (area 4*pi), Tx/Rx co-located 1 m above along the
    normal, lambda = 1 m, P=G=1, |Gamma|=1, phase 0.
    """
    g = make_gaussian(scale=(2.0, 2.0, 2.0), alpha=0.5, roughness=2.0,
                      gamma_mag=1.0, gamma_phase=0.0)
    scene = make_scene([g])
    from rfsplat.scene import C_LIGHT

    tx = Antenna("tx", [0.0, 0.0, 1.0], 1.0, 1.0)
    rx = Antenna("rx", [0.0, 0.0, 1.0])
    return scene, tx, rx, C_LIGHT / 1.0
