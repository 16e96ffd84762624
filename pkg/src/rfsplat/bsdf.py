"""Local scattering physics on a single Gaussian.

Conventions: omega_i points from the source toward the Gaussian, omega_o
from the Gaussian toward the receiver. Foreshortening uses max(0, -omega_i.n)
so illumination from behind the surface contributes nothing, and the
outgoing cosine is clamped to [0, 1] so back-hemisphere queries return 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import RFGaussian, SceneValidationError


@dataclass(frozen=True, eq=False)
class IncidentSample:
    """Incident field arriving from one direction.

    ``field`` is the complex amplitude per frequency sample; ``solid_angle``
    is the quadrature weight (1.0 for point sources, whose geometric
    spreading is already folded into the Friis stage).
    """

    direction: np.ndarray
    field: np.ndarray
    solid_angle: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise SceneValidationError("incident direction must be unit length")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "field", np.atleast_1d(np.asarray(self.field, dtype=np.complex128)))
        if self.solid_angle <= 0:
            raise SceneValidationError("solid angle must be > 0")


@dataclass(frozen=True, eq=False)
class ScatterQuery:
    direction: np.ndarray   # Gaussian -> receiver, unit
    freq_index: int = 0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise SceneValidationError("query direction must be unit length")
        object.__setattr__(self, "direction", d)


def specular_direction(omega_i: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror direction omega_i - 2 (omega_i . n) n."""
    omega_i = np.asarray(omega_i, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return omega_i - 2.0 * np.dot(omega_i, n) * n


def scattering_pattern(omega_o, omega_i, n, roughness: float, frequency: float | None = None) -> float:
    """Directive scattering lobe sqrt(cos theta_o) * ((1 + cos psi)/2)^R.

    ``frequency`` is accepted for signature compatibility but the base
    pattern is frequency independent; wideband behavior enters through the
    attribute modulation network instead.
    """
    omega_o = np.asarray(omega_o, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    cos_o = float(np.clip(np.dot(omega_o, n), 0.0, 1.0))
    if cos_o == 0.0:
        return 0.0
    spec = specular_direction(np.asarray(omega_i, dtype=np.float64), n)
    cos_psi = float(np.clip(np.dot(omega_o, spec), -1.0, 1.0))
    lobe = 0.5 * (1.0 + cos_psi)
    return float(np.sqrt(cos_o) * lobe ** roughness)


def local_scatter(g: RFGaussian, incidents, query: ScatterQuery) -> complex:
    """Outgoing complex amplitude for one query direction and frequency.

    s_out = sum_i Gamma * F(omega_o, omega_i) * s_in_i * max(0, -omega_i.n) * dOmega_i
    """
    gamma = g.gamma_mag * np.exp(1j * g.gamma_phase)
    out = 0.0 + 0.0j
    for sample in incidents:
        cos_in = max(0.0, float(np.dot(-sample.direction, g.normal)))
        if cos_in == 0.0:
            continue
        f = scattering_pattern(query.direction, sample.direction, g.normal, g.roughness)
        out += gamma * f * sample.field[query.freq_index] * cos_in * sample.solid_angle
    return complex(out)
