"""Synthetic observing geometries and noisy brightness/profile data with known truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .gof import BrightnessData, ProfileData, ProfileImage, model_brightness
from .projection import ScatteringLaw, classify_facets, profile_radii
from .shape import ShapeParams, SpinState, build_mesh, coefficient_keys


@dataclass(frozen=True)
class NoiseSpec:
    """Relative Gaussian noise levels; zero noise writes unit sigmas."""

    sigma_L: float = 0.0
    sigma_r: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_L < 0 or self.sigma_r < 0:
            raise ValueError("noise levels must be non-negative")


#: ground truth used by the end-to-end tests (l_max = 4, mean radius ~ 1)
TRUTH_COEFFS = {
    (1, 0): 0.03, (1, 1): -0.02,
    (2, -2): 0.05, (2, 0): -0.15, (2, 1): 0.03, (2, 2): 0.12,
    (3, -3): 0.04, (3, -1): -0.03, (3, 0): 0.02, (3, 2): 0.03,
    (4, -2): 0.02, (4, 0): 0.025, (4, 3): -0.02, (4, 4): 0.025,
}
TRUTH_SPIN = SpinState(pole_lon=math.radians(40.0), pole_lat=math.radians(55.0),
                       period=7.8, phase0=0.0, epoch=0.0)


def truth_shape(n_images: int = 5, seed: int = 1) -> ShapeParams:
    coeffs = {k: 0.0 for k in coefficient_keys(4)}
    coeffs.update(TRUTH_COEFFS)
    rng = np.random.default_rng(seed)
    offsets = tuple(tuple(v) for v in rng.uniform(-0.05, 0.05, size=(n_images, 2)))
    return ShapeParams(coeffs, TRUTH_SPIN, offsets)


def _unit(lon, lat):
    return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


def _sun_direction(omega, phase, roll):
    """Unit vector at angle ``phase`` from ``omega``, rolled by ``roll`` about it."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(omega[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(omega, ref)
    u /= np.linalg.norm(u)
    v = np.cross(omega, u)
    perp = math.cos(roll) * u + math.sin(roll) * v
    return math.cos(phase) * omega + math.sin(phase) * perp


def default_geometries(spin: SpinState, m: int = 20, n_images: int = 5,
                       phase_range: Tuple[float, float] = (10.0, 25.0)):
    """Brightness epochs and profile-image geometries (ecliptic frame).

    Observer longitudes follow a golden-angle sequence and latitudes sweep
    +-40 deg so the aspect varies; solar phase angles lie in ``phase_range``
    degrees; epochs sample the whole rotation.
    """
    golden = math.pi * (3.0 - math.sqrt(5.0))
    epochs = []
    for k in range(m):
        lon = (k * golden) % (2 * math.pi)
        lat = math.radians(40.0) * math.sin(2 * math.pi * (k + 0.5) / m * 2.0)
        w = _unit(lon, lat)
        phase = math.radians(phase_range[0] + (phase_range[1] - phase_range[0]) * k / max(m - 1, 1))
        w0 = _sun_direction(w, phase, roll=1.3 * k)
        t = spin.epoch + spin.period * ((k * 0.618034) % 1.0 + 3 * k)
        epochs.append((t, w, w0))
    images = []
    for i in range(n_images):
        lon = 2 * math.pi * i / n_images + 0.3
        lat = math.radians(-35.0 + 70.0 * i / max(n_images - 1, 1))
        w = _unit(lon, lat)
        w0 = _sun_direction(w, math.radians(12.0 + 2.0 * i), roll=0.7 * i)
        t = spin.epoch + spin.period * (i / n_images + 11 * i + 0.05)
        images.append((t, w, w0))
    return epochs, images


def simulate_data(truth: ShapeParams, law: ScatteringLaw, subdivision: int, noise: NoiseSpec,
                  m: int = 20, n_images: int = 5, n_angles: int = 36,
                  geometries=None) -> Tuple[BrightnessData, ProfileData]:
    """Noisy brightnesses and profile radii of ``truth`` (Gaussian, relative sigmas)."""
    rng = np.random.default_rng(noise.seed)
    if geometries is None:
        geometries = default_geometries(truth.spin, m, n_images)
    epochs, images = geometries
    mesh = build_mesh(truth, subdivision)
    times = np.array([e[0] for e in epochs])
    W = np.array([e[1] for e in epochs])
    W0 = np.array([e[2] for e in epochs])
    clean = BrightnessData(times, W, W0, np.ones(len(times)), np.ones(len(times)))
    L = model_brightness(clean, truth, law, subdivision, mesh=mesh)
    sig_L = noise.sigma_L * L if noise.sigma_L > 0 else np.ones_like(L)
    L_obs = L + (rng.standard_normal(L.size) * sig_L if noise.sigma_L > 0 else 0.0)
    bright = BrightnessData(times, W, W0, np.maximum(L_obs, 0.0), sig_L)

    alphas = 2 * math.pi * np.arange(n_angles) / n_angles
    ims = []
    for i, (t, w, w0) in enumerate(images):
        probe = ProfileImage(i, t, w, w0, alphas, np.ones(n_angles), np.ones(n_angles))
        geom = probe.geometry(truth)
        vis = classify_facets(mesh, geom.omega, geom.omega0)
        offset = truth.offsets[i] if i < len(truth.offsets) else (0.0, 0.0)
        r = profile_radii(mesh, vis, geom, alphas, offset)
        sig = noise.sigma_r * r if noise.sigma_r > 0 else np.ones_like(r)
        r_obs = r + (rng.standard_normal(r.size) * sig if noise.sigma_r > 0 else 0.0)
        ims.append(ProfileImage(i, t, w, w0, alphas, r_obs, sig))
    return bright, ProfileData(tuple(ims))
