"""Goodness-of-fit measures for brightness and profile data, plus the smoothness penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .projection import (
    ProfileError,
    ProfileGeometry,
    ScatteringLaw,
    classify_facets,
    disk_brightness,
    image_basis,
    profile_radii,
)
from .shape import ShapeParams, TriMesh, build_mesh, ecliptic_to_body

#: chi-square values are floored here before any logarithm is taken
CHI2_FLOOR = 1e-30


def _unit_rows(a, what: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    bad = np.abs(np.linalg.norm(a, axis=1) - 1.0) > 1e-6
    if bad.any():
        raise ValueError(f"{what}: row {int(np.argmax(bad))} is not a unit vector")
    return a


@dataclass(frozen=True)
class BrightnessData:
    """Disk-integrated brightness records; directions are ecliptic unit vectors."""

    times: np.ndarray
    omega: np.ndarray
    omega0: np.ndarray
    L_obs: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("times", "L_obs", "sigma"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "omega", _unit_rows(self.omega, "omega"))
        object.__setattr__(self, "omega0", _unit_rows(self.omega0, "omega0"))
        m = len(self.times)
        if m < 1:
            raise ValueError("brightness data must hold at least one record")
        if not all(len(a) == m for a in (self.omega, self.omega0, self.L_obs, self.sigma)):
            raise ValueError("brightness arrays have inconsistent lengths")
        if np.any(self.sigma <= 0):
            raise ValueError("brightness sigma must be positive")
        if np.any(self.L_obs < 0):
            raise ValueError("observed brightness must be non-negative")

    @property
    def m(self) -> int:
        return len(self.times)

    def subset(self, idx) -> "BrightnessData":
        return BrightnessData(self.times[idx], self.omega[idx], self.omega0[idx],
                              self.L_obs[idx], self.sigma[idx])


@dataclass(frozen=True)
class ProfileImage:
    """One profile image: observing geometry and sampled maximal radii."""

    image_id: int
    time: float
    omega: np.ndarray
    omega0: np.ndarray
    alphas: np.ndarray
    r_obs: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("alphas", "r_obs", "sigma"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "omega", _unit_rows(self.omega, "omega")[0])
        object.__setattr__(self, "omega0", _unit_rows(self.omega0, "omega0")[0])
        if not (len(self.alphas) == len(self.r_obs) == len(self.sigma)) or len(self.alphas) == 0:
            raise ValueError(f"image {self.image_id}: inconsistent or empty profile arrays")
        if np.any(np.diff(self.alphas) <= 0):
            raise ValueError(f"image {self.image_id}: angles must be strictly increasing")
        if np.any(self.r_obs <= 0) or np.any(self.sigma <= 0):
            raise ValueError(f"image {self.image_id}: radii and sigma must be positive")

    def geometry(self, params: ShapeParams) -> ProfileGeometry:
        """Body-frame geometry; the image-plane axes are fixed on the sky (ecliptic z)."""
        M = ecliptic_to_body(params.spin, self.time)
        e1, e2 = image_basis(self.omega)
        return ProfileGeometry(M @ self.omega, M @ self.omega0, M @ e1, M @ e2,
                               angles=tuple(self.alphas))


@dataclass(frozen=True)
class ProfileData:
    images: Tuple[ProfileImage, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if self.n_points < 1:
            raise ValueError("profile data must hold at least one point")

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def n_points(self) -> int:
        return sum(len(im.alphas) for im in self.images)


@dataclass
class ModeEvaluator:
    """A named chi-square function of the parameter vector.

    ``residuals`` (optional) returns r with chi2 = sum(r**2) and ``jacobian``
    its derivative; both enable the structured Gauss-Newton path in the optimizer.
    """

    name: str
    eval: Callable[[np.ndarray], float]
    n_points: int
    epsilon: Optional[float] = None
    residuals: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    regularizer: bool = False

    def __call__(self, P) -> float:
        return float(self.eval(np.asarray(P, dtype=float)))

    @classmethod
    def from_residuals(cls, name, residuals, n_points, jacobian=None, epsilon=None, regularizer=False):
        def chi2(P):
            r = residuals(P)
            return float(r @ r)
        return cls(name, chi2, n_points, epsilon, residuals, jacobian, regularizer)

    def scaled(self, c: float) -> "ModeEvaluator":
        """The same mode with chi2 multiplied by c."""
        s = math.sqrt(c)
        res = jac = None
        if self.residuals is not None:
            res = lambda P, f=self.residuals: s * f(P)
        if self.jacobian is not None:
            jac = lambda P, f=self.jacobian: s * f(P)
        eps = None if self.epsilon is None else c * self.epsilon
        return ModeEvaluator(self.name, lambda P, f=self.eval: c * f(P), self.n_points, eps,
                             res, jac, self.regularizer)


# --------------------------------------------------------------------------
# chi-square measures
# --------------------------------------------------------------------------

def model_brightness(data: BrightnessData, params: ShapeParams, law: ScatteringLaw,
                     subdivision: int, mesh: TriMesh = None) -> np.ndarray:
    mesh = build_mesh(params, subdivision) if mesh is None else mesh
    out = np.empty(data.m)
    for i in range(data.m):
        M = ecliptic_to_body(params.spin, data.times[i])
        w, w0 = M @ data.omega[i], M @ data.omega0[i]
        out[i] = disk_brightness(mesh, classify_facets(mesh, w, w0), w, w0, law)
    return out


def chi2_brightness(data: BrightnessData, params: ShapeParams, law: ScatteringLaw,
                    subdivision: int) -> float:
    r = (data.L_obs - model_brightness(data, params, law, subdivision)) / data.sigma
    return float(r @ r)


def model_profiles(data: ProfileData, params: ShapeParams, subdivision: int,
                   mesh: TriMesh = None) -> List[np.ndarray]:
    mesh = build_mesh(params, subdivision) if mesh is None else mesh
    out = []
    for i, im in enumerate(data.images):
        geom = im.geometry(params)
        vis = classify_facets(mesh, geom.omega, geom.omega0)
        offset = params.offsets[i] if params.offsets else (0.0, 0.0)
        try:
            out.append(profile_radii(mesh, vis, geom, im.alphas, offset))
        except ProfileError as exc:
            raise ProfileError(f"image {i} (id {im.image_id}): {exc}") from exc
    return out


def chi2_profile(data: ProfileData, params: ShapeParams, subdivision: int) -> float:
    total = 0.0
    for im, r_mod in zip(data.images, model_profiles(data, params, subdivision)):
        r = (im.r_obs - r_mod) / im.sigma
        total += float(r @ r)
    return total


def regularizer_weights(keys: Sequence[Tuple[int, int]]) -> np.ndarray:
    """sqrt of the penalty weights: l(l+1) per coefficient (0 for l = 0)."""
    return np.array([l * (l + 1.0) for l, _ in keys])


def regularizer(params: ShapeParams) -> float:
    """Angular-Laplacian smoothness penalty sum [l(l+1)]^2 c_lm^2 over l >= 1."""
    return float(sum((l * (l + 1.0)) ** 2 * c * c for (l, m), c in params.coeffs.items() if l >= 1))


def rms_deviation(chi2: float, n_points: int) -> float:
    if n_points < 1:
        raise ValueError("rms deviation needs at least one data point")
    if chi2 < 0:
        raise ValueError("chi-square must be non-negative")
    return math.sqrt(chi2 / n_points)


def floored(chi2):
    return np.maximum(chi2, CHI2_FLOOR)
