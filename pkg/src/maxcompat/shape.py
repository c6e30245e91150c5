"""Starlike body model: exponential spherical-harmonics radius, icosphere meshing, spin.

Real spherical harmonics convention (used everywhere in the package)::

    Y_l^0  = N_l^0 P_l(cos t)
    Y_l^m  = sqrt(2) N_l^m P_l^m(cos t) cos(m p)      m > 0
    Y_l^-m = sqrt(2) N_l^m P_l^m(cos t) sin(m p)      m > 0

with N_l^m = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) and P_l^m the associated
Legendre function *without* the Condon-Shortley factor (-1)^m. The set is
orthonormal on the unit sphere and Y_1^1 is proportional to +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

#: exponent cap of the radius series; beyond it exp() is treated as overflow
EXPONENT_CAP = 50.0
#: default truncation of the inversion model
DEFAULT_LMAX = 8
DEFAULT_MMAX = 6


class ShapeOverflowError(ArithmeticError):
    """Raised when the radius exponent exceeds :data:`EXPONENT_CAP`."""


# --------------------------------------------------------------------------
# spherical harmonics
# --------------------------------------------------------------------------

def eval_sh_basis(l: int, m: int, theta, phi):
    """Real orthonormal spherical harmonic Y_l^m(theta, phi).

    ``theta`` is the polar angle in [0, pi], ``phi`` the azimuth. Scalars or
    broadcastable arrays are accepted.
    """
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid spherical harmonic degree/order (l={l}, m={m})")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    am = abs(m)
    y = special.sph_harm_y(l, am, theta, phi)
    if m == 0:
        out = y.real
    else:
        # scipy includes the Condon-Shortley phase; (-1)^m removes it
        sign = -1.0 if am % 2 else 1.0
        part = y.real if m > 0 else y.imag
        out = math.sqrt(2.0) * sign * part
    return float(out) if out.ndim == 0 else out


def coefficient_keys(l_max: int, m_max: Optional[int] = None) -> List[Tuple[int, int]]:
    """Ordered (l, m) keys with |m| <= min(l, m_max)."""
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    m_cap = l_max if m_max is None else m_max
    return [(l, m) for l in range(l_max + 1) for m in range(-min(l, m_cap), min(l, m_cap) + 1)]


def sh_matrix(keys: Sequence[Tuple[int, int]], theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Basis matrix B[k, j] = Y_{l_j}^{m_j}(theta_k, phi_k)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    B = np.empty((theta.size, len(keys)))
    for j, (l, m) in enumerate(keys):
        B[:, j] = eval_sh_basis(l, m, theta, phi)
    return B


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinState:
    """Rotation state; pole angles in radians (ecliptic), period in hours."""

    pole_lon: float = 0.0
    pole_lat: float = math.pi / 2
    period: float = 1.0
    phase0: float = 0.0
    epoch: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("rotation period must be positive")
        if not -math.pi / 2 - 1e-15 <= self.pole_lat <= math.pi / 2 + 1e-15:
            raise ValueError("pole latitude must lie in [-pi/2, pi/2]")

    def rotation_angle(self, time: float) -> float:
        return self.phase0 + 2.0 * math.pi * (time - self.epoch) / self.period


@dataclass(frozen=True)
class ShapeParams:
    """Shape coefficients c_lm, spin state and per-image profile offsets."""

    coeffs: Dict[Tuple[int, int], float]
    spin: SpinState = field(default_factory=SpinState)
    offsets: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        for (l, m) in self.coeffs:
            if l < 0 or abs(m) > l:
                raise ValueError(f"invalid coefficient key ({l}, {m})")
        object.__setattr__(
            self, "offsets", tuple((float(a), float(b)) for a, b in self.offsets)
        )

    @property
    def l_max(self) -> int:
        return max((l for l, _ in self.coeffs), default=0)

    @classmethod
    def sphere(cls, radius: float = 1.0, l_max: int = 0, m_max: Optional[int] = None,
               spin: Optional[SpinState] = None, n_images: int = 0) -> "ShapeParams":
        coeffs = {k: 0.0 for k in coefficient_keys(l_max, m_max)}
        coeffs[(0, 0)] = math.log(radius) * math.sqrt(4.0 * math.pi)
        return cls(coeffs, spin or SpinState(), ((0.0, 0.0),) * n_images)

    def replace(self, **changes) -> "ShapeParams":
        kw = dict(coeffs=self.coeffs, spin=self.spin, offsets=self.offsets)
        kw.update(changes)
        return ShapeParams(**kw)


def eval_radius(params: ShapeParams, theta, phi):
    """r(theta, phi) = exp(sum c_lm Y_l^m(theta, phi))."""
    expo = np.zeros(np.broadcast(np.asarray(theta), np.asarray(phi)).shape)
    for (l, m), c in params.coeffs.items():
        if c != 0.0:
            expo = expo + c * eval_sh_basis(l, m, theta, phi)
    return _exp_capped(expo)


def _exp_capped(expo):
    expo = np.asarray(expo, dtype=float)
    if not np.all(np.isfinite(expo)) or np.any(expo > EXPONENT_CAP):
        raise ShapeOverflowError(
            f"radius exponent {np.nanmax(expo):.3g} exceeds cap {EXPONENT_CAP}"
        )
    out = np.exp(expo)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# meshing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TriMesh:
    """Triangulated polytope with per-facet outward unit normals and areas."""

    vertices: np.ndarray
    facets: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, facets) -> "TriMesh":
        v = np.ascontiguousarray(vertices, dtype=float)
        f = np.ascontiguousarray(facets, dtype=np.int64)
        cross = facet_cross(v, f)
        norm = np.linalg.norm(cross, axis=1)
        normals = cross / np.where(norm > 0, norm, 1.0)[:, None]
        for arr in (v, f, normals):
            arr.setflags(write=False)
        areas = 0.5 * norm
        areas.setflags(write=False)
        return cls(v, f, normals, areas)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def volume(self) -> float:
        tri = self.vertices[self.facets]
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def scaled(self, s: float) -> "TriMesh":
        return TriMesh.from_arrays(self.vertices * s, self.facets)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        e = np.concatenate([self.facets[:, [0, 1]], self.facets[:, [1, 2]], self.facets[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def check(self, starlike: bool = True) -> None:
        """Raise ValueError if a mesh invariant is violated."""
        n = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(n - 1.0) > 1e-12):
            raise ValueError("facet normals are not unit length")
        closure = np.linalg.norm((self.normals * self.areas[:, None]).sum(axis=0))
        if closure > 1e-9 * self.total_area:
            raise ValueError(f"mesh is not closed (|sum area*normal| = {closure:.3g})")
        if starlike and np.any(np.einsum("ij,ij->i", self.normals, self.centroids) <= 0):
            raise ValueError("facet normal points inward")

    def to_obj(self, path) -> None:
        with open(path, "w") as fh:
            for x, y, z in self.vertices:
                fh.write(f"v {x:.12g} {y:.12g} {z:.12g}\n")
            for a, b, c in self.facets + 1:
                fh.write(f"f {a} {b} {c}\n")


def facet_cross(vertices: np.ndarray, facets: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[facets[:, k]] for k in range(3))
    return np.cross(b - a, c - a)


_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = [
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
]
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


@lru_cache(maxsize=16)
def icosphere(subdivision: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-sphere node directions and counter-clockwise facets (20 * 4**k)."""
    if subdivision < 0:
        raise ValueError("subdivision must be >= 0")
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)
    for _ in range(subdivision):
        cache: Dict[Tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    dirs = np.array(verts)
    tri = np.array(faces, dtype=np.int64)
    dirs.setflags(write=False)
    tri.setflags(write=False)
    return dirs, tri


def direction_angles(dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return theta, phi


@lru_cache(maxsize=32)
def node_basis(subdivision: int, keys: Tuple[Tuple[int, int], ...]) -> np.ndarray:
    """SH basis evaluated at the icosphere nodes (cached; read-only)."""
    dirs, _ = icosphere(subdivision)
    B = sh_matrix(keys, *direction_angles(dirs))
    B.setflags(write=False)
    return B


def build_mesh(params: ShapeParams, subdivision: int) -> TriMesh:
    """Polytope with icosphere nodes pushed out to r(theta, phi)."""
    dirs, faces = icosphere(subdivision)
    keys = tuple(params.coeffs)
    c = np.array([params.coeffs[k] for k in keys])
    r = _exp_capped(node_basis(subdivision, keys) @ c)
    return TriMesh.from_arrays(dirs * r[:, None], faces)


# --------------------------------------------------------------------------
# spin / frames
# --------------------------------------------------------------------------

def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def ecliptic_to_body(spin: SpinState, time: float) -> np.ndarray:
    """Matrix taking ecliptic vectors into the rotating body frame.

    The body z axis is the pole; the frame is first tilted so the pole maps
    onto +z and then counter-rotated by the rotation angle, i.e. directions
    move while the body stays fixed.
    """
    tilt = rot_y(-(math.pi / 2 - spin.pole_lat)) @ rot_z(-spin.pole_lon)
    return rot_z(-spin.rotation_angle(time)) @ tilt


def body_frame_directions(spin: SpinState, time: float, omega_ecl, omega0_ecl):
    """Viewing and illumination directions in the body frame."""
    M = ecliptic_to_body(spin, time)
    out = []
    for v in (omega_ecl, omega0_ecl):
        v = np.asarray(v, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("direction is not unit length")
        out.append(M @ v)
    return out[0], out[1]


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def shape_to_dict(params: ShapeParams) -> dict:
    s = params.spin
    out = {
        "l_max": params.l_max,
        "coeffs": [{"l": l, "m": m, "value": v} for (l, m), v in params.coeffs.items()],
        "spin": {
            "pole_lon_deg": math.degrees(s.pole_lon),
            "pole_lat_deg": math.degrees(s.pole_lat),
            "period_h": s.period,
            "phase0_deg": math.degrees(s.phase0),
            "epoch": s.epoch,
        },
    }
    if params.offsets:
        out["offsets"] = [list(o) for o in params.offsets]
    return out


def shape_from_dict(d: dict) -> ShapeParams:
    l_max = int(d["l_max"])
    coeffs = {k: 0.0 for k in coefficient_keys(l_max)}
    for item in d.get("coeffs", []):
        key = (int(item["l"]), int(item["m"]))
        if key[0] > l_max or abs(key[1]) > key[0]:
            raise ValueError(f"coefficient {key} outside l_max={l_max}")
        coeffs[key] = float(item["value"])
    sp = d.get("spin", {})
    spin = SpinState(
        pole_lon=math.radians(sp.get("pole_lon_deg", 0.0)),
        pole_lat=math.radians(sp.get("pole_lat_deg", 90.0)),
        period=float(sp.get("period_h", 1.0)),
        phase0=math.radians(sp.get("phase0_deg", 0.0)),
        epoch=float(sp.get("epoch", 0.0)),
    )
    offsets = tuple(tuple(o) for o in d.get("offsets", []))
    return ShapeParams(coeffs, spin, offsets)


def parse_shape_json(path) -> ShapeParams:
    path = Path(path)
    try:
        return shape_from_dict(json.loads(path.read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: invalid shape file ({exc})") from exc


def write_shape_json(params: ShapeParams, path) -> None:
    Path(path).write_text(json.dumps(shape_to_dict(params), indent=2))


def random_directions(n: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform directions (Fibonacci lattice; ``seed`` rotates it)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i + 2.0 * math.pi * np.random.default_rng(seed).random()
    rho = np.sqrt(1.0 - z * z)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])

