"""Generalized projections of a polytope: visibility, brightness and profile radii."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numba
import numpy as np

from .shape import ShapeParams, TriMesh, build_mesh

logger = logging.getLogger(__name__)

#: self-intersection offset along the facet normal, relative to the bounding radius
RAY_EPS = 1e-9


class ProfileError(RuntimeError):
    """A profile ray from the offset point hits no projected edge."""


@dataclass(frozen=True)
class VisibilitySet:
    """Facets in the visible-and-illuminated set and how they were found."""

    facet_flags: np.ndarray
    method: str = "ray-traced"

    @property
    def count(self) -> int:
        return int(self.facet_flags.sum())


@dataclass(frozen=True)
class ScatteringLaw:
    """Surface intensity R(mu, mu0); ``weight`` is the Lambert fraction of ``mixed``."""

    kind: str = "lommel-seeliger"
    albedo: float = 1.0
    weight: float = 0.1

    def __post_init__(self):
        if self.kind not in ("lambert", "lommel-seeliger", "mixed"):
            raise ValueError(f"unknown scattering law {self.kind!r}")
        if not self.albedo > 0:
            raise ValueError("albedo must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("mixing weight must lie in [0, 1]")

    def intensity(self, mu, mu0):
        mu = np.asarray(mu, dtype=float)
        mu0 = np.asarray(mu0, dtype=float)
        lambert = mu0
        denom = mu + mu0
        ls = np.divide(mu0, denom, out=np.zeros_like(denom), where=denom > 0)
        if self.kind == "lambert":
            r = lambert
        elif self.kind == "lommel-seeliger":
            r = ls
        else:
            r = self.weight * lambert + (1.0 - self.weight) * ls
        return self.albedo * r

    def to_dict(self) -> dict:
        return {"kind": self.kind, "albedo": self.albedo, "weight": self.weight}


def image_basis(omega, reference=(0.0, 0.0, 1.0)) -> Tuple[np.ndarray, np.ndarray]:
    """e1 = normalize(ref x omega) (x axis fallback), e2 = omega x e1."""
    omega = np.asarray(omega, dtype=float)
    e1 = np.cross(reference, omega)
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.cross((1.0, 0.0, 0.0), omega)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(omega, e1)
    return e1, e2 / np.linalg.norm(e2)


@dataclass(frozen=True)
class ProfileGeometry:
    """Viewing/illumination directions and image-plane frame of one profile image."""

    omega: np.ndarray
    omega0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    offset: Tuple[float, float] = (0.0, 0.0)
    angles: Tuple[float, ...] = ()

    @classmethod
    def from_directions(cls, omega, omega0, angles=(), offset=(0.0, 0.0), e1=None, e2=None):
        omega = np.asarray(omega, dtype=float)
        if e1 is None:
            e1, e2 = image_basis(omega)
        geom = cls(omega, np.asarray(omega0, dtype=float), np.asarray(e1, dtype=float),
                   np.asarray(e2, dtype=float), tuple(offset), tuple(float(a) for a in angles))
        geom.check()
        return geom

    def check(self) -> None:
        G = np.array([self.e1, self.e2, self.omega])
        if np.max(np.abs(G @ G.T - np.eye(3))) > 1e-12:
            raise ValueError("image-plane basis is not orthonormal and perpendicular to omega")


def project_point(vertex, geom: ProfileGeometry) -> np.ndarray:
    """Orthographic image-plane coordinates (<v, e1>, <v, e2>)."""
    v = np.asarray(vertex, dtype=float)
    return np.stack([v @ geom.e1, v @ geom.e2], axis=-1)


# --------------------------------------------------------------------------
# visibility
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _occluded(verts, facets, origins, cand, d, out):
    """out[i] = True when the ray origins[i] + t d (t > 0) hits another facet."""
    n_f = facets.shape[0]
    # frame perpendicular to d for the bounding-box prefilter
    if abs(d[0]) < 0.9:
        ax0, ax1, ax2 = 1.0, 0.0, 0.0
    else:
        ax0, ax1, ax2 = 0.0, 1.0, 0.0
    u0 = d[1] * ax2 - d[2] * ax1
    u1 = d[2] * ax0 - d[0] * ax2
    u2 = d[0] * ax1 - d[1] * ax0
    un = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
    u0 /= un
    u1 /= un
    u2 /= un
    w0 = d[1] * u2 - d[2] * u1
    w1 = d[2] * u0 - d[0] * u2
    w2 = d[0] * u1 - d[1] * u0
    n_v = verts.shape[0]
    pu = np.empty(n_v)
    pw = np.empty(n_v)
    pd = np.empty(n_v)
    for k in range(n_v):
        pu[k] = verts[k, 0] * u0 + verts[k, 1] * u1 + verts[k, 2] * u2
        pw[k] = verts[k, 0] * w0 + verts[k, 1] * w1 + verts[k, 2] * w2
        pd[k] = verts[k, 0] * d[0] + verts[k, 1] * d[1] + verts[k, 2] * d[2]
    bmin_u = np.empty(n_f)
    bmax_u = np.empty(n_f)
    bmin_w = np.empty(n_f)
    bmax_w = np.empty(n_f)
    bmax_d = np.empty(n_f)
    for j in range(n_f):
        a, b, c = facets[j, 0], facets[j, 1], facets[j, 2]
        bmin_u[j] = min(pu[a], pu[b], pu[c])
        bmax_u[j] = max(pu[a], pu[b], pu[c])
        bmin_w[j] = min(pw[a], pw[b], pw[c])
        bmax_w[j] = max(pw[a], pw[b], pw[c])
        bmax_d[j] = max(pd[a], pd[b], pd[c])
    for i in range(n_f):
        out[i] = False
        if not cand[i]:
            continue
        o0, o1, o2 = origins[i, 0], origins[i, 1], origins[i, 2]
        ou = o0 * u0 + o1 * u1 + o2 * u2
        ow = o0 * w0 + o1 * w1 + o2 * w2
        od = o0 * d[0] + o1 * d[1] + o2 * d[2]
        for j in range(n_f):
            if j == i:
                continue
            if bmax_d[j] <= od or ou < bmin_u[j] or ou > bmax_u[j] or ow < bmin_w[j] or ow > bmax_w[j]:
                continue
            # Moller-Trumbore
            a, b, c = facets[j, 0], facets[j, 1], facets[j, 2]
            e10 = verts[b, 0] - verts[a, 0]
            e11 = verts[b, 1] - verts[a, 1]
            e12 = verts[b, 2] - verts[a, 2]
            e20 = verts[c, 0] - verts[a, 0]
            e21 = verts[c, 1] - verts[a, 1]
            e22 = verts[c, 2] - verts[a, 2]
            p0 = d[1] * e22 - d[2] * e21
            p1 = d[2] * e20 - d[0] * e22
            p2 = d[0] * e21 - d[1] * e20
            det = e10 * p0 + e11 * p1 + e12 * p2
            if abs(det) < 1e-300:
                continue
            inv = 1.0 / det
            t0 = o0 - verts[a, 0]
            t1 = o1 - verts[a, 1]
            t2 = o2 - verts[a, 2]
            s = (t0 * p0 + t1 * p1 + t2 * p2) * inv
            if s < 0.0 or s > 1.0:
                continue
            q0 = t1 * e12 - t2 * e11
            q1 = t2 * e10 - t0 * e12
            q2 = t0 * e11 - t1 * e10
            v = (d[0] * q0 + d[1] * q1 + d[2] * q2) * inv
            if v < 0.0 or s + v > 1.0:
                continue
            t = (e20 * q0 + e21 * q1 + e22 * q2) * inv
            if t > 0.0:
                out[i] = True
                break


def normal_test(mesh: TriMesh, omega, omega0) -> np.ndarray:
    mu = mesh.normals @ np.asarray(omega, dtype=float)
    mu0 = mesh.normals @ np.asarray(omega0, dtype=float)
    return (mu > 0) & (mu0 > 0)


def classify_facets(mesh: TriMesh, omega, omega0, ray_trace: bool = True) -> VisibilitySet:
    """Facets that face both directions and whose centroid rays escape the body."""
    flags = normal_test(mesh, omega, omega0)
    if not ray_trace:
        return VisibilitySet(flags, "normal-test")
    eps = RAY_EPS * float(np.max(np.linalg.norm(mesh.vertices, axis=1)))
    origins = mesh.centroids + eps * mesh.normals
    blocked = np.empty(len(flags), dtype=np.bool_)
    omega = np.ascontiguousarray(omega, dtype=float)
    omega0 = np.ascontiguousarray(omega0, dtype=float)
    _occluded(mesh.vertices, mesh.facets, origins, flags, omega, blocked)
    flags = flags & ~blocked
    if not np.array_equal(omega, omega0):
        _occluded(mesh.vertices, mesh.facets, origins, flags, omega0, blocked)
        flags = flags & ~blocked
    return VisibilitySet(flags, "ray-traced")


# --------------------------------------------------------------------------
# brightness
# --------------------------------------------------------------------------

def disk_brightness(mesh: TriMesh, vis: VisibilitySet, omega, omega0, law: ScatteringLaw) -> float:
    """Disk-integrated brightness: sum over flagged facets of R * mu * area."""
    f = vis.facet_flags
    if not f.any():
        return 0.0
    n = mesh.normals[f]
    mu = n @ np.asarray(omega, dtype=float)
    mu0 = n @ np.asarray(omega0, dtype=float)
    return float(np.sum(law.intensity(mu, mu0) * mu * mesh.areas[f]))


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------

def _facet_edges(facets: np.ndarray) -> np.ndarray:
    e = np.concatenate([facets[:, [0, 1]], facets[:, [1, 2]], facets[:, [2, 0]]])
    return np.sort(e, axis=1)


def boundary_edges(mesh: TriMesh, vis: VisibilitySet) -> np.ndarray:
    """Edges bordered by exactly one flagged facet, as (k, 2) vertex pairs."""
    e = _facet_edges(mesh.facets[vis.facet_flags])
    if len(e) == 0:
        return e.reshape(0, 2)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def ray_segment_hits(origin, alphas, a, b):
    """Distances t >= 0 along rays (cos a, sin a) hitting segments [a, b]; NaN if none.

    Returns an array of shape (len(alphas), len(a)).
    """
    d = np.stack([np.cos(alphas), np.sin(alphas)], axis=1)[:, None, :]
    seg = (b - a)[None, :, :]
    rel = (a - origin)[None, :, :]
    den = d[..., 0] * seg[..., 1] - d[..., 1] * seg[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[..., 0] * seg[..., 1] - rel[..., 1] * seg[..., 0]) / den
        s = (rel[..., 0] * d[..., 1] - rel[..., 1] * d[..., 0]) / den
    ok = (np.abs(den) > 1e-15) & (s >= 0.0) & (s <= 1.0) & (t >= 0.0)
    return np.where(ok, t, np.nan)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    return weighted_vertex_normals(mesh.vertices.shape[0], mesh.facets, mesh.normals * mesh.areas[:, None])


def weighted_vertex_normals(n_vertices: int, facets: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    acc = np.zeros((n_vertices, 3))
    for k in range(3):
        np.add.at(acc, facets[:, k], weighted)
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def profile_facets(mesh: TriMesh, vis: VisibilitySet, omega, omega0, s=None) -> np.ndarray:
    """Flagged facets plus visible, unoccluded facets that straddle the terminator.

    The terminator is placed where the vertex-interpolated mu0 vanishes, so a facet
    whose own normal faces away from the sun can still be partly lit.
    """
    omega = np.ascontiguousarray(omega, dtype=float)
    if s is None:
        s = vertex_normals(mesh) @ np.asarray(omega0, dtype=float)
    mu = mesh.normals @ omega
    mu0 = mesh.normals @ np.asarray(omega0, dtype=float)
    extra = (mu > 0) & (mu0 <= 0) & (s[mesh.facets].max(axis=1) > 0)
    if extra.any():
        eps = RAY_EPS * float(np.max(np.linalg.norm(mesh.vertices, axis=1)))
        blocked = np.empty(len(extra), dtype=np.bool_)
        _occluded(mesh.vertices, mesh.facets, mesh.centroids + eps * mesh.normals, extra, omega, blocked)
        extra &= ~blocked
    return vis.facet_flags | extra


def lit_segments(facets: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Edges of the lit parts {s > 0} of the given facets, s linear over each facet.

    Returns (k, 2, 2) vertex pairs: endpoint (i, j) sits at v_i + t (v_j - v_i) with
    t = s_i / (s_i - s_j); i == j marks a mesh vertex.
    """
    sf = s[facets]
    lit = sf > 0
    full = lit.all(axis=1)
    f = facets[full]
    segs = [np.stack([np.stack([f[:, a], f[:, a]], 1), np.stack([f[:, b], f[:, b]], 1)], 1)
            for a, b in ((0, 1), (1, 2), (2, 0))]
    for tri in facets[lit.any(axis=1) & ~full]:
        poly = []
        for k in range(3):
            i, j = tri[k], tri[(k + 1) % 3]
            if s[i] > 0:
                poly.append((i, i))
            if (s[i] > 0) != (s[j] > 0):
                poly.append((i, j) if s[i] > 0 else (j, i))
        n = len(poly)
        segs.append(np.array([[poly[k], poly[(k + 1) % n]] for k in range(n)], dtype=facets.dtype))
    return np.concatenate(segs).reshape(-1, 2, 2)


def segment_points(vertices: np.ndarray, s: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Positions of encoded segment endpoints (see ``lit_segments``)."""
    i, j = ends[..., 0], ends[..., 1]
    si, sj = s[i], s[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(i == j, 0.0, si / (si - sj))
    return vertices[i] + t[..., None] * (vertices[j] - vertices[i])


def profile_radii(mesh: TriMesh, vis: VisibilitySet, geom: ProfileGeometry, alphas,
                  offset=None) -> np.ndarray:
    """Maximal radii from the offset point over the projected edges of the lit visible region."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    origin = np.asarray(geom.offset if offset is None else offset, dtype=float)
    s = vertex_normals(mesh) @ geom.omega0
    flags = profile_facets(mesh, vis, geom.omega, geom.omega0, s)
    ends = lit_segments(mesh.facets[flags], s)
    if len(ends) == 0:
        raise ProfileError("visible-and-illuminated set is empty")
    P = project_point(segment_points(mesh.vertices, s, ends), geom)
    t = ray_segment_hits(origin, alphas, P[:, 0], P[:, 1])
    hit = np.isfinite(t).any(axis=1)
    if not hit.all():
        bad = alphas[~hit]
        raise ProfileError(
            f"no projected edge intersects the ray at alpha={bad[0]:.4f} "
            f"(offset {tuple(origin)} outside the profile?)"
        )
    return np.nanmax(t, axis=1)


def profile_max_radius(mesh: TriMesh, vis: VisibilitySet, geom: ProfileGeometry, alpha: float) -> float:
    return float(profile_radii(mesh, vis, geom, [alpha])[0])


def boundary_crossings(mesh: TriMesh, vis: VisibilitySet, geom: ProfileGeometry, alphas,
                       offset=None) -> np.ndarray:
    """Number of boundary-circuit crossings along each profile ray."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    origin = np.asarray(geom.offset if offset is None else offset, dtype=float)
    be = boundary_edges(mesh, vis)
    P = project_point(mesh.vertices, geom)
    t = ray_segment_hits(origin, alphas, P[be[:, 0]], P[be[:, 1]])
    return np.isfinite(t).sum(axis=1)


def render_profile(params: ShapeParams, image_index: int, geom: ProfileGeometry,
                   mesh_subdivision: int, mesh: TriMesh = None) -> List[Tuple[float, float]]:
    """(alpha, r_max) pairs of one image, using the image's fitted offset."""
    if not geom.angles:
        raise ValueError("profile geometry has no angles")
    if mesh is None:
        mesh = build_mesh(params, mesh_subdivision)
    vis = classify_facets(mesh, geom.omega, geom.omega0)
    offset = params.offsets[image_index] if params.offsets else geom.offset
    r = profile_radii(mesh, vis, geom, geom.angles, offset)
    crossings = boundary_crossings(mesh, vis, geom, geom.angles, offset)
    if np.any(crossings > 2):
        logger.warning("image %d: %d profile rays cross the boundary more than twice",
                       image_index, int(np.sum(crossings > 2)))
    return list(zip(geom.angles, r.tolist()))


def brightness_table(mesh: TriMesh, directions: Sequence[Tuple[np.ndarray, np.ndarray]],
                     law: ScatteringLaw) -> np.ndarray:
    """Brightness for a list of body-frame (omega, omega0) pairs."""
    out = np.empty(len(directions))
    for k, (w, w0) in enumerate(directions):
        out[k] = disk_brightness(mesh, classify_facets(mesh, w, w0), w, w0, law)
    return out
