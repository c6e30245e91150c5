"""The shape inverse problem as a pair of chi-square modes over a flat parameter vector.

Parameter vector layout: the c_lm coefficients in :func:`coefficient_keys`
order, then (x, y) profile offsets per image. The spin state is held fixed.

Derivatives use central differences with the visibility flags and the active
(outermost) profile edges frozen at the base point; both are piecewise
constant in the parameters, so this is the derivative almost everywhere.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import sparse

from .gof import BrightnessData, ModeEvaluator, ProfileData, regularizer_weights
from .projection import (
    ProfileError,
    ScatteringLaw,
    classify_facets,
    lit_segments,
    profile_facets,
    ray_segment_hits,
    segment_points,
    weighted_vertex_normals,
)
from .shape import (
    ShapeParams,
    SpinState,
    _exp_capped,
    build_mesh,
    coefficient_keys,
    ecliptic_to_body,
    icosphere,
    node_basis,
    random_directions,
    sh_matrix,
    direction_angles,
)

logger = logging.getLogger(__name__)


@dataclass
class _State:
    flags_L: np.ndarray           # (m, F) brightness visibility
    flags_img: List[np.ndarray]   # per image (F,) visibility
    active: List[np.ndarray]      # per image (n_angles, 2, 2) encoded endpoints of outermost segment


class ShapeProblem:
    """Brightness (+ absorbed smoothness penalty) and profile chi-square modes."""

    def __init__(self, brightness: BrightnessData, profiles: ProfileData, law: ScatteringLaw,
                 spin: SpinState, l_max: int = 8, m_max: Optional[int] = 6, subdivision: int = 3,
                 reg_weight: float = 0.0, fd_step: float = 1e-6):
        self.brightness = brightness
        self.profiles = profiles
        self.law = law
        self.spin = spin
        self.subdivision = subdivision
        self.reg_weight = reg_weight
        self.keys = tuple(coefficient_keys(l_max, m_max))
        self.n_coeffs = len(self.keys)
        self.n_images = profiles.n
        self.n_params = self.n_coeffs + 2 * self.n_images
        self.dirs, self.faces = icosphere(subdivision)
        self.B = node_basis(subdivision, self.keys)
        self.reg_w = math.sqrt(reg_weight) * regularizer_weights(self.keys)
        # spin is fixed: body-frame geometry is computed once
        Ms = [ecliptic_to_body(spin, t) for t in brightness.times]
        self.W = np.array([M @ w for M, w in zip(Ms, brightness.omega)])
        self.W0 = np.array([M @ w for M, w in zip(Ms, brightness.omega0)])
        self.geoms = [im.geometry(ShapeParams({}, spin)) for im in profiles.images]
        self.r_scale = float(np.mean(np.concatenate([im.r_obs for im in profiles.images])))
        self.fd_step = fd_step
        n_f = len(self.faces)
        self._incidence = sparse.csr_matrix(
            (np.ones(3 * n_f), (self.faces.T.ravel(), np.tile(np.arange(n_f), 3))),
            shape=(len(self.dirs), n_f))
        self._cache: "OrderedDict[bytes, tuple]" = OrderedDict()
        self.n_full_evals = 0

    # -- parameter packing --------------------------------------------------

    @property
    def scales(self) -> tuple:
        return (0.1,) * self.n_coeffs + (0.1 * self.r_scale,) * (2 * self.n_images)

    def pack(self, params: ShapeParams) -> np.ndarray:
        c = [params.coeffs.get(k, 0.0) for k in self.keys]
        offs = list(params.offsets) or [(0.0, 0.0)] * self.n_images
        return np.concatenate([c, np.ravel(offs)]).astype(float)

    def unpack(self, x) -> ShapeParams:
        x = np.asarray(x, dtype=float)
        coeffs = dict(zip(self.keys, x[: self.n_coeffs].tolist()))
        offs = x[self.n_coeffs:].reshape(-1, 2)
        return ShapeParams(coeffs, self.spin, tuple(map(tuple, offs)))

    def initial_guess(self) -> np.ndarray:
        """Sphere whose size matches the mean observed profile radius."""
        x = np.zeros(self.n_params)
        x[self.keys.index((0, 0))] = math.log(self.r_scale) * math.sqrt(4 * math.pi)
        return x

    # -- forward model ---------------------------------------------------------

    def vertices(self, x) -> np.ndarray:
        r = _exp_capped(self.B @ np.asarray(x[: self.n_coeffs]))
        return self.dirs * r[:, None]

    def _facets(self, V):
        a, b, c = (V[self.faces[:, k]] for k in range(3))
        N = np.cross(b - a, c - a)
        nn = np.linalg.norm(N, axis=1)
        return N / nn[:, None], 0.5 * nn

    def _brightness(self, normals, areas, flags):
        mu = normals @ self.W.T
        mu0 = normals @ self.W0.T
        contrib = self.law.intensity(np.maximum(mu, 0), np.maximum(mu0, 0)) * mu * areas[:, None]
        return np.sum(np.where(flags.T, contrib, 0.0), axis=0)

    def _full_state(self, x):
        """Ray-traced evaluation; returns (L_model, r_model list, state)."""
        from .shape import TriMesh

        self.n_full_evals += 1
        V = self.vertices(x)
        mesh = TriMesh.from_arrays(V, self.faces)
        flags_L = np.array([classify_facets(mesh, w, w0).facet_flags for w, w0 in zip(self.W, self.W0)])
        L = self._brightness(mesh.normals, mesh.areas, flags_L)
        offs = np.asarray(x[self.n_coeffs:]).reshape(-1, 2)
        r_mod, flags_img, active = [], [], []
        Nv = weighted_vertex_normals(len(V), self.faces, mesh.normals * mesh.areas[:, None])
        for i, (im, g) in enumerate(zip(self.profiles.images, self.geoms)):
            s = Nv @ g.omega0
            f = profile_facets(mesh, classify_facets(mesh, g.omega, g.omega0), g.omega, g.omega0, s)
            ends = lit_segments(self.faces[f], s)
            if len(ends) == 0:
                raise ProfileError(f"image {i}: visible-and-illuminated set is empty")
            Q = segment_points(V, s, ends)
            P2 = np.stack([Q @ g.e1, Q @ g.e2], axis=-1)
            t = ray_segment_hits(offs[i], im.alphas, P2[:, 0], P2[:, 1])
            ok = np.isfinite(t).any(axis=1)
            if not ok.all():
                raise ProfileError(f"image {i}: ray at alpha={im.alphas[~ok][0]:.4f} misses the profile")
            k = np.nanargmax(t, axis=1)
            r_mod.append(t[np.arange(len(k)), k])
            flags_img.append(f)
            active.append(ends[k])
        return L, r_mod, _State(flags_L, flags_img, active)

    def _frozen(self, X, state: _State):
        """Frozen-flag model for a batch of parameter vectors X (K, n); returns L (K, m), r (K, n_r)."""
        X = np.atleast_2d(X)
        V = self.dirs[None] * _exp_capped(X[:, : self.n_coeffs] @ self.B.T)[..., None]
        a, b, c = (V[:, self.faces[:, k]] for k in range(3))
        N = np.cross(b - a, c - a)
        nn = np.linalg.norm(N, axis=2)
        normals = N / nn[..., None]
        # only flagged (epoch, facet) pairs contribute
        ep, fa = np.nonzero(state.flags_L)
        n_p = normals[:, fa]
        mu = np.einsum("kpj,pj->kp", n_p, self.W[ep])
        mu0 = np.einsum("kpj,pj->kp", n_p, self.W0[ep])
        contrib = self.law.intensity(np.maximum(mu, 0), np.maximum(mu0, 0)) * mu * 0.5 * nn[:, fa]
        L = np.zeros((len(X), len(self.W)))
        for k in range(len(self.W)):
            L[:, k] = contrib[:, ep == k].sum(axis=1)
        K, F = N.shape[:2]
        Nv = (self._incidence @ N.transpose(1, 0, 2).reshape(F, 3 * K)).reshape(-1, K, 3).transpose(1, 0, 2)
        Nv /= np.linalg.norm(Nv, axis=2, keepdims=True)
        offs = X[:, self.n_coeffs:].reshape(K, -1, 2)
        r_mod = []
        for i, (im, g) in enumerate(zip(self.profiles.images, self.geoms)):
            s = Nv @ g.omega0
            vi, vj = state.active[i][..., 0], state.active[i][..., 1]
            si, sj = s[:, vi], s[:, vj]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(vi == vj, 0.0, si / (si - sj))
            Q = V[:, vi] + t[..., None] * (V[:, vj] - V[:, vi])
            P2 = np.stack([Q @ g.e1, Q @ g.e2], axis=-1) - offs[:, i, None, None, :]
            pa, seg = P2[:, :, 0], P2[:, :, 1] - P2[:, :, 0]
            den = np.cos(im.alphas) * seg[..., 1] - np.sin(im.alphas) * seg[..., 0]
            r_mod.append((pa[..., 0] * seg[..., 1] - pa[..., 1] * seg[..., 0]) / den)
        return L, np.concatenate(r_mod, axis=1)

    def _residuals_from(self, x, L, r_mod):
        rL = (self.brightness.L_obs - L) / self.brightness.sigma
        if self.reg_weight > 0:
            rL = np.concatenate([rL, self.reg_w * np.asarray(x[: self.n_coeffs])])
        rP = np.concatenate([(im.r_obs - r) / im.sigma for im, r in zip(self.profiles.images, r_mod)])
        return rL, rP

    def _entry(self, x):
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        L, r_mod, state = self._full_state(x)
        entry = [self._residuals_from(x, L, r_mod), state, None]
        self._cache[key] = entry
        while len(self._cache) > 8:
            self._cache.popitem(last=False)
        return entry

    def residuals(self, x):
        """(brightness residuals incl. penalty, profile residuals)."""
        return self._entry(x)[0]

    def jacobians(self, x):
        entry = self._entry(x)
        if entry[2] is None:
            x = np.asarray(x, dtype=float)
            state = entry[1]
            h = self.fd_step * np.asarray(self.scales) / 0.1
            E = np.diag(h)
            Lp, rp = self._frozen(x + E, state)
            Lm, rm = self._frozen(x - E, state)
            # the penalty rows are linear in the coefficients
            JL = (Lm - Lp).T / (2 * h * self.brightness.sigma[:, None])
            if self.reg_weight > 0:
                JR = np.zeros((self.n_coeffs, self.n_params))
                JR[:, : self.n_coeffs] = np.diag(self.reg_w)
                JL = np.vstack([JL, JR])
            sig = np.concatenate([im.sigma for im in self.profiles.images])
            JP = (rm - rp).T / (2 * h * sig[:, None])
            entry[2] = (JL, JP)
        return entry[2]

    # -- modes ---------------------------------------------------------------

    def modes(self, eps_brightness=None, eps_profile=None) -> List[ModeEvaluator]:
        bright = ModeEvaluator.from_residuals(
            "brightness", lambda x: self.residuals(x)[0], self.brightness.m,
            jacobian=lambda x: self.jacobians(x)[0], epsilon=eps_brightness)
        prof = ModeEvaluator.from_residuals(
            "profile", lambda x: self.residuals(x)[1], self.profiles.n_points,
            jacobian=lambda x: self.jacobians(x)[1], epsilon=eps_profile)
        return [bright, prof]

    def chi2_data(self, x) -> dict:
        """Data-only chi-squares and rms deviations (penalty excluded)."""
        rL, rP = self.residuals(x)
        rL = rL[: self.brightness.m]
        return {
            "chi2_brightness": float(rL @ rL),
            "chi2_profile": float(rP @ rP),
            "d_brightness": math.sqrt(float(rL @ rL) / self.brightness.m),
            "d_profile": math.sqrt(float(rP @ rP) / self.profiles.n_points),
        }

    def model_radii(self, x) -> List[np.ndarray]:
        return self._full_state(np.asarray(x, dtype=float))[1]


def radius_error(fit: ShapeParams, truth: ShapeParams, n_dirs: int = 1000) -> float:
    """Mean |r_fit - r_true| over quasi-uniform directions, relative to the mean true radius."""
    theta, phi = direction_angles(random_directions(n_dirs))
    keys_f, keys_t = list(fit.coeffs), list(truth.coeffs)
    rf = np.exp(sh_matrix(keys_f, theta, phi) @ np.array([fit.coeffs[k] for k in keys_f]))
    rt = np.exp(sh_matrix(keys_t, theta, phi) @ np.array([truth.coeffs[k] for k in keys_t]))
    return float(np.mean(np.abs(rf - rt)) / np.mean(rt))


def truth_mesh(params: ShapeParams, subdivision: int):
    return build_mesh(params, subdivision)
