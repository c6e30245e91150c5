"""CSV/JSON readers and writers for observations, S-curves and reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .gof import BrightnessData, ProfileData, ProfileImage, rms_deviation

BRIGHTNESS_COLUMNS = ["epoch_time", "omega_x", "omega_y", "omega_z",
                      "omega0_x", "omega0_y", "omega0_z", "L", "sigma"]
PROFILE_COLUMNS = ["image_id", "epoch_time", "omega_x", "omega_y", "omega_z",
                   "omega0_x", "omega0_y", "omega0_z", "alpha_rad", "r_max", "sigma"]


class DataFormatError(ValueError):
    pass


def _rows(path, required: Sequence[str], optional: Dict[str, float] = None):
    """Yield (line_number, {column: float}) with columns matched by name."""
    optional = optional or {}
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        for row in reader:
            line = reader.line_num
            out = {}
            for col in list(required) + list(optional):
                raw = row.get(col)
                if raw is None or raw.strip() == "":
                    if col in optional:
                        out[col] = optional[col]
                        continue
                    raise DataFormatError(f"{path}:{line}: empty value in column {col!r}")
                try:
                    out[col] = float(raw)
                except ValueError:
                    raise DataFormatError(f"{path}:{line}: column {col!r}: cannot parse {raw!r}") from None
            yield line, out


def _check_unit(path, line, vec, what):
    if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
        raise DataFormatError(f"{path}:{line}: {what} is not a unit vector (row rejected)")


def parse_brightness_csv(path) -> BrightnessData:
    recs = []
    for line, r in _rows(path, BRIGHTNESS_COLUMNS[:-1], {"sigma": 1.0}):
        w = np.array([r["omega_x"], r["omega_y"], r["omega_z"]])
        w0 = np.array([r["omega0_x"], r["omega0_y"], r["omega0_z"]])
        _check_unit(path, line, w, "omega")
        _check_unit(path, line, w0, "omega0")
        if r["sigma"] <= 0 or r["L"] < 0:
            raise DataFormatError(f"{path}:{line}: sigma must be > 0 and L >= 0")
        recs.append((r["epoch_time"], w, w0, r["L"], r["sigma"]))
    if not recs:
        raise DataFormatError(f"{path}: no records")
    t, w, w0, L, s = zip(*recs)
    return BrightnessData(np.array(t), np.array(w), np.array(w0), np.array(L), np.array(s))


def parse_profile_csv(path) -> ProfileData:
    groups: Dict[int, list] = {}
    for line, r in _rows(path, PROFILE_COLUMNS[:-1], {"sigma": 1.0}):
        w = np.array([r["omega_x"], r["omega_y"], r["omega_z"]])
        w0 = np.array([r["omega0_x"], r["omega0_y"], r["omega0_z"]])
        _check_unit(path, line, w, "omega")
        _check_unit(path, line, w0, "omega0")
        if r["r_max"] <= 0 or r["sigma"] <= 0:
            raise DataFormatError(f"{path}:{line}: r_max and sigma must be positive")
        img = int(r["image_id"])
        g = groups.setdefault(img, [])
        if g and (g[0][1] != r["epoch_time"] or not np.allclose(g[0][2], w) or not np.allclose(g[0][3], w0)):
            raise DataFormatError(f"{path}:{line}: geometry differs within image {img}")
        g.append((line, r["epoch_time"], w, w0, r["alpha_rad"], r["r_max"], r["sigma"]))
    if not groups:
        raise DataFormatError(f"{path}: no records")
    images = []
    for img in sorted(groups):
        g = sorted(groups[img], key=lambda rec: rec[4])
        alphas = np.array([rec[4] for rec in g])
        if np.any(np.diff(alphas) <= 0):
            raise DataFormatError(f"{path}: duplicate angle in image {img} (line {g[0][0]})")
        images.append(ProfileImage(img, g[0][1], g[0][2], g[0][3], alphas,
                                   np.array([rec[5] for rec in g]), np.array([rec[6] for rec in g])))
    return ProfileData(tuple(images))


def _fmt(v) -> str:
    return repr(float(v))


def write_brightness_csv(data: BrightnessData, path, L=None) -> None:
    L = data.L_obs if L is None else L
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BRIGHTNESS_COLUMNS)
        for i in range(data.m):
            w.writerow([_fmt(data.times[i]), *map(_fmt, data.omega[i]), *map(_fmt, data.omega0[i]),
                        _fmt(L[i]), _fmt(data.sigma[i])])


def write_profile_csv(data: ProfileData, path, radii=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for k, im in enumerate(data.images):
            r = im.r_obs if radii is None else radii[k]
            for a, rr, s in zip(im.alphas, r, im.sigma):
                w.writerow([im.image_id, _fmt(im.time), *map(_fmt, im.omega), *map(_fmt, im.omega0),
                            _fmt(a), _fmt(rr), _fmt(s)])


def write_profile_comparison_csv(data: ProfileData, model: List[np.ndarray], path) -> None:
    """Observed vs modelled maximal radii per image and angle."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "alpha_rad", "r_obs", "r_model", "sigma"])
        for im, r in zip(data.images, model):
            for a, ro, rm, s in zip(im.alphas, im.r_obs, r, im.sigma):
                w.writerow([im.image_id, _fmt(a), _fmt(ro), _fmt(rm), _fmt(s)])


def write_scurve_csv(scurve, ideal, n_points: Sequence[int], path, extra_rows=None) -> None:
    """One row per traced point: weights, chi2, rms deviations, log ratios, distance, parameters."""
    pts = list(scurve)
    n = len(n_points)
    n_par = len(pts[0].P) if pts else 0
    header = ([f"lambda_{i + 1}" for i in range(n - 1)] + [f"chi2_{i + 1}" for i in range(n)]
              + [f"d_{i + 1}" for i in range(n)] + [f"log_ratio_{i + 1}" for i in range(n)]
              + ["dist_to_ideal"] + [f"P_{k}" for k in range(n_par)])
    log0 = ideal.log0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in pts:
            logr = np.log(np.maximum(p.chi2, 1e-30)) - log0
            d = [rms_deviation(max(c, 0.0), N) for c, N in zip(p.chi2, n_points)]
            w.writerow([*map(_fmt, p.lam), *map(_fmt, p.chi2), *map(_fmt, d), *map(_fmt, logr),
                        _fmt(np.linalg.norm(logr)), *map(_fmt, p.P)])


def read_scurve_csv(path) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
