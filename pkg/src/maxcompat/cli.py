"""Command-line entry points: simulate, invert, scurve."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import core
from .gof import rms_deviation
from .io import (
    parse_brightness_csv,
    parse_profile_csv,
    write_brightness_csv,
    write_json,
    write_profile_comparison_csv,
    write_profile_csv,
    write_scurve_csv,
)
from .optimizer import OptimizationError, OptimizerOptions
from .problem import ShapeProblem, radius_error
from .projection import ScatteringLaw
from .shape import build_mesh, parse_shape_json, shape_to_dict, write_shape_json
from .simulate import NoiseSpec, simulate_data

logger = logging.getLogger("maxcompat")

EXIT_OK, EXIT_FAILURE, EXIT_INFEASIBLE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    shape: Optional[Path] = None
    brightness: Optional[Path] = None
    profiles: Optional[Path] = None
    truth: Optional[Path] = None
    law: ScatteringLaw = field(default_factory=ScatteringLaw)
    subdivision: int = 3
    l_max: int = 6
    m_max: Optional[int] = 6
    reg_weight: float = 5.0
    lambda_min: float = 1e-3
    lambda_max: float = 1e3
    lambda_num: int = 25
    lambda_relative: bool = True
    optimizer: OptimizerOptions = field(default_factory=lambda: OptimizerOptions(max_iterations=300, gtol=1e-6, ftol=1e-9))
    epsilon: Optional[list] = None
    epsilon_k: Optional[float] = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_epochs: int = 20
    n_images: int = 5
    n_angles: int = 36
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        def path(key):
            v = d.get(key)
            return None if v is None else (base / v).resolve()

        grid = d.get("lambda_grid", {})
        model = d.get("model", {})
        sim = d.get("simulation", {})
        eps = d.get("epsilon")
        cfg = cls(
            shape=path("shape"), brightness=path("brightness"), profiles=path("profiles"),
            truth=path("truth"),
            law=ScatteringLaw(**d.get("law", {})),
            subdivision=int(d.get("subdivision", 3)),
            l_max=int(model.get("l_max", 6)),
            m_max=model.get("m_max", 6),
            reg_weight=float(model.get("reg_weight", 5.0)),
            lambda_min=float(grid.get("min", 1e-3)), lambda_max=float(grid.get("max", 1e3)),
            lambda_num=int(grid.get("num", 25)), lambda_relative=bool(grid.get("relative", True)),
            optimizer=OptimizerOptions.from_dict({"max_iterations": 300, "gtol": 1e-6, "ftol": 1e-9, **d.get("optimizer", {})}),
            epsilon=eps if isinstance(eps, list) else None,
            epsilon_k=float(eps["k"]) if isinstance(eps, dict) else None,
            noise=NoiseSpec(**d.get("noise", {})),
            n_epochs=int(sim.get("epochs", 20)), n_images=int(sim.get("images", 5)),
            n_angles=int(sim.get("angles", 36)),
            seed=int(d.get("seed", 0)),
        )
        if not 1 <= cfg.subdivision <= 6:
            raise ConfigError("subdivision must lie in [1, 6]")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d, path.parent)

    def require(self, *names: str) -> None:
        for n in names:
            p = getattr(self, n)
            if p is None:
                raise ConfigError(f"config is missing {n!r}")
            if not Path(p).is_file():
                raise ConfigError(f"{n} file not found: {p}")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MCE_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    cfg.require("shape")
    truth = parse_shape_json(cfg.shape)
    if len(truth.offsets) < cfg.n_images:
        truth = truth.replace(offsets=tuple(truth.offsets) + ((0.0, 0.0),) * (cfg.n_images - len(truth.offsets)))
    bright, prof = simulate_data(truth, cfg.law, cfg.subdivision, cfg.noise,
                                 cfg.n_epochs, cfg.n_images, cfg.n_angles)
    out.mkdir(parents=True, exist_ok=True)
    write_brightness_csv(bright, out / "brightness.csv")
    write_profile_csv(prof, out / "profiles.csv")
    write_json({"shape": shape_to_dict(truth), "seed": cfg.noise.seed,
                "noise": {"sigma_L": cfg.noise.sigma_L, "sigma_r": cfg.noise.sigma_r},
                "law": cfg.law.to_dict(), "subdivision": cfg.subdivision},
               out / "truth_manifest.json")
    logger.info("wrote %d brightness epochs and %d profile images to %s", bright.m, prof.n, out)
    return EXIT_OK


def _load_problem(cfg: RunConfig) -> ShapeProblem:
    cfg.require("shape", "brightness", "profiles")
    start = parse_shape_json(cfg.shape)
    bright = parse_brightness_csv(cfg.brightness)
    prof = parse_profile_csv(cfg.profiles)
    return ShapeProblem(bright, prof, cfg.law, start.spin, cfg.l_max, cfg.m_max, cfg.subdivision,
                        cfg.reg_weight)


def _region(cfg: RunConfig, ms: core.ModeSet, ideal: core.IdealPoint) -> core.FeasibilityRegion:
    if cfg.epsilon is not None:
        return core.FeasibilityRegion(tuple(cfg.epsilon))
    if cfg.epsilon_k is not None:
        return core.FeasibilityRegion(tuple(
            core.estimate_epsilon(c, m.n_points, cfg.epsilon_k) for c, m in zip(ideal.chi2_0, ms.modes)))
    return core.FeasibilityRegion((None,) * ms.n)


def run_pipeline(ms: core.ModeSet, starts, cfg: RunConfig, scales=None):
    """Ideal point, S-curve, MCW, both MCE variants, feasibility and continuity."""
    opt = cfg.optimizer if scales is None else cfg.optimizer.with_(scales=tuple(scales))
    ideal = core.single_mode_minima(ms, opt, starts)
    grid = core.lambda_grid(cfg.lambda_min, cfg.lambda_max, cfg.lambda_num, ms.n)
    scurve = core.trace_scurve(ms, grid, ideal, opt, relative=cfg.lambda_relative)
    lam0, point, k0 = core.mcw(scurve, ideal)
    mce = core.mce_direct(ms, ideal, opt, starts=[point.P])
    mce1 = core.mce_first_order(ms, ideal, opt, starts=[point.P, mce.P])
    region = _region(cfg, ms, ideal)
    feas = core.apply_feasibility(scurve, point, region, ideal)
    cont = core.continuity_diagnostic(scurve, k0, scales=scales) if len(scurve) >= 3 else None
    return dict(ideal=ideal, scurve=scurve, lam0=lam0, point=point, k0=k0, mce=mce, mce1=mce1,
                region=region, feas=feas, cont=cont, opt=opt)


def _report(ms, res, cfg, extra=None) -> dict:
    ideal, mce, mce1 = res["ideal"], res["mce"], res["mce1"]
    npts = [m.n_points for m in ms.modes]
    rep = {
        "modes": ms.names,
        "n_points": npts,
        "ideal_point": {"chi2_0": ideal.chi2_0, "log_chi2_0": ideal.log0,
                        "degenerate_pairs": ideal.degenerate_pairs},
        "lambda0": res["lam0"],
        "lambda0_index": res["k0"],
        "mcw_point": {"chi2": res["point"].chi2, "log_ratio": res["point"].log_coords},
        "mce": {"P": mce.P, "chi2": mce.chi2, "objective": mce.objective,
                "d": [rms_deviation(c, n) for c, n in zip(mce.chi2, npts)],
                "converged": bool(mce.result.converged)},
        "mce_first_order": {"P": mce1.P, "chi2": mce1.chi2, "objective": mce1.objective,
                            "log_distance_to_mce": core.log_distance(mce1.chi2, mce.chi2)},
        "feasibility": {"bounds": list(res["region"].bounds), "feasible": res["feas"].feasible,
                        "message": res["feas"].message, "index": res["feas"].index,
                        "chi2": None if res["feas"].point is None else res["feas"].point.chi2},
        "continuity": None if res["cont"] is None else res["cont"].to_dict(),
        "max_curvature_index": core.max_curvature_index(res["scurve"]),
        "scurve_failures": [{"lambda": l, "reason": r} for l, r in res["scurve"].failures],
    }
    if extra:
        rep.update(extra)
    return rep


def cmd_invert(cfg: RunConfig, out: Path) -> int:
    t0 = time.time()
    problem = _load_problem(cfg)
    ms = core.ModeSet(problem.modes())
    res = run_pipeline(ms, [problem.initial_guess()], cfg, problem.scales)
    fit = problem.unpack(res["mce"].P)
    extra = {"mce_shape": shape_to_dict(fit), "fit_quality": problem.chi2_data(res["mce"].P),
             "mce_first_order_shape": shape_to_dict(problem.unpack(res["mce1"].P))}
    if cfg.truth is not None and Path(cfg.truth).is_file():
        from .shape import shape_from_dict
        truth = shape_from_dict(json.loads(Path(cfg.truth).read_text())["shape"])
        extra["radius_error_vs_truth"] = radius_error(fit, truth)
    extra["runtime_s"] = time.time() - t0
    report = _report(ms, res, cfg, extra)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report, out / "mce_report.json")
    write_scurve_csv(res["scurve"], res["ideal"], [m.n_points for m in ms.modes], out / "scurve.csv")
    write_profile_comparison_csv(problem.profiles, problem.model_radii(res["mce"].P), out / "profiles_fit.csv")
    write_shape_json(fit, out / "mce_shape.json")
    build_mesh(fit, cfg.subdivision).to_obj(out / "mce_shape.obj")
    if not res["feas"].feasible:
        logger.error("%s", res["feas"].message)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_scurve(cfg: RunConfig, out: Path, selftest: Optional[str] = None) -> int:
    if selftest == "quadratic":
        ms = core.quadratic_modeset()
        starts = [np.array([0.5])]
        scales = None
        cfg.optimizer = cfg.optimizer.with_(gtol=1e-10, ftol=0.0)
    elif selftest is not None:
        raise ConfigError(f"unknown self-test {selftest!r}")
    else:
        problem = _load_problem(cfg)
        ms = core.ModeSet(problem.modes())
        starts = [problem.initial_guess()]
        scales = problem.scales
    opt = cfg.optimizer if scales is None else cfg.optimizer.with_(scales=tuple(scales))
    ideal = core.single_mode_minima(ms, opt, starts)
    grid = core.lambda_grid(cfg.lambda_min, cfg.lambda_max, cfg.lambda_num, ms.n)
    scurve = core.trace_scurve(ms, grid, ideal, opt, relative=cfg.lambda_relative)
    out.mkdir(parents=True, exist_ok=True)
    write_scurve_csv(scurve, ideal, [m.n_points for m in ms.modes], out / "scurve.csv")
    k = core.max_curvature_index(scurve)
    lam0, _, k0 = core.mcw(scurve, ideal)
    write_json({"max_curvature_index": k,
                "max_curvature_lambda": None if k is None else scurve[k].lam,
                "mcw_index": k0, "lambda0": lam0, "ideal_chi2_0": ideal.chi2_0},
               out / "scurve_baseline.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxcompat", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "invert", "scurve"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--out", type=Path, default=Path("."))
        if name == "scurve":
            s.add_argument("--selftest", choices=["quadratic"])
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if _threads() > 1:
        logger.info("MCE_THREADS=%d: evaluation is sequential, so the cap has no effect", _threads())
    try:
        if args.config is None and not (args.command == "scurve" and args.selftest):
            raise ConfigError("--config is required")
        cfg = RunConfig.load(args.config) if args.config is not None else RunConfig()
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "invert":
            return cmd_invert(cfg, args.out)
        return cmd_scurve(cfg, args.out, args.selftest)
    except (ConfigError, ValueError, OSError, OptimizationError, ArithmeticError, RuntimeError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
