"""Trace the S-curve of the two-parabola test problem and compare with the closed form.

Usage: python scripts/trace_quadratic.py [--num N]
"""

import argparse

import numpy as np

from maxcompat.core import (
    lambda_grid,
    mce_direct,
    mce_first_order,
    mcw,
    quadratic_modeset,
    quadratic_scurve_closed_form,
    single_mode_minima,
    trace_scurve,
)
from maxcompat.optimizer import OptimizerOptions


def main(num: int) -> None:
    opt = OptimizerOptions(gtol=1e-10)
    ms = quadratic_modeset()
    ideal = single_mode_minima(ms, opt, [[0.5]])
    curve = trace_scurve(ms, lambda_grid(1e-3, 1e3, num), ideal, opt)
    print(f"{'lambda':>10} {'chi2_1':>10} {'chi2_2':>10} {'max err':>9}")
    for p in curve:
        exact = np.array(quadratic_scurve_closed_form(p.lam[0]))
        print(f"{p.lam[0]:10.4g} {p.chi2[0]:10.6f} {p.chi2[1]:10.6f} {np.max(np.abs(p.chi2 - exact)):9.1e}")
    lam0, point, k = mcw(curve, ideal)
    print(f"MCW: lambda0 = {lam0[0]:.4g} (index {k}), chi2 = {point.chi2}")
    print(f"MCE: P0 = {mce_direct(ms, ideal, opt).P[0]:.6f}, "
          f"first-order P0 = {mce_first_order(ms, ideal, opt).P[0]:.6f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--num", type=int, default=25)
    main(p.parse_args().num)
