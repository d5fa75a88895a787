#!/usr/bin/env python3
"""Convergence tables for the example scenarios, printed to stdout.

Usage: python scripts/run_trends.py [scenario ...]

Each scenario runs at the settings used by the trend tests. Expect
between ten seconds and a few minutes per scenario on one core.
"""

import argparse
import time

import numpy as np

from homsurf.convergence import SweepConfig, run_sweep

TRENDS = {
    "star_graph": dict(eps_list=(0.25, 0.125, 0.0625), k_eigs=5),
    "sphere_longitude": dict(eps_list=(0.25, 0.125), k_eigs=3),
    "radial_graph": dict(eps_list=(0.25, 0.0625), k_eigs=4),
    "sphere_latitude": dict(eps_list=(0.25, 0.125), k_eigs=4, osc_refine=1),
    "local_bumps": dict(eps_list=(1 / 16, 1 / 32), k_eigs=4, osc_refine=1),
    "laminate_strip": dict(eps_list=(1 / 16, 1 / 32), k_eigs=2),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenarios", nargs="*", default=list(TRENDS), choices=list(TRENDS), metavar="scenario")
    args = ap.parse_args()
    np.set_printoptions(linewidth=120, formatter={"float": "{:.3e}".format})
    for name in args.scenarios:
        t0 = time.perf_counter()
        t = run_sweep(SweepConfig(scenario=name, loads={"f": 1.0}, **TRENDS[name]))
        print(f"{name}  eps {t.eps.tolist()}  groups {t.groups}  {time.perf_counter() - t0:.1f} s")
        print("  lambda_hom", t.lambda_hom)
        print("  rel_err\n", t.rel_err)
        print("  angle\n", t.angle)
        print("  l2_err", t.l2_err, " flux_dev", t.flux_dev)
        print()


if __name__ == "__main__":
    main()
