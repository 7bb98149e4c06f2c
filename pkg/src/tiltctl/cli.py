"""Command-line interface: run scenarios, certify gains, compare runs.

Exit status is nonzero when a run diverges or a certification fails, so the
commands compose in shell scripts.  TILTCTL_OUT overrides the output
directory for all commands.
"""

import argparse
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import Gains
from .harness import (ConfigError, compare_controllers, load_scenario,
                      run_scenario, _take)
from .stability import UncertaintyBand, check_condition1, robustness_constants
from .vehicle import VehicleParams


def _out_dir(arg):
    return os.environ.get("TILTCTL_OUT", arg)


def cmd_run(args):
    sc, gains, params = load_scenario(args.scenario)
    out = _out_dir(args.out)
    if out is None:
        base = os.path.splitext(os.path.basename(args.scenario))[0]
        out = f"runs/{base}_{args.controller}_s{args.seed if args.seed is not None else sc.seed}"
    _, report = run_scenario(sc, gains, params, controller=args.controller,
                             out_dir=out, seed=args.seed)
    print(f"wrote {out}")
    print(report.to_json())
    return 1 if report.diverged else 0


def cmd_certify(args):
    with open(args.gains, "rb") as fh:
        doc = tomllib.load(fh)
    vehicle = doc.get("vehicle", {})
    if "J" in vehicle:
        J = vehicle["J"]
        vehicle["J"] = np.diag(J) if np.ndim(J) == 1 else np.asarray(J, float)
    params = _take(vehicle, VehicleParams)
    gains = _take(doc.get("gains", {}), Gains)
    cert = doc.get("certify", {})
    delta_p = np.asarray(cert.get("delta_p", [0.0, 0.0, 0.0]), float)
    delta_R = np.asarray(cert.get("delta_R", [0.0, 0.0, 0.0]), float)
    cond = check_condition1(gains, params, delta_p, delta_R)
    band_doc = doc.get("band")
    ok = cond["ok"]
    if band_doc is None:
        for k, v in sorted(cond.items()):
            print(f"{k}: {v}")
    else:
        band = UncertaintyBand(
            alpha_f_nom=band_doc.get("alpha_f_nom", params.alpha_f),
            delta_f=band_doc["delta_f"],
            alpha_theta_nom=band_doc.get("alpha_theta_nom", params.alpha_theta),
            delta_theta=band_doc["delta_theta"])
        report = robustness_constants(
            gains, params, band, c=cert.get("c", 1.0),
            psi2=cert.get("psi2", 1.9), n_samples=cert.get("n_samples", 10000),
            seed=cert.get("seed", 0))
        report.condition1 = check_condition1(gains, params, delta_p, delta_R)
        print(report.to_text())
        ok = (report.feasible and report.condition1["ok"]
              and gains.k_mu >= report.k_mu_lower)
        out = _out_dir(args.out)
        if out is not None:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "certification.json"), "w") as fh:
                fh.write(report.to_json())
            print(f"wrote {out}/certification.json")
    print("certification:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_compare(args):
    text, table = compare_controllers(args.dirs)
    print(text)
    out = _out_dir(args.out)
    if out is not None:
        import json
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "comparison.json"), "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
        with open(os.path.join(out, "comparison.txt"), "w") as fh:
            fh.write(text)
        print(f"wrote {out}/comparison.json")
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(prog="tiltctl",
                                description="variable-tilt multirotor experiments")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run one scenario")
    pr.add_argument("scenario")
    pr.add_argument("--controller", choices=("proposed", "baseline"),
                    default="proposed")
    pr.add_argument("--out", default=None)
    pr.add_argument("--seed", type=int, default=None)
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("certify", help="certify a gain set")
    pc.add_argument("gains")
    pc.add_argument("--out", default=None)
    pc.set_defaults(func=cmd_certify)

    pm = sub.add_parser("compare", help="tabulate finished runs")
    pm.add_argument("dirs", nargs="+")
    pm.add_argument("--out", default=None)
    pm.set_defaults(func=cmd_compare)

    args = p.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
