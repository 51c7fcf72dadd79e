"""Command-line entry point: ``bandsplice {simulate,estimate,baseline,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .andenoise import dual_polynomial, dual_vector, lambda_for
from .chronos import chronos_tof
from .cleaner import clean_all
from .handshake import AmbiguityGrid, cost_surface, resolve, squared_cfr
from .harness import ExperimentConfig, load_config_file, run_experiment, simulate_trial
from .model import BandPlan, NoiseModel
from .splicer import build_dictionary, estimate_relative_cir

# CLI flag -> ExperimentConfig field
_CONFIG_FLAGS = {
    "trials": int, "snr_db": float, "seed": int, "bands": int, "subcarriers": int,
    "grid": int, "baseline_grid": int, "tau_grid": int, "theta_grid": int,
    "workers": int, "K": int, "d_max": float, "delta_max": float,
}


def _add_config_flags(p: argparse.ArgumentParser, names):
    for name in names:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=_CONFIG_FLAGS[name], default=None)


def _config(args, names) -> ExperimentConfig:
    values = dict(load_config_file(args.config)) if getattr(args, "config", None) else {}
    values = {k.replace("-", "_"): v for k, v in values.items()}
    values.pop("out", None)
    for name in names:
        if getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    return ExperimentConfig.from_strings(values)


def cmd_simulate(args) -> int:
    names = ("seed", "snr_db", "bands", "subcarriers", "K", "d_max", "delta_max")
    cfg = _config(args, names).replace(noise=not args.noiseless)
    sc = simulate_trial(cfg, args.trial)
    out = Path(args.out)
    io.write_csi(out / "csi.csv", sc.csi)
    io.write_handshake(out / "handshake.csv", sc.handshake, sc.plan)
    io.write_cir(out / "cir_true.csv", sc.cir)
    io.write_meta(out / "scenario.meta", {
        "seed": cfg.seed, "trial": args.trial,
        "snr_db": cfg.snr_db if cfg.noise else "none",
        "true_tof_s": io.fmt(sc.cir.tof),
    })
    print(f"wrote scenario to {out}")
    return 0


def _plan_for_handshake(carriers, args) -> BandPlan:
    return BandPlan(tuple(carriers), args.subcarriers, args.spacing)


def cmd_estimate(args) -> int:
    csi = io.read_csi(args.csi)
    plan = csi.plan
    samples, carriers = io.read_handshake(args.handshake)
    if carriers.shape != plan.carrier_array.shape or not np.allclose(
            carriers, plan.carrier_array, rtol=0, atol=1e-3):
        print("error: handshake carriers do not match the CSI band plan", file=sys.stderr)
        return 2
    snr = NoiseModel.from_db(args.snr_db).snr
    out = Path(args.out)
    cleaned = clean_all(csi, snr)
    io.write_csi(out / "cleaned.csv", cleaned.csi)
    if not np.any(cleaned.usable):
        print("error: no band yielded a usable estimate", file=sys.stderr)
        return 1
    h0 = estimate_relative_cir(cleaned, args.K, build_dictionary(plan, args.grid))
    io.write_relative_cir(out / "relative_cir.csv", h0)
    grid = AmbiguityGrid(args.tau_grid, args.theta_grid)
    q = squared_cfr(samples)
    resolved = resolve(h0, q, plan, grid)
    io.write_cir(out / "cir.csv", resolved.cir)
    if args.dump:
        lam = lambda_for(plan.subcarriers_per_band, snr)
        for m, est in enumerate(cleaned.estimates):
            taus, mod = dual_polynomial(dual_vector(est.denoise, csi.values[m], lam), plan)
            io.write_dual_polynomial(out / f"dual_band{m:02d}.csv", taus, mod)
        cost = cost_surface(h0, q, plan, grid)
        io.write_cost_surface(out / "cost_surface.csv", grid.taus(plan), grid.thetas(), cost)
    print(f"tof_s={io.fmt(resolved.tof)}")
    return 0


def cmd_baseline(args) -> int:
    samples, carriers = io.read_handshake(args.handshake)
    plan = _plan_for_handshake(carriers, args)
    tof, _ = chronos_tof(samples, plan, args.baseline_grid, args.eps, threshold=args.threshold)
    print(f"tof_s={io.fmt(tof)}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args, tuple(_CONFIG_FLAGS))
    out = args.out
    if out is None and args.config:
        out = load_config_file(args.config).get("out")
    out = Path(out or "results")
    result = run_experiment(cfg, out)
    print((out / "summary.txt").read_text(), end="")
    if not result.complete:
        print("error: a method produced no usable results", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandsplice", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per trial")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write CSI and handshake CSVs for one scenario")
    p.add_argument("--config")
    _add_config_flags(p, ("seed", "snr_db", "bands", "subcarriers", "K", "d_max", "delta_max"))
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run the spliced estimator on CSV inputs")
    p.add_argument("--csi", required=True)
    p.add_argument("--handshake", required=True)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("-K", type=int, default=3)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--tau-grid", type=int, default=65536)
    p.add_argument("--theta-grid", type=int, default=64)
    p.add_argument("--dump", action="store_true",
                   help="also write dual polynomials and a decimated cost surface")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("baseline", help="run the BPDN baseline on a handshake CSV")
    p.add_argument("--handshake", required=True)
    p.add_argument("--subcarriers", type=int, default=65)
    p.add_argument("--spacing", type=float, default=312.5e3)
    p.add_argument("--baseline-grid", type=int, default=None)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.1)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="Monte-Carlo comparison of both methods")
    p.add_argument("--config", help="flat key=value file; flags override it")
    _add_config_flags(p, tuple(_CONFIG_FLAGS))
    p.add_argument("--out", help="output directory (default: results)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
