"""Command-line front end.

    scarcity-futures COMMAND [--config PATH] [--seed N] [--out DIR] [--set SECTION.KEY=VALUE ...]

Commands: spot-map, price-curve, validate, hjb-solve, simulate, report.
Exit status is 0 iff the command succeeded and every gating check passed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import control, pricing, sim, validation
from .errors import ConfigError

log = logging.getLogger("scarcity_futures")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _curve_demands(cfg):
    c = cfg.curve
    return np.linspace(c["d_min"], c["d_max"], int(c["nd"]))


def cmd_spot_map(cfg, out, args):
    with open(out / "spot_map.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "psi"])
        for d, s in validation.spot_table(cfg.futures.spot, _curve_demands(cfg)):
            w.writerow([repr(d), repr(s)])
    return EXIT_OK


def cmd_price_curve(cfg, out, args):
    points = pricing.curve(cfg.futures, [float(t) for t in cfg.curve["times"]], _curve_demands(cfg))
    pricing.write_curve_csv(points, out / "price_curve.csv")
    return EXIT_OK


def _report(summary, out, name):
    _write_json(out / name, summary)
    for c in summary["checks"]:
        status = "PASS" if c["passed"] else ("FAIL" if c["gating"] else "WARN")
        print(f"{status:4s}  {c['name']}")
    return EXIT_OK if summary["passed"] else EXIT_FAILED


def cmd_validate(cfg, out, args):
    return _report(validation.run_validation(cfg), out, "validate.json")


def cmd_report(cfg, out, args):
    return _report(validation.run_report(cfg), out, "report.json")


def cmd_hjb_solve(cfg, out, args):
    vg = control.solve_hjb(cfg.futures, cfg.producer, cfg.grid)
    vg.save(out / "value_grid")
    p = cfg.producer
    print(f"v(0, r0, x0, d0) = {vg.value_at(p.r0, p.x0, cfg.futures.demand.d0):.10g}  (nt={vg.nt})")
    return EXIT_OK


def cmd_simulate(cfg, out, args):
    fm, spec = cfg.futures, cfg.producer
    if args.policy == "zero":
        policy = sim.zero_policy(spec)
    elif args.policy == "myopic":
        policy = control.myopic_policy(fm, spec)
    else:
        grid_dir = Path(args.value_grid) if args.value_grid else out / "value_grid"
        if not (grid_dir / "value_grid.json").exists():
            print(f"error: no ValueGrid at {grid_dir}; run hjb-solve first or pass --value-grid", file=sys.stderr)
            return EXIT_USAGE
        policy = control.PolicyRule(control.ValueGrid.load(grid_dir), fm, spec)
    s = cfg.simulation
    bundle = sim.simulate_bundle(
        fm, spec, policy, int(s["n_paths"]), int(s["nt"]), np.random.default_rng([cfg.seed, 800]), s["futures_mode"]
    )
    bundle.to_csv(out / "paths.csv")
    util = np.maximum(bundle.wealth[:, -1], 0.0) ** spec.gamma
    closure = sim.delivery_closure_check(bundle)
    summary = {
        "policy": args.policy,
        "n_paths": bundle.n_paths,
        "mean_terminal_utility": float(util.mean()),
        "std_err": float(util.std(ddof=1) / np.sqrt(bundle.n_paths)),
        "mean_terminal_wealth": float(bundle.wealth[:, -1].mean()),
        "inadmissible_paths": int(bundle.inadmissible.sum()),
        "rejected_paths": int(bundle.rejected.sum()),
        "delivery_closure_max_discrepancy": closure.max_abs_discrepancy,
    }
    _write_json(out / "simulate.json", summary)
    print(f"mean terminal utility = {summary['mean_terminal_utility']:.10g} +- {summary['std_err']:.3g}")
    return EXIT_OK


COMMANDS = {
    "spot-map": cmd_spot_map,
    "price-curve": cmd_price_curve,
    "validate": cmd_validate,
    "hjb-solve": cmd_hjb_solve,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="scarcity-futures", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config; missing sections default to the benchmark")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides config 'output')")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                        help="override a config value, e.g. --set demand.sigma=0.3 (repeatable)")
    parser.add_argument("--policy", choices=("zero", "myopic", "optimal"), default="zero",
                        help="policy for 'simulate'")
    parser.add_argument("--value-grid", help="ValueGrid directory for 'simulate --policy optimal'")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output={json.dumps(args.out)}")
    try:
        cfg = config_mod.load(args.config, overrides)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return COMMANDS[args.command](cfg, out, args)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
