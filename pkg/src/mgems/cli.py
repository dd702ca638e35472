"""Command-line entry points.

Subcommands: ``simulate`` (run a controller over a scenario and write the
report), ``plan`` (one planner solve, plan as CSV), ``valuefn`` (dump the
cuts explored from a given state), ``forecast-eval`` (score a forecaster),
and ``synth`` (generate a seeded synthetic scenario).  All outputs are
deterministic for fixed inputs.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timedelta

import numpy as np

from mgems.config import CaseConfig, case_preset, load_config
from mgems.domain import as_utc
from mgems.forecast import evaluate_forecaster, make_forecaster
from mgems.opp import OppForecast, OppInstance, plan_to_csv, solve_opp
from mgems.scenario import load_scenario, save_scenario, synth_scenario
from mgems.simulation import SimulationFault, simulate
from mgems.valuefn import cuts_to_csv, generate_cuts, reachable_range

__all__ = ["main"]


def _add_config_scenario(p):
    p.add_argument("--config", required=True, help="case config YAML")
    p.add_argument("--scenario", required=True, help="scenario CSV")


def _apply_overrides(cfg: CaseConfig, args) -> CaseConfig:
    updates = {}
    if getattr(args, "controller", None):
        updates["controller"] = args.controller
    if getattr(args, "forecaster", None):
        updates["forecaster"] = args.forecaster
    if getattr(args, "sigma", None) is not None:
        updates["sigma"] = args.sigma
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "reserve", None):
        updates["reserve_enabled"] = args.reserve == "on"
    return cfg.with_updates(**updates) if updates else cfg


def _parse_when(text: str, scenario) -> datetime:
    if text is None:
        return scenario.start
    return as_utc(datetime.fromisoformat(text.replace("Z", "+00:00")))


def _opp_instance(cfg: CaseConfig, scenario, issue):
    fleet = cfg.build_fleet(scenario)
    forecaster = make_forecaster(cfg.forecaster, cfg.sigma, cfg.seed)
    fc = forecaster.forecast(scenario, issue, cfg.clock.n_periods,
                             cfg.clock.delta_tau_min)
    n = cfg.clock.n_periods
    return OppInstance(
        start=issue, clock=cfg.clock, fleet=fleet, contract=cfg.contract,
        forecast=OppForecast(nfl_total=fc.load_kw, she=np.zeros((0, n)),
                             ste_cap=np.zeros((0, n)), nst=fc.pv_kw.reshape(1, -1)),
        peak_kw=cfg.contract.initial_peak_kw,
        reserve_enabled=cfg.reserve_enabled, bias=cfg.bias), fleet


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    scenario = load_scenario(args.scenario)
    report = simulate(scenario, cfg)
    report.write(args.out)
    print(f"{cfg.controller}: c_E={report.ledger.energy_keur:.4f} kEUR, "
          f"c_p={report.ledger.peak_keur:.4f} kEUR, "
          f"c_t={report.ledger.total_keur:.4f} kEUR, "
          f"delta_p={report.ledger.delta_peak_kw:.2f} kW")
    print(f"report written to {args.out}")
    return 0


def cmd_plan(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    scenario = load_scenario(args.scenario)
    issue = _parse_when(args.at, scenario)
    instance, fleet = _opp_instance(cfg, scenario, issue)
    soc = np.array([args.soc] * len(fleet.storage)) if args.soc is not None else None
    plan = solve_opp(instance, soc, solver=cfg.solver)
    plan_to_csv(plan, args.out)
    print(f"objective {plan.objective:.4f} EUR over {plan.n_periods} periods; "
          f"plan written to {args.out}")
    return 0


def cmd_valuefn(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    scenario = load_scenario(args.scenario)
    issue = _parse_when(args.at, scenario)
    instance, fleet = _opp_instance(cfg, scenario,
                                    issue + timedelta(minutes=cfg.clock.delta_tau_min))
    soc = np.array([args.soc] * len(fleet.storage)) if args.soc is not None \
        else fleet.initial_soc()
    domain = reachable_range(soc, cfg.clock.delta_tau_h, fleet)
    vf = generate_cuts(instance, domain, soc, budget=cfg.cut_budget,
                       eps=cfg.cut_eps, solver=cfg.solver)
    cuts_to_csv(vf, args.out)
    print(f"{len(vf.cuts)} cuts over [{domain[0]}, {domain[1]}] "
          f"written to {args.out}")
    return 0


def cmd_forecast_eval(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    scenario = load_scenario(args.scenario)
    forecaster = make_forecaster(cfg.forecaster, cfg.sigma, cfg.seed)
    step = cfg.clock.delta_tau_min
    first = 24 * 60 if cfg.forecaster == "persistence" else 0
    issues = [scenario.time_at(m)
              for m in range(first, scenario.n_minutes, args.every * step)]
    if not issues:
        print("scenario too short for any forecast issue", file=sys.stderr)
        return 1
    scores = evaluate_forecaster(forecaster, scenario, cfg.clock.n_periods,
                                 step, issues)
    lines = ["series,nmae,nrmse,neme"]
    for series in ("pv", "load"):
        m = scores[series]
        lines.append(f"{series},{m.nmae!r},{m.nrmse!r},{m.neme!r}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{len(issues)} issues scored; metrics written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    start = as_utc(datetime.fromisoformat(args.start)) if args.start else None
    scenario = synth_scenario(seed=args.seed, days=args.days, case=args.case,
                              start=start, force_drop_day=args.force_drop_day)
    save_scenario(scenario, args.out)
    print(f"{args.days} day(s), case {args.case}, seed {args.seed} "
          f"written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgems",
        description="Two-level microgrid energy management: planner, "
                    "real-time optimizer, baseline, simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a controller over a scenario")
    _add_config_scenario(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--controller", choices=["rbc", "rto-op"])
    p.add_argument("--forecaster", choices=["perfect", "persistence", "noisy"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reserve", choices=["on", "off"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="one planner solve, dumped as CSV")
    _add_config_scenario(p)
    p.add_argument("--out", required=True)
    p.add_argument("--at", help="ISO-8601 issue instant (default: scenario start)")
    p.add_argument("--soc", type=float, help="initial SOC override (kWh)")
    p.add_argument("--forecaster", choices=["perfect", "persistence", "noisy"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reserve", choices=["on", "off"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("valuefn", help="dump the cost-to-go cuts for a state")
    _add_config_scenario(p)
    p.add_argument("--out", required=True)
    p.add_argument("--at", help="period boundary the window starts at")
    p.add_argument("--soc", type=float)
    p.add_argument("--reserve", choices=["on", "off"])
    p.set_defaults(func=cmd_valuefn)

    p = sub.add_parser("forecast-eval", help="score a forecaster on a scenario")
    _add_config_scenario(p)
    p.add_argument("--out", required=True)
    p.add_argument("--forecaster", choices=["perfect", "persistence", "noisy"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--every", type=int, default=4,
                   help="issue a forecast every N market periods")
    p.set_defaults(func=cmd_forecast_eval)

    p = sub.add_parser("synth", help="generate a synthetic scenario CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--case", type=int, default=1, choices=[1, 2, 3])
    p.add_argument("--start", help="ISO-8601 first minute (default 2026-05-04)")
    p.add_argument("--force-drop-day", type=int, default=None,
                   help="inject a deep mid-day PV drop on this day index")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, SimulationFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
