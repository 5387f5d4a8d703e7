"""lqstackel: solve, simulate and verify LQ leader-follower games with jumps.

Exit codes: 0 success, 1 verification failure, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import export
from .config import CASES, ConfigError, RunConfig, load_config
from .equilibrium import synthesize
from .errors import BlowUp, LeaderIneligible, SingularGain
from .follower import riccati_rhs, solve_follower_isrde
from .leader import leader_optimal_cost, solve_leader
from .simulate import closed_loop_dynamics, estimate, run_ensemble
from .verify import (degeneration_test, follower_certificate_test, follower_perturbation_test,
                     four_step_consistency, leader_cost_test, perturbation_allowance, residual_report_as_test,
                     riccati_residual, scheme_expected_costs, structural_test)

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _solve(cfg: RunConfig):
    cap = cfg.tolerances["cond_cap"]
    fsol = solve_follower_isrde(cfg.model, cfg.costs, cap)
    lsol = solve_leader(cfg.model, cfg.costs, fsol, cfg.case, cap)
    return fsol, lsol, synthesize(fsol, lsol)


def cmd_solve(cfg: RunConfig) -> int:
    fsol, lsol, pair = _solve(cfg)
    out = cfg.out
    export.write_follower(out / "follower.csv", fsol)
    export.write_leader(out / "leader.csv", lsol)
    export.write_gains(out / "gains.csv", pair)
    cost = leader_optimal_cost(lsol)
    print(f"case {lsol.case}: leader optimal cost a'Pcal11(t0)a = {cost:.12g}")
    print(f"wrote follower.csv, leader.csv, gains.csv to {out}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    fsol, lsol, pair = _solve(cfg)
    dyn = closed_loop_dynamics(lsol, pair)
    ens = run_ensemble(dyn, cfg.costs, cfg.paths, cfg.seed, cfg.workers)
    m1, m2 = scheme_expected_costs(dyn, cfg.costs)
    e1, e2 = estimate(ens.J1, cfg.seed), estimate(ens.J2, cfg.seed)
    formula = leader_optimal_cost(lsol)
    export.write_ensemble(cfg.out / "ensemble.csv", ens)
    export.write_estimates(cfg.out / "estimates.csv",
                           [("J1", e1, formula, m1), ("J2", e2, None, m2)])
    print(f"J1: MC {e1.mean:.6g} +/- {e1.se:.2g} (formula {formula:.6g}, scheme {m1:.6g})")
    print(f"J2: MC {e2.mean:.6g} +/- {e2.se:.2g} (scheme {m2:.6g})")
    print(f"wrote ensemble.csv, estimates.csv to {cfg.out}")
    return EXIT_OK


def run_verification(cfg: RunConfig) -> list:
    tol = cfg.tolerances
    model, costs, seed, paths, workers = cfg.model, cfg.costs, cfg.seed, cfg.paths, cfg.workers
    fsol, lsol, pair = _solve(cfg)
    dt = model.grid.dt

    def frhs(s, P):
        w = costs.at(model.grid, s)
        return riccati_rhs(P, model.at(s), w.Q2, w.R2, s, tol["cond_cap"])

    reports = [structural_test(fsol, lsol)]
    reports.append(residual_report_as_test(
        riccati_residual(fsol.P, frhs, tol["residual_factor"], "follower_riccati_residual"), dt))
    reports.append(residual_report_as_test(
        riccati_residual(lsol.Pcal, lsol.rhs, tol["residual_factor"], "leader_riccati_residual"), dt))
    drift, lin = four_step_consistency(lsol, tol["residual_factor"], tol["linear_system"])
    reports += [residual_report_as_test(drift, dt), residual_report_as_test(lin, dt)]
    reports.append(leader_cost_test(lsol, pair, paths=paths, seed=seed, workers=workers, se_mult=tol["se_mult"]))
    reports.append(follower_certificate_test(model, costs, fsol, cfg.u1, paths=paths, seed=seed + 1,
                                             workers=workers, se_mult=tol["se_mult"]))
    allow = perturbation_allowance(model, costs, cfg.u1, cfg.v, cfg.eps)
    reports.append(follower_perturbation_test(model, costs, fsol, cfg.u1, cfg.v, cfg.eps, paths, seed + 2,
                                              workers, tol["se_mult"], allow))
    reports.append(degeneration_test(model, costs, tol["degeneration"]))
    return reports


def cmd_verify(cfg: RunConfig) -> int:
    reports = run_verification(cfg)
    export.write_report(cfg.out / "verify_report.csv", reports)
    for r in reports:
        print(f"{r.status.upper():4s}  {r.name:28s} statistic={r.statistic:.3g} band={r.band:.3g}")
    failed = [r.name for r in reports if r.status == "fail"]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed or skipped; report in {cfg.out / 'verify_report.csv'}")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqstackel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path, help="JSON or YAML run configuration")
        sp.add_argument("--paths", type=int, default=None, help="Monte Carlo path count")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=Path, default=None,
                        help="output directory (default: $LQSTACKEL_OUT or ./lqstackel_out)")
        sp.add_argument("--case", choices=CASES, default=None)
        sp.add_argument("--workers", type=int, default=None, help="threads for path simulation")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.paths is not None:
        if args.paths < 2:
            raise ConfigError("--paths", "must be at least 2")
        cfg.paths = args.paths
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be at least 1")
        cfg.workers = args.workers
    if args.case is not None:
        cfg.case = args.case
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if not os.access(cfg.out, os.W_OK):
            raise ConfigError(str(cfg.out), "output directory not writable")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(all="ignore"):
            return COMMANDS[args.command](cfg)
    except LeaderIneligible as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (BlowUp, SingularGain) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
