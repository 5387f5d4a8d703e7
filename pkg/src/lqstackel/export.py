"""CSV writers with fixed headers; floats use 17 significant digits so reruns are byte-identical."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .equilibrium import FeedbackPair
from .follower import FollowerSolution
from .leader import Case1Gains, LeaderSolution
from .simulate import MonteCarloEstimate, PathEnsemble
from .verify import TestReport


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def matrix_columns(name: str, shape: Sequence[int]) -> list[str]:
    return [f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape)]


def write_csv(path: Path, header: list[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def write_follower(path: Path, sol: FollowerSolution) -> Path:
    g0 = sol.gains[0]
    header = (["s"] + matrix_columns("P", sol.P.shape) + matrix_columns("Rhat2", g0.Rhat2.shape)
              + matrix_columns("Shat2", g0.Shat2.shape) + matrix_columns("Shat1", g0.Shat1.shape))
    rows = ([sol.grid.time(i), *sol.P[i].ravel(), *g.Rhat2.ravel(), *g.Shat2.ravel(), *g.Shat1.ravel()]
            for i, g in enumerate(sol.gains))
    return write_csv(path, header, rows)


def write_leader(path: Path, sol: LeaderSolution) -> Path:
    d = sol.Pcal.shape
    g0 = sol.gains[0]
    R0, H0 = (g0.R1cal, g0.H1cal) if isinstance(g0, Case1Gains) else (g0.Rhat1cal, g0.Bhat1cal)
    header = (["s", "case"] + matrix_columns("Pcal", d) + ["max_block_cond", "inverse_path"]
              + matrix_columns("R1cal", R0.shape) + matrix_columns("H1cal", H0.shape))
    rows = []
    for i, g in enumerate(sol.gains):
        R, H = (g.R1cal, g.H1cal) if isinstance(g, Case1Gains) else (g.Rhat1cal, g.Bhat1cal)
        path_used = g.path if isinstance(g, Case1Gains) else "direct"
        rows.append([sol.grid.time(i), sol.case, *sol.Pcal[i].ravel(), g.max_cond, path_used,
                     *R.ravel(), *H.ravel()])
    return write_csv(path, header, rows)


def write_gains(path: Path, pair: FeedbackPair) -> Path:
    header = ["s"] + matrix_columns("K1", pair.K1.shape[1:]) + matrix_columns("K2", pair.K2.shape[1:])
    rows = ([pair.grid.time(i), *pair.K1[i].ravel(), *pair.K2[i].ravel()] for i in range(pair.grid.steps + 1))
    return write_csv(path, header, rows)


def write_ensemble(path: Path, ens: PathEnsemble) -> Path:
    counts = ens.jump_counts()
    header = ["path", "J1", "J2"] + [f"jumps[{k}]" for k in range(counts.shape[1])] + ["aborted"]
    rows = ([int(ens.index[r]), ens.J1[r], ens.J2[r], *counts[r].astype(int), bool(ens.aborted[r])]
            for r in range(len(ens)))
    return write_csv(path, header, rows)


def write_estimates(path: Path, rows: list[tuple[str, MonteCarloEstimate, float, float]]) -> Path:
    header = ["quantity", "mc_mean", "mc_se", "paths", "seed", "formula", "scheme_expectation"]
    return write_csv(path, header, ([q, e.mean, e.se, e.count, e.seed, f, m] for q, e, f, m in rows))


def write_report(path: Path, reports: list[TestReport]) -> Path:
    header = ["name", "status", "statistic", "band", "se", "dt", "seed", "paths"]
    return write_csv(path, header, ([r.name, r.status, r.statistic, r.band, r.se, r.dt, r.seed, r.paths]
                                    for r in reports))
