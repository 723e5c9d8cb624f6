"""Monte Carlo study runner: many seeded trials per (design, horizon) cell.

Produces the per-trial CSV and summary JSON used for figure and table
reproduction. Seeds are assigned by trial index, so results do not depend
on scheduling and rerunning a study is byte-identical.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import DesignKind, EngineConfig, run_trial
from .scenario import Scenario, scenario_from_dict, scenario_to_dict

__all__ = ["StudySpec", "StudySummary", "run_study", "empirical_distribution",
           "CSV_HEADER"]

CSV_HEADER = ("design,T,seed,theta_hat,var_hat,ci_lo,ci_hi,covered,"
              "arm1_count,rejected_proposals")


@dataclass
class StudySpec:
    scenario: Scenario
    designs: list[DesignKind]
    horizons: list[int]
    n_trials: int
    base_seed: int = 0
    alpha: float = 0.05
    output_dir: str | os.PathLike = "study_out"
    engine: EngineConfig = field(default_factory=EngineConfig)
    workers: int | None = None  # default: available parallelism
    name: str = "study"

    def __post_init__(self) -> None:
        self.designs = [DesignKind(d) for d in self.designs]
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if list(self.horizons) != sorted(set(self.horizons)):
            raise ValueError("horizons must be strictly increasing")

    @classmethod
    def from_dict(cls, d: dict) -> "StudySpec":
        scen = d["scenario"]
        if isinstance(scen, dict):
            scen = scenario_from_dict(scen)
        engine = EngineConfig(**d.get("engine", {}))
        return cls(
            scenario=scen,
            designs=[DesignKind(k) for k in d["designs"]],
            horizons=[int(t) for t in d["horizons"]],
            n_trials=int(d["n_trials"]),
            base_seed=int(d.get("base_seed", 0)),
            alpha=float(d.get("alpha", 0.05)),
            engine=engine,
            output_dir=d.get("output_dir", "study_out"),
            workers=d.get("workers"),
            name=d.get("name", "study"),
        )


@dataclass
class CellSummary:
    design: str
    T: int
    n_ok: int
    n_error: int
    mse: float | None
    bias: float | None
    empirical_variance_scaled: float | None  # variance of sqrt(T)(theta-theta0)
    coverage: float | None
    mean_ci_width: float
    mean_theta: float
    median_var_hat: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StudySummary:
    name: str
    true_ate: float | None
    cells: list[CellSummary]
    rows: list[dict]  # per-trial table
    errors: list[dict]

    def cell(self, design: DesignKind | str, T: int) -> CellSummary:
        key = DesignKind(design).value
        for c in self.cells:
            if c.design == key and c.T == T:
                return c
        raise KeyError(f"no cell ({key}, {T})")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "true_ate": self.true_ate,
            "cells": [c.to_dict() for c in self.cells],
            "n_errors": len(self.errors),
            "errors": self.errors,
        }


def _one_trial(args) -> dict:
    scenario_dict, kind, T, config, seed, alpha, theta0 = args
    scenario = scenario_from_dict(scenario_dict)
    try:
        hist, report = run_trial(scenario, kind, T, config, seed=seed)
    except Exception as exc:  # recorded, never silently dropped
        return {"design": kind, "T": T, "seed": seed, "error": repr(exc)}
    covered = "" if theta0 is None else int(report.covers(theta0))
    return {
        "design": kind, "T": T, "seed": seed,
        "theta_hat": report.theta_hat, "var_hat": report.variance_hat,
        "ci_lo": report.ci_lo, "ci_hi": report.ci_hi, "covered": covered,
        "arm1_count": int(hist.a.sum()),
        "rejected_proposals": int(hist.rejected_proposals.sum()),
    }


def _summarize_cell(kind: str, T: int, rows: list[dict], n_error: int,
                    theta0: float | None) -> CellSummary:
    theta = np.array([r["theta_hat"] for r in rows])
    widths = np.array([r["ci_hi"] - r["ci_lo"] for r in rows])
    var_hats = np.array([r["var_hat"] for r in rows])
    mse = bias = emp = cov = None
    if theta0 is not None and theta.size:
        mse = float(np.mean((theta - theta0) ** 2))
        bias = float(theta.mean() - theta0)
        emp = float(T * theta.var(ddof=0)) if theta.size > 1 else 0.0
        cov = float(np.mean([r["covered"] for r in rows]))
    return CellSummary(
        design=kind, T=T, n_ok=len(rows), n_error=n_error,
        mse=mse, bias=bias, empirical_variance_scaled=emp, coverage=cov,
        mean_ci_width=float(widths.mean()) if widths.size else float("nan"),
        mean_theta=float(theta.mean()) if theta.size else float("nan"),
        median_var_hat=float(np.median(var_hats)) if var_hats.size else
        float("nan"),
    )


def run_study(spec: StudySpec, write_outputs: bool = True) -> StudySummary:
    """Run every (design, T, trial) cell and aggregate the §6 metrics.

    mse = bias^2 + empirical variance of theta_hat holds by construction
    (population variance over trials). Trial errors are collected with their
    seed and excluded from aggregates with a count.
    """
    theta0 = spec.scenario.true_ate
    scen_dict = scenario_to_dict(spec.scenario)
    jobs = [(scen_dict, kind.value, T, spec.engine,
             spec.base_seed + idx, spec.alpha, theta0)
            for kind in spec.designs
            for T in spec.horizons
            for idx in range(spec.n_trials)]
    workers = spec.workers if spec.workers is not None else os.cpu_count()
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_trial, jobs, chunksize=4))
    else:
        results = [_one_trial(j) for j in jobs]

    rows = [r for r in results if "error" not in r]
    errors = [r for r in results if "error" in r]
    cells = []
    for kind in spec.designs:
        for T in spec.horizons:
            ok = [r for r in rows if r["design"] == kind.value and r["T"] == T]
            n_err = sum(1 for r in errors
                        if r["design"] == kind.value and r["T"] == T)
            cells.append(_summarize_cell(kind.value, T, ok, n_err, theta0))

    summary = StudySummary(name=spec.name, true_ate=theta0, cells=cells,
                           rows=rows, errors=errors)
    if write_outputs:
        out = Path(os.environ.get("ACTIVE_ATE_OUTPUT_DIR", spec.output_dir))
        out.mkdir(parents=True, exist_ok=True)
        write_trials_csv(out / f"{spec.name}_trials.csv", rows)
        text = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
        (out / f"{spec.name}_summary.json").write_text(text + "\n")
    return summary


def write_trials_csv(path: os.PathLike, rows: list[dict]) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            "%s,%d,%d,%.17g,%.17g,%.17g,%.17g,%s,%d,%d" % (
                r["design"], r["T"], r["seed"], r["theta_hat"], r["var_hat"],
                r["ci_lo"], r["ci_hi"], r["covered"], r["arm1_count"],
                r["rejected_proposals"]))
    Path(path).write_text("\n".join(lines) + "\n")


def empirical_distribution(rows: list[dict], design: DesignKind | str, T: int,
                           theta0: float, bins: int = 20) -> dict:
    """Standardized sqrt(T)(theta_hat - theta0)/sqrt(tau_hat) histogram.

    tau_hat is the cell's empirical variance of sqrt(T)(theta_hat - theta0);
    the standardized sample should look standard normal for designs with a
    normal limit.
    """
    key = DesignKind(design).value
    theta = np.array([r["theta_hat"] for r in rows
                      if r["design"] == key and r["T"] == T])
    if theta.size < 30:
        raise ValueError("need at least 30 trials for a histogram")
    scaled = np.sqrt(T) * (theta - theta0)
    tau_hat = scaled.var(ddof=1)
    degenerate = tau_hat == 0.0
    std = scaled if degenerate else scaled / np.sqrt(tau_hat)
    counts, edges = np.histogram(std, bins=1 if degenerate else bins)
    m = std.mean()
    sd = std.std(ddof=0)
    skew = 0.0 if sd == 0 else float(np.mean((std - m) ** 3) / sd ** 3)
    return {
        "design": key, "T": T, "n": int(theta.size),
        "tau_hat": float(tau_hat), "skewness": skew,
        "degenerate": bool(degenerate),
        "counts": counts.tolist(), "edges": edges.tolist(),
    }
