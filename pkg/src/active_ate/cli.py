"""Command-line interface: study runner, bound reports, sample sizing.

Exit codes: 0 success, 1 runtime failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .design import bound_report, sample_size
from .engine import DesignKind, EngineConfig, run_trial
from .harness import StudySpec, run_study
from .scenario import scenario_from_dict

__all__ = ["main"]


def _load_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _resolve_json(ref: str) -> dict:
    """An argument is a JSON file path or the name of a shipped preset."""
    p = Path(ref)
    if p.exists():
        return _load_json(ref)
    pkg = resources.files("active_ate") / "presets" / f"{ref}.json"
    if pkg.is_file():
        return json.loads(pkg.read_text())
    raise FileNotFoundError(f"no study file or preset named {ref!r}")


def _cmd_run(args) -> int:
    spec_dict = _resolve_json(args.study)
    if args.output_dir:
        spec_dict["output_dir"] = args.output_dir
    if args.n_trials:
        spec_dict["n_trials"] = args.n_trials
    if args.workers is not None:
        spec_dict["workers"] = args.workers
    spec = StudySpec.from_dict(spec_dict)
    summary = run_study(spec)
    json.dump(summary.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_bound(args) -> int:
    scenario = scenario_from_dict(_resolve_json(args.scenario))
    rng = np.random.default_rng(args.seed)
    report = bound_report(scenario, args.mc_budget, rng)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_sample_size(args) -> int:
    t = sample_size(args.variance, args.delta, args.alpha, args.beta,
                    squared=args.squared)
    print(f"{t:.6f}")
    return 0


def _cmd_trial(args) -> int:
    scenario = scenario_from_dict(_resolve_json(args.scenario))
    config = EngineConfig(burn_in=args.burn_in)
    hist, report = run_trial(scenario, DesignKind(args.design), args.T,
                             config, seed=args.seed)
    print("round,x,a,y,w_used,ratio_used,rejected_proposals,psi,plugin")
    for i in range(hist.length):
        psi = "" if hist.psi is None or np.isnan(hist.psi[i]) \
            else "%.17g" % hist.psi[i]
        plug = "" if hist.plugin is None else "%.17g" % hist.plugin[i]
        print("%d,%.17g,%d,%.17g,%.17g,%.17g,%d,%s,%s" % (
            i + 1, hist.x[i, 0], hist.a[i], hist.y[i], hist.w_used[i],
            hist.ratio_used[i], hist.rejected_proposals[i], psi, plug))
    print(f"# theta_hat={report.theta_hat:.17g} "
          f"var_hat={report.variance_hat:.17g} "
          f"ci=[{report.ci_lo:.17g},{report.ci_hi:.17g}]", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="active-ate",
        description="Adaptive experimental design simulations for ATE "
                    "estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a Monte Carlo study")
    p.add_argument("study", help="study JSON file or preset name")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--n-trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bound", help="efficiency-bound report for a scenario")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--mc-budget", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("sample-size", help="required horizon arithmetic")
    p.add_argument("--variance", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--squared", action="store_true",
                   help="square the quantile term (conventional formula)")
    p.set_defaults(func=_cmd_sample_size)

    p = sub.add_parser("trial", help="run one trial, print the score log")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--design", required=True,
                   choices=[k.value for k in DesignKind])
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=25)
    p.set_defaults(func=_cmd_trial)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
