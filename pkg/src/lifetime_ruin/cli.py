"""Command-line entry point.

    lifetime-ruin run SCENARIO.ini [--seed N] [--out DIR] [--paths N] [--grid N]

Writes ``funds.csv``, ``phi.csv``, ``sim.csv`` and ``verify.csv`` (for the
tasks requested) and prints a summary table. On failure a single line
``error=<Code> <message>`` goes to stderr and the exit status is

    2  configuration / model error
    3  numerical failure (non-convergence, instability)
    4  decomposition verification above threshold
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import closedform, hjb, mcsim
from .config import Scenario, load_scenario
from .errors import DegenerateNormalizer, ModelError, NumericalError, RuinError, UnsupportedModel
from .fundalg import fund_vectors
from .verify import verify_decomposition

logger = logging.getLogger("lifetime_ruin")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

FUNDS_ORDER = ("g", "f", "h", "gtilde", "ftilde", "ghat")


class VerificationFailed(RuinError):
    code = "VerificationFailed"


def write_funds_csv(path: Path, model) -> None:
    """One row per vector: ``vector, sum, riskless, asset_1..asset_n``."""
    vecs = fund_vectors(model)
    n = model.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vector", "sum", "riskless"] + [f"asset_{j + 1}" for j in range(n)])
        for name in FUNDS_ORDER:
            if name not in vecs:
                continue
            v = vecs[name]
            riskless = repr(float(v[0])) if v.size == n + 1 else ""
            w.writerow([name, repr(float(v.sum())), riskless] + [repr(float(x)) for x in v[-n:]])


def write_verify_csv(path: Path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "samples", "max_abs_residual", "max_wealth_gap", "threshold", "passed"])
        for c in report.checks:
            ok = c.max_abs_residual < report.threshold and c.max_wealth_gap < report.threshold
            w.writerow([c.mode, c.samples, repr(c.max_abs_residual), repr(c.max_wealth_gap),
                        repr(report.threshold), int(ok)])


def run_scenario(sc: Scenario, out=None) -> int:
    """Execute every task in ``sc`` and print the summary; returns the exit status."""
    out = sys.stdout if out is None else out
    model = sc.model
    sc.out_dir.mkdir(parents=True, exist_ok=True)
    tasks = set(sc.tasks)

    # precondition gates before any work is done
    if "closed_form" in tasks:
        closedform.build(model, sc.c0)
    if {"hjb", "simulate"} & tasks and sc.mode == "with_riskless" and not model.has_riskless:
        raise UnsupportedModel("mode with_riskless needs r in [market]")

    rows: list[tuple[str, str]] = [
        ("config", sc.source or "<string>"),
        ("seed", str(sc.seed)),
        ("W0, c0", f"{sc.W0:g}, {sc.c0:g}"),
    ]
    z0 = sc.W0 / sc.c0
    oracle = None
    sol = None
    failed_verify = None

    if "funds" in tasks:
        write_funds_csv(sc.out_dir / "funds.csv", model)
        rows.append(("funds", str(sc.out_dir / "funds.csv")))

    if "closed_form" in tasks:
        cf = closedform.build(model, sc.c0)
        oracle = float(closedform.psi(cf, sc.W0))
        rows += [("closed_form p", f"{cf.p:.6f}"), ("closed_form psi(W0)", f"{oracle:.6f}")]

    if "hjb" in tasks or ("simulate" in tasks and oracle is None):
        grid = hjb.default_grid(model, sc.mode, nodes=sc.grid)
        if sc.z_max is not None:
            grid = hjb.GridSpec(sc.z_max, sc.grid)
        sol = hjb.solve(model, sc.mode, grid)
        hjb.write_csv(sol, sc.out_dir / "phi.csv", model)
        value = float(sol.value_at(z0))
        rows += [("hjb phi(W0/c0)", f"{value:.6f}"),
                 ("hjb iterations", str(sol.iterations)),
                 ("hjb residual", f"{sol.residual:.3e}")]
        if oracle is not None:
            cf1 = closedform.build(model, 1.0)
            err = float(np.max(np.abs(sol.phi - closedform.psi(cf1, sol.z))))
            rows.append(("hjb max|phi - psi|", f"{err:.3e}"))

    if "simulate" in tasks:
        if oracle is not None:
            strategy = mcsim.Strategy.closed_form_feedback(closedform.build(model, sc.c0))
            reference, ref_name = oracle, "closed form"
        else:
            strategy = mcsim.Strategy.hjb_policy(sol, model)
            reference, ref_name = float(sol.value_at(z0)), "hjb"
        cfg = mcsim.SimConfig(n_paths=sc.paths, dt=sc.dt, horizon=sc.horizon, seed=sc.seed,
                              antithetic=sc.antithetic, bridge=sc.bridge)
        res = mcsim.run(model, strategy, sc.W0, sc.c0, cfg)
        mcsim.write_sim_csv(sc.out_dir / "sim.csv", [(Path(sc.source).stem or "scenario", res)])
        report = mcsim.compare([res], reference, labels=["mc"])
        rows += [("mc estimate", f"{res.ruin_estimate:.6f} +/- {res.std_error:.6f}"),
                 (f"mc z vs {ref_name}", f"{report.rows[0].z_score:+.2f}"
                  + (" FLAGGED" if report.any_flagged else ""))]

    if "verify_decomposition" in tasks:
        vr = verify_decomposition(model, sc.verify_samples, sc.seed)
        write_verify_csv(sc.out_dir / "verify.csv", vr)
        rows.append(("verify max residual", f"{vr.max_residual:.3e}"))
        if not vr.passed:
            failed_verify = vr

    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}", file=out)
    if failed_verify is not None:
        raise VerificationFailed(
            f"decomposition residual {failed_verify.max_residual:.3e} >= {failed_verify.threshold:.0e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifetime-ruin",
                                     description="Minimum probability of lifetime ruin: funds, oracle, HJB, Monte Carlo.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, help="override scenario.seed (unsigned 64-bit)")
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument("--paths", type=int, help="Monte Carlo paths")
    run.add_argument("--grid", type=int, help="HJB grid nodes")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("out_dir", args.out),
                                       ("paths", args.paths), ("grid", args.grid)) if v is not None}
        sc = dataclasses.replace(sc, **overrides)
        if sc.seed < 0 or sc.seed >= 2**64:
            raise ModelError("seed must be an unsigned 64-bit integer")
        return run_scenario(sc)
    except VerificationFailed as exc:
        print(f"error={exc.code} {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ModelError, DegenerateNormalizer) as exc:
        print(f"error={getattr(exc, 'code', type(exc).__name__)} {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error={exc.code} {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error=ConfigError {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
