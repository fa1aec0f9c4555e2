"""Command-line surface.

Five subcommands cover the batch workflows: forward (solve and simulate one
episode), generate (sample a dataset, optionally noisy), identify (rank and
certificate report), estimate (recover the state cost by one of four
methods), and bench (Monte-Carlo consistency study). Exit codes: 0 success,
1 file or parse trouble, 2 validation failure, 3 solver non-convergence.
"""

import argparse
import json
import sys

import numpy as np

from .baseline_rm import estimate_rm
from .bench_harness import BenchConfig, default_workers, run_benchmark
from .core_model import (
    DEFAULT_PHI,
    TrajectoryBundle,
    load_bundle,
    load_cost,
    load_system,
    save_bundle,
)
from .errors import (
    AmbiguousSolution,
    AsymmetricInput,
    DimensionMismatch,
    HypothesisUnmet,
    InvalidCost,
    InvalidSystem,
    NotIdentifiable,
    NumericalFailure,
    ParseError,
    PsdViolation,
    RejectionBudgetExceeded,
    ResidualTooLarge,
    SingularSystem,
    SizeGuardExceeded,
    SolverNotConverged,
)
from .estimate_noiseless import recover_exact
from .estimate_noisy import EstimateResult, RiskProblem, estimate
from .forward_lqr import add_noise, generate_bundle, simulate, solve_riccati
from .identifiability import assess

DEFAULT_EPSILON = 1e-3
DEFAULT_HORIZON = 50
DEFAULT_DT = 0.1

VALIDATION_ERRORS = (
    InvalidSystem,
    InvalidCost,
    AsymmetricInput,
    PsdViolation,
    DimensionMismatch,
    SizeGuardExceeded,
    HypothesisUnmet,
    NotIdentifiable,
    ResidualTooLarge,
    AmbiguousSolution,
    RejectionBudgetExceeded,
)
SOLVER_ERRORS = (SolverNotConverged, NumericalFailure, SingularSystem)


def _x0_type(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad x0 {text!r}, want comma-separated floats")
    if not vals:
        raise argparse.ArgumentTypeError("x0 is empty")
    return np.array(vals)


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def cmd_forward(args):
    sys_ = load_system(args.system)
    cost = load_cost(args.cost)
    if args.x0.shape[0] != sys_.n:
        raise DimensionMismatch(f"x0 has {args.x0.shape[0]} entries, system has n={sys_.n}")
    gains = solve_riccati(sys_, cost, args.horizon)
    ep = simulate(sys_, gains, args.x0)
    bundle = TrajectoryBundle([ep], args.horizon, kind="exact")
    save_bundle(
        bundle,
        args.out,
        comments=[f"settings horizon={args.horizon} phi={cost.phi:g}"],
    )
    print(f"wrote {args.out} (N={args.horizon}, 1 episode)")


def cmd_generate(args):
    sys_ = load_system(args.system)
    cost = load_cost(args.cost)
    bundle = generate_bundle(sys_, cost, args.horizon, args.episodes, seed=args.seed)
    noisy = add_noise(
        bundle, args.snr_x, args.snr_u, seed=np.random.SeedSequence([args.seed, 1])
    )
    save_bundle(
        noisy,
        args.out,
        comments=[
            "settings horizon={} episodes={} seed={} phi={:g}".format(
                args.horizon, args.episodes, args.seed, cost.phi
            )
        ],
    )
    print(f"wrote {args.out} (kind={noisy.kind}, M={noisy.M})")


def cmd_identify(args):
    sys_ = load_system(args.system)
    bundle = load_bundle(args.bundle)
    report = assess(sys_, bundle)
    _write_json(report.to_json(), args.out)
    print(f"verdict: {report.verdict} (rank {report.rank_AD}, kernel dim {report.kernel_dim})")


def cmd_estimate(args):
    sys_ = load_system(args.system)
    bundle = load_bundle(args.bundle)
    if args.mode == "exact":
        Q_hat = recover_exact(sys_, bundle, phi=args.phi)
        w = np.linalg.eigvalsh(Q_hat.Q)
        result = EstimateResult(
            Q_hat=Q_hat,
            objective_trace=[],
            grad_norm_final=0.0,
            constraint_activity={
                "psd_margin": float(w[0]),
                "ball_margin": float(args.phi - np.sum(Q_hat.Q * Q_hat.Q)),
            },
            converged=True,
            n_iter=0,
            method="exact",
            config={
                "mode": "exact",
                "phi": args.phi,
                "epsilon": args.epsilon,
                "N": bundle.N,
                "M": bundle.M,
            },
        )
    elif args.mode == "residual-min":
        result = estimate_rm(sys_, bundle, phi=args.phi, epsilon=args.epsilon)
        result.config.update({"N": bundle.N, "M": bundle.M})
    else:
        mode = "state_obs" if args.mode == "risk-x" else "input_obs"
        prob = RiskProblem(sys_, bundle, mode=mode, phi=args.phi, epsilon=args.epsilon)
        result = estimate(prob)
        result.config.update({"N": bundle.N, "M": bundle.M})
    if not result.converged:
        raise SolverNotConverged(
            f"{result.method} stopped without meeting tolerances "
            f"(final grad norm {result.grad_norm_final:.2e})"
        )
    _write_json(result.to_json(), args.out)
    print(f"wrote {args.out} (method={result.method}, converged={result.converged})")


def cmd_bench(args):
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{args.config}: {e}") from e
        config = BenchConfig.from_json(doc)
    else:
        config = BenchConfig()
    workers = args.workers if args.workers else default_workers()
    run_benchmark(config, out_dir=args.out_dir, n_workers=workers)
    print(f"wrote trials.csv, summary.csv, timings.csv under {args.out_dir}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="ioclqr",
        description="Inverse optimal control for finite-horizon LQR: forward solves, "
        "identifiability checks, cost recovery, and consistency benchmarks.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="solve the LQR and simulate one episode")
    f.add_argument("--system", required=True, help="system JSON (A, B)")
    f.add_argument("--cost", required=True, help="cost JSON (Q, phi)")
    f.add_argument("--x0", required=True, type=_x0_type, help="comma-separated initial state")
    f.add_argument("--horizon", type=int, default=DEFAULT_HORIZON, help="horizon N (default %(default)s)")
    f.add_argument("--out", required=True, help="trajectory CSV to write")
    f.set_defaults(func=cmd_forward)

    g = sub.add_parser("generate", help="sample a trajectory dataset, optionally noisy")
    g.add_argument("--system", required=True)
    g.add_argument("--cost", required=True)
    g.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    g.add_argument("--episodes", type=int, default=1, help="number of episodes M")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--snr-x", default="none", help='state SNR in dB, or "none"')
    g.add_argument("--snr-u", default="none", help='input SNR in dB, or "none"')
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("identify", help="identifiability report for an exact dataset")
    i.add_argument("--system", required=True)
    i.add_argument("--bundle", required=True, help="trajectory CSV")
    i.add_argument("--out", required=True, help="report JSON to write")
    i.set_defaults(func=cmd_identify)

    e = sub.add_parser("estimate", help="recover the state cost from a dataset")
    e.add_argument("--system", required=True)
    e.add_argument("--bundle", required=True)
    e.add_argument(
        "--mode",
        required=True,
        choices=("exact", "risk-x", "risk-u", "residual-min"),
        help="estimator to run",
    )
    e.add_argument("--phi", type=float, default=DEFAULT_PHI, help="Frobenius ball radius squared")
    e.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="eigenvalue smoothing width")
    e.add_argument("--out", required=True, help="estimate JSON to write")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="run the Monte-Carlo consistency benchmark")
    b.add_argument("--config", help="benchmark config JSON (defaults used if omitted)")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--workers", type=int, default=0, help="worker processes (default: IOC_THREADS or cpu count)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SOLVER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
