"""Monte-Carlo consistency benchmark.

Random second-order continuous-time systems are discretized by matrix
exponential, a random PSD cost inside the Frobenius ball is drawn, exact
trajectories are generated and corrupted with white noise at fixed SNR, and
each estimator runs over a grid of dataset sizes M. Errors land in CSV files
for plotting. Everything is reproducible from the master seed; wall-clock
times go to a separate file so the result CSVs are byte-stable.
"""

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .baseline_rm import estimate_rm
from .core_model import CostMatrix, FLOAT_FMT, LtiSystem
from .errors import InvalidSystem, RejectionBudgetExceeded
from .estimate_noisy import RiskProblem, estimate
from .forward_lqr import add_noise, generate_bundle

METHODS = ("risk_x", "risk_u", "residual_min")


@dataclass
class BenchConfig:
    n_trials: int = 30
    N: int = 50
    M_grid: tuple = (10, 50, 100, 200)
    snr_db_x: float = 15.0
    snr_db_u: float = 20.0
    phi: float = 5.0
    dt: float = 0.1
    master_seed: int = 0
    system: object = None  # optional fixed LtiSystem; None samples per trial

    def __post_init__(self):
        if not self.M_grid:
            raise ValueError("M_grid must be nonempty")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.M_grid = tuple(sorted(int(m) for m in self.M_grid))

    @classmethod
    def from_json(cls, doc):
        kwargs = {}
        for key in (
            "n_trials",
            "N",
            "M_grid",
            "snr_db_x",
            "snr_db_u",
            "phi",
            "dt",
            "master_seed",
        ):
            if key in doc:
                kwargs[key] = doc[key]
        if doc.get("system") is not None:
            s = doc["system"]
            kwargs["system"] = LtiSystem(np.array(s["A"]), np.array(s["B"]))
        return cls(**kwargs)


@dataclass
class TrialRecord:
    trial_id: int
    system_hash: str
    Q_bar: np.ndarray
    results: dict = field(default_factory=dict)  # (M, method) -> row dict
    failure: str = ""


def discretize(A_hat, B_hat, dt):
    """Zero-order-hold discretization via one matrix exponential.

    expm([[A_hat, B_hat], [0, 0]] * dt) has the discrete A in its top-left
    block and the input integral B in the top-right.
    """
    A_hat = np.asarray(A_hat, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    if B_hat.ndim == 1:
        B_hat = B_hat.reshape(-1, 1)
    n, m = B_hat.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_hat
    aug[:n, n:] = B_hat
    E = sla.expm(aug * dt)
    return LtiSystem(E[:n, :n], E[:n, n:])


def sample_instance(config, trial_id):
    """Deterministic (system, cost, initial-state sampler) for one trial.

    Companion-form continuous dynamics with feedthrough coefficients from
    U[-3,3], discretized at config.dt; Q_bar = Q1 Q1' with Q1 entries from
    U[-1,1], redrawn until ||Q_bar||_F^2 <= phi. All streams derive from
    (master_seed, trial_id).
    """
    ss = np.random.SeedSequence([config.master_seed, trial_id])
    sys_ss, q_ss, init_ss, noise_ss = ss.spawn(4)
    sys_rng = np.random.default_rng(sys_ss)
    if config.system is not None:
        sys = config.system
    else:
        sys = None
        for _ in range(1000):
            a1, a2 = sys_rng.uniform(-3.0, 3.0, size=2)
            A_hat = np.array([[0.0, 1.0], [a1, a2]])
            B_hat = np.array([[0.0], [1.0]])
            try:
                sys = discretize(A_hat, B_hat, config.dt)
                break
            except InvalidSystem:
                continue
        if sys is None:
            raise RejectionBudgetExceeded("no valid system in 1000 draws")
    q_rng = np.random.default_rng(q_ss)
    n = sys.n
    for _ in range(1000):
        Q1 = q_rng.uniform(-1.0, 1.0, size=(n, n))
        Qbar = Q1 @ Q1.T
        if float(np.sum(Qbar * Qbar)) <= config.phi:
            cost = CostMatrix(Qbar, phi=config.phi)
            break
    else:
        raise RejectionBudgetExceeded("no Q_bar inside the ball in 1000 draws")
    return sys, cost, init_ss, noise_ss


def _realized_snr(exact, noisy, which):
    num = 0.0
    den = 0.0
    for ep_e, ep_n in zip(exact.episodes, noisy.episodes):
        if which == "x":
            sig = ep_e.x[:, 1:]
            err = ep_n.x[:, 1:] - sig
        else:
            sig = ep_e.u
            err = ep_n.u - sig
        num += float(np.sum(sig * sig))
        den += float(np.sum(err * err))
    if den == 0.0:
        return float("inf")
    return 10.0 * np.log10(num / den)


def run_trial(config, trial_id):
    """All (M, method) estimates for one trial; failures recorded per cell."""
    sys, cost, init_ss, noise_ss = sample_instance(config, trial_id)
    Qbar = cost.Q
    nrm = float(np.linalg.norm(Qbar))
    sys_hash = f"{abs(hash(sys.A.tobytes() + sys.B.tobytes())):016x}"
    record = TrialRecord(trial_id=trial_id, system_hash=sys_hash, Q_bar=Qbar)
    Mmax = max(config.M_grid)
    exact = generate_bundle(
        sys, cost, config.N, Mmax, seed=init_ss,
    )
    noisy = add_noise(exact, config.snr_db_x, config.snr_db_u, seed=noise_ss)
    for M in config.M_grid:
        sub = noisy.subset(M)
        sub_exact = exact.subset(M)
        snr_x = _realized_snr(sub_exact, sub, "x")
        snr_u = _realized_snr(sub_exact, sub, "u")
        for method in METHODS:
            t0 = time.perf_counter()
            try:
                if method == "residual_min":
                    res = estimate_rm(sys, sub, phi=config.phi)
                else:
                    mode = "state_obs" if method == "risk_x" else "input_obs"
                    prob = RiskProblem(
                        sys, sub, mode=mode, phi=config.phi, record_trace=False
                    )
                    res = estimate(prob)
                err = float(np.linalg.norm(res.Q_hat.Q - Qbar)) / nrm
                row = {
                    "rel_error": err,
                    "converged": bool(res.converged),
                    "failed": False,
                    "Q_hat": res.Q_hat.Q,
                }
            except Exception as e:  # record, never abort the sweep
                row = {
                    "rel_error": float("nan"),
                    "converged": False,
                    "failed": True,
                    "Q_hat": None,
                    "error": f"{type(e).__name__}: {e}",
                }
            row["wall_ms"] = (time.perf_counter() - t0) * 1e3
            row["snr_x_realized"] = snr_x
            row["snr_u_realized"] = snr_u
            record.results[(M, method)] = row
    return record


def _fmt(x):
    if isinstance(x, float):
        if np.isnan(x):
            return "nan"
        return FLOAT_FMT % x
    return str(x)


def summarize(records, M_grid):
    """Median and quartiles of the finite errors per (M, method)."""
    rows = []
    for M in M_grid:
        for method in METHODS:
            errs = []
            for rec in records:
                cell = rec.results.get((M, method))
                if cell and np.isfinite(cell["rel_error"]):
                    errs.append(cell["rel_error"])
            if errs:
                q25, med, q75 = np.percentile(errs, [25.0, 50.0, 75.0])
            else:
                q25 = med = q75 = float("nan")
            rows.append(
                {
                    "M": M,
                    "method": method,
                    "median": float(med),
                    "q25": float(q25),
                    "q75": float(q75),
                    "n_ok": len(errs),
                }
            )
    return rows


def trials_csv(records, M_grid):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(
        ["trial_id", "M", "method", "rel_error", "converged", "snr_x_realized", "snr_u_realized"]
    )
    for rec in sorted(records, key=lambda r: r.trial_id):
        for M in M_grid:
            for method in METHODS:
                cell = rec.results.get((M, method))
                if cell is None:
                    continue
                w.writerow(
                    [
                        rec.trial_id,
                        M,
                        method,
                        _fmt(cell["rel_error"]),
                        str(bool(cell["converged"])).lower(),
                        _fmt(cell["snr_x_realized"]),
                        _fmt(cell["snr_u_realized"]),
                    ]
                )
    return buf.getvalue()


def summary_csv(summary_rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["M", "method", "median", "q25", "q75", "n_ok"])
    for row in summary_rows:
        w.writerow(
            [row["M"], row["method"], _fmt(row["median"]), _fmt(row["q25"]), _fmt(row["q75"]), row["n_ok"]]
        )
    return buf.getvalue()


def timings_csv(records, M_grid):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["trial_id", "M", "method", "wall_ms"])
    for rec in sorted(records, key=lambda r: r.trial_id):
        for M in M_grid:
            for method in METHODS:
                cell = rec.results.get((M, method))
                if cell is None:
                    continue
                w.writerow([rec.trial_id, M, method, "%.3f" % cell["wall_ms"]])
    return buf.getvalue()


def _worker(args):
    config, trial_id = args
    return run_trial(config, trial_id)


def default_workers():
    env = os.environ.get("IOC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(os.cpu_count() or 1, 4)


def run_benchmark(config, out_dir=None, n_workers=None):
    """Run every trial, write trials/summary/timings CSVs, return the records.

    Deterministic for a fixed config and master seed: per-trial RNG streams
    are independent of scheduling and records are aggregated sorted by
    trial_id. Timing data never enters trials.csv.
    """
    if n_workers is None:
        n_workers = default_workers()
    jobs = [(config, t) for t in range(config.n_trials)]
    if n_workers > 1 and config.n_trials > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(_worker, jobs))
    else:
        records = [run_trial(config, t) for t in range(config.n_trials)]
    records.sort(key=lambda r: r.trial_id)
    summary_rows = summarize(records, config.M_grid)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trials.csv"), "w", newline="") as fh:
            fh.write(trials_csv(records, config.M_grid))
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            fh.write(summary_csv(summary_rows))
        with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as fh:
            fh.write(timings_csv(records, config.M_grid))
        cfg_doc = {
            "n_trials": config.n_trials,
            "N": config.N,
            "M_grid": list(config.M_grid),
            "snr_db_x": config.snr_db_x,
            "snr_db_u": config.snr_db_u,
            "phi": config.phi,
            "dt": config.dt,
            "master_seed": config.master_seed,
        }
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(cfg_doc, fh, indent=1)
            fh.write("\n")
    return records, summary_rows
