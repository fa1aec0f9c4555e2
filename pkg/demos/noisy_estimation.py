"""Estimate the state cost from noisy observations, one instance.

A continuous-time system with companion-form dynamics is sampled, held at
dt=0.1, and observed at 15 dB (states) / 20 dB (inputs). The two risk
minimizers and the residual-minimization baseline get the same data at two
dataset sizes.

Single instances scatter a lot; benchmark_small.py aggregates medians over
trials, which is where the estimator comparison actually lives.
"""

import numpy as np

import ioclqr as io
from ioclqr import bench_harness as bh

cfg = io.BenchConfig(n_trials=1, master_seed=42)
sys, cost, init_ss, noise_ss = bh.sample_instance(cfg, trial_id=2)
Q_true = cost.Q
print("A:\n", sys.A)
print("true Q:\n", Q_true)

exact = io.generate_bundle(sys, cost, cfg.N, 60, seed=init_ss)
noisy = io.add_noise(exact, cfg.snr_db_x, cfg.snr_db_u, seed=noise_ss)

def rel(Q):
    return np.linalg.norm(Q - Q_true) / np.linalg.norm(Q_true)

for M in (10, 60):
    sub = noisy.subset(M)
    rx = io.estimate(io.RiskProblem(sys, sub, mode="state_obs", record_trace=False))
    ru = io.estimate(io.RiskProblem(sys, sub, mode="input_obs", record_trace=False))
    rm = io.estimate_rm(sys, sub)
    # score the baseline at its best scalar rescaling (it fixes R = I, so
    # absolute scale is the hardest part for it)
    c = np.sum(rm.Q_hat.Q * Q_true) / np.sum(rm.Q_hat.Q ** 2)
    print(f"M={M:3d}  risk-x {rel(rx.Q_hat.Q):.4f}  risk-u {rel(ru.Q_hat.Q):.4f}"
          f"  residual-min {rel(c * rm.Q_hat.Q):.4f} (rescaled)")

print("risk-x estimate at M=60:\n",
      io.estimate(io.RiskProblem(sys, noisy, mode="state_obs",
                                 record_trace=False)).Q_hat.Q)
