"""Ten-trial consistency benchmark (a small version of the full study).

Each trial samples a continuous-time double-integrator-like system, holds it
at dt=0.1, draws a PSD cost inside the Frobenius ball, and scores every
estimator on noisy datasets of increasing size. Results land in CSV files.
"""

import tempfile
from pathlib import Path

import ioclqr as io
from ioclqr.bench_harness import run_benchmark

cfg = io.BenchConfig(n_trials=10, N=50, M_grid=(10, 50, 200), master_seed=42)
out = Path(tempfile.mkdtemp(prefix="ioclqr_bench_"))
records, summary = run_benchmark(cfg, out_dir=out, n_workers=1)

print(f"{'M':>4} {'method':>14} {'median':>9} {'q25':>9} {'q75':>9}")
for row in summary:
    print(f"{row['M']:>4} {row['method']:>14} {row['median']:>9.4f}"
          f" {row['q25']:>9.4f} {row['q75']:>9.4f}")
print("full per-trial table:", out / "trials.csv")
