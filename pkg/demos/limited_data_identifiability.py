"""One trajectory is not always enough: a 3-state system observed for a
single episode leaves a one-dimensional family of cost matrices that explain
the data. The dual certificate shows the true cost is still the only PSD
member of that family, and the kernel search recovers it.

Matrices are given to four decimals, so recovered entries are only good to
about 5e-5.
"""

import numpy as np

import ioclqr as io

A = np.array([
    [-0.1922, -0.2490, 1.2347],
    [-0.2741, -1.0642, -0.2296],
    [1.5301, 1.6035, -1.5062],
])
B = np.array([[-0.4446], [-0.1559], [0.2761]])
Q_true = np.array([
    [0.0068, -0.0116, -0.0102],
    [-0.0116, 0.0197, 0.0174],
    [-0.0102, 0.0174, 0.0154],
])
x0 = np.array([-25.0136, -18.9592, -14.8221])
N = 15

sys = io.LtiSystem(A, B)
cost = io.CostMatrix(Q_true, psd_tol=1e-4)  # 4-decimal data dips below the cone
bundle = io.generate_bundle(sys, cost, N, M=1, seed=0,
                            init_sampler=lambda rng: x0)

report = io.assess(sys, bundle)
print("rank of the data matrix:", report.rank_AD, "(full would be 6)")
print("kernel dimension:", report.kernel_dim)
print("verdict:", report.verdict)
print("dual certificate rank:", report.prop2.rank_Phi)

# the one flat direction the data cannot see
K = report.kernel_basis[0]
print("kernel direction:\n", np.round(K / np.abs(K).max(), 4))

Q_hat = io.recover_with_kernel(sys, bundle, report)
print("max entrywise recovery error:", np.abs(Q_hat.Q - Q_true).max())

# recovered cost regenerates the observed episode
regen = io.generate_bundle(sys, Q_hat, N, M=1, seed=0,
                           init_sampler=lambda rng: x0)
gap = max(np.abs(regen.episodes[0].x - bundle.episodes[0].x).max(),
          np.abs(regen.episodes[0].u - bundle.episodes[0].u).max())
print("regenerated trajectory gap:", gap)
