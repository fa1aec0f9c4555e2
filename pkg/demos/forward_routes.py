"""Solve one finite-horizon LQR three independent ways and compare.

The backward Riccati recursion, the stacked boundary-value system, and a
dense quadratic program over the inputs share no code, so agreement here is
a real cross-check rather than a tautology.
"""

import numpy as np

import ioclqr as io

rng = np.random.default_rng(7)
A = rng.standard_normal((3, 3))
A *= 0.9 / max(abs(np.linalg.eigvals(A)))
B = rng.standard_normal((3, 1))
sys = io.LtiSystem(A, B)

G = rng.standard_normal((3, 3))
Q = G @ G.T
Q *= 0.8 / np.linalg.norm(Q)
N = 12
x0 = np.array([2.0, -1.0, 0.5])

gains = io.solve_riccati(sys, Q, N)
ep = io.simulate(sys, gains, x0)
print("riccati route: J =", io.cost_of(sys, Q, ep))

xs, lams, us = io.pmp_solve(io.build_pmp_system(sys, Q, N), x0)
print("boundary-value route: max |x| gap =", np.abs(ep.x[:, 1:] - xs).max())
print("boundary-value route: max |u| gap =", np.abs(ep.u - us).max())

ep_qp = io.solve_qp_oracle(sys, Q, N, x0)
print("dense-QP route:       max |x| gap =", np.abs(ep.x - ep_qp.x).max())
print("dense-QP route:       max |u| gap =", np.abs(ep.u - ep_qp.u).max())

# nudging any single input off the optimum must increase the cost
worse = ep.u.copy()
worse[0, 3] += 1e-3
x = np.zeros_like(ep.x)
x[:, 0] = x0
for t in range(N - 1):
    x[:, t + 1] = sys.A @ x[:, t] + sys.B @ worse[:, t]
print("cost after a 1e-3 input nudge rises by",
      io.cost_of(sys, Q, io.Episode(x, worse)) - io.cost_of(sys, Q, ep))
