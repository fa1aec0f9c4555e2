"""Forward finite-horizon LQR with cost sum(u_t'u_t + x_t'Q x_t).

Three independent solution routes are provided: backward Riccati recursion,
the stacked two-point boundary-value linear system F(Q) Z = b, and a direct
dense QP over the inputs. They exist so they can cross-check each other.
"""

import logging

import numpy as np
import scipy.linalg as sla

from .core_model import Episode, TrajectoryBundle, as_q
from .errors import (
    DimensionMismatch,
    NumericalFailure,
    SingularSystem,
    SizeGuardExceeded,
)

log = logging.getLogger(__name__)


class GainSchedule:
    """Time-varying feedback u_t = K_t x_t with the value matrices P_t.

    K[t-1] is K_t for t = 1..N-1; P[t-2] is P_t for t = 2..N (P_N = 0).
    """

    def __init__(self, K, P, sys):
        self.K = K
        self.P = P
        self.sys = sys
        self.N = len(K) + 1

    def K_t(self, t):
        return self.K[t - 1]

    def P_t(self, t):
        return self.P[t - 2]

    def A_cl(self, t):
        return self.sys.A + self.sys.B @ self.K[t - 1]


def solve_riccati(sys, Q, N):
    """Backward Riccati recursion from P_N = 0.

    P_t = A'P_{t+1}A + Q - A'P_{t+1}B (B'P_{t+1}B + I)^{-1} B'P_{t+1}A,
    K_t = -(B'P_{t+1}B + I)^{-1} B'P_{t+1}A. P is re-symmetrized each step.
    """
    if N < 2:
        raise DimensionMismatch("horizon must be at least 2")
    A, B = sys.A, sys.B
    Qm = as_q(Q)
    if Qm.shape != (sys.n, sys.n):
        raise DimensionMismatch(f"Q shape {Qm.shape} != ({sys.n}, {sys.n})")
    P = np.zeros((sys.n, sys.n))
    Ks = [None] * (N - 1)
    Ps = [None] * (N - 1)
    Ps[N - 2] = P  # P_N
    for t in range(N - 1, 0, -1):
        G = B.T @ P @ B + np.eye(sys.m)
        try:
            cf = sla.cho_factor(G, lower=True)
        except np.linalg.LinAlgError as e:  # pragma: no cover - PSD P keeps G PD
            raise NumericalFailure(f"(B'PB + I) not positive definite at t={t}") from e
        BtPA = B.T @ P @ A
        Ks[t - 1] = -sla.cho_solve(cf, BtPA)
        P = A.T @ P @ A + Qm - BtPA.T @ sla.cho_solve(cf, BtPA)
        P = 0.5 * (P + P.T)
        if t >= 2:
            Ps[t - 2] = P
    return GainSchedule(Ks, Ps, sys)


def simulate(sys, gains, x_bar):
    """Closed-loop rollout x_1 = x_bar, u_t = K_t x_t."""
    x_bar = np.asarray(x_bar, dtype=float).reshape(-1)
    if x_bar.size != sys.n:
        raise DimensionMismatch(f"x_bar has {x_bar.size} entries, wanted {sys.n}")
    N = gains.N
    x = np.zeros((sys.n, N))
    u = np.zeros((sys.m, N - 1))
    x[:, 0] = x_bar
    for t in range(N - 1):
        u[:, t] = gains.K[t] @ x[:, t]
        x[:, t + 1] = sys.A @ x[:, t] + sys.B @ u[:, t]
    return Episode(x, u)


def cost_of(sys, Q, episode):
    """J = sum_{t=1}^{N-1} u_t'u_t + x_t'Q x_t."""
    Qm = as_q(Q)
    x, u = episode.x, episode.u
    return float(np.sum(u * u) + np.einsum("it,ij,jt->", x[:, :-1], Qm, x[:, :-1]))


def solve_qp_oracle(sys, Q, N, x_bar):
    """Direct minimization over the stacked inputs, states eliminated.

    x_t = A^{t-1} x_bar + sum_s A^{t-1-s} B u_s makes J a strictly convex
    quadratic in U = (u_1; ...; u_{N-1}); solve the normal equations. Meant
    as an independent oracle for the Riccati and boundary-value routes, so it
    shares no code with them.
    """
    n, m = sys.n, sys.m
    if m * (N - 1) > 2000:
        raise SizeGuardExceeded(f"m(N-1) = {m * (N - 1)} exceeds the dense-QP guard")
    Qm = as_q(Q)
    x_bar = np.asarray(x_bar, dtype=float).reshape(-1)
    Apow = [np.eye(n)]
    for _ in range(N - 1):
        Apow.append(sys.A @ Apow[-1])
    # x_t = free_t + Phi_t U with Phi_t columns A^{t-1-s} B for s < t
    nu = m * (N - 1)
    H = np.eye(nu)  # u'u part
    g = np.zeros(nu)
    for t in range(1, N):  # states x_1..x_{N-1} enter the cost
        free = Apow[t - 1] @ x_bar
        Phi = np.zeros((n, nu))
        for s in range(1, t):
            Phi[:, (s - 1) * m : s * m] = Apow[t - 1 - s] @ sys.B
        H += Phi.T @ Qm @ Phi
        g += Phi.T @ (Qm @ free)
    U = np.linalg.solve(0.5 * (H + H.T), -g)
    u = U.reshape(N - 1, m).T
    x = np.zeros((n, N))
    x[:, 0] = x_bar
    for t in range(N - 1):
        x[:, t + 1] = sys.A @ x[:, t] + sys.B @ u[:, t]
    return Episode(x, u)


class PmpSystem:
    """The stacked boundary-value system F(Q) Z = A_tilde x_bar.

    Z stacks z_t = (x_t, lambda_t) for t = 2..N. G_x extracts x_{2:N};
    G_u extracts u_{1:N-1} via u_t = -B' lambda_{t+1}.
    """

    def __init__(self, F_of_Q, A_tilde, G_x, G_u, sys, N):
        self.F_of_Q = F_of_Q
        self.A_tilde = A_tilde
        self.G_x = G_x
        self.G_u = G_u
        self.sys = sys
        self.N = N


def build_pmp_system(sys, Q, N):
    """Assemble F(Q) with blocks E, F, E-tilde, F-tilde.

    First block row (E-tilde at column 1, F-tilde at column N-1) carries the
    first dynamics step and the terminal condition lambda_N = 0; every later
    row k has -F at column k-1 and E at column k.
    """
    n, m = sys.n, sys.m
    if N < 2:
        raise DimensionMismatch("horizon must be at least 2")
    A, B = sys.A, sys.B
    Qm = as_q(Q)
    BBt = B @ B.T
    E = np.block([[np.eye(n), BBt], [np.zeros((n, n)), A.T]])
    F = np.block([[A, np.zeros((n, n))], [-Qm, np.eye(n)]])
    Et = np.block([[np.eye(n), BBt], [np.zeros((n, 2 * n))]])
    Ft = np.block([[np.zeros((n, 2 * n))], [np.zeros((n, n)), np.eye(n)]])
    nb = N - 1
    sz = 2 * n * nb
    Fm = np.zeros((sz, sz))
    Fm[: 2 * n, : 2 * n] = Et
    Fm[: 2 * n, (nb - 1) * 2 * n :] += Ft  # += so N=2 (one block) keeps both parts
    for r in range(1, nb):
        Fm[r * 2 * n : (r + 1) * 2 * n, (r - 1) * 2 * n : r * 2 * n] = -F
        Fm[r * 2 * n : (r + 1) * 2 * n, r * 2 * n : (r + 1) * 2 * n] = E
    A_tilde = np.zeros((sz, n))
    A_tilde[:n, :] = A
    G_x = np.kron(np.eye(nb), np.hstack([np.eye(n), np.zeros((n, n))]))
    G_u = np.kron(np.eye(nb), np.hstack([np.zeros((m, n)), -B.T]))
    if log.isEnabledFor(logging.DEBUG):
        log.debug("F(Q) condition number: %.6e", np.linalg.cond(Fm))
    return PmpSystem(Fm, A_tilde, G_x, G_u, sys, N)


def pmp_solve(pmp, x_bar):
    """Solve the boundary-value system; returns (x_{2:N}, lambda_{2:N}, u_{1:N-1})."""
    n, m = pmp.sys.n, pmp.sys.m
    x_bar = np.asarray(x_bar, dtype=float).reshape(-1)
    b = pmp.A_tilde @ x_bar
    try:
        Z = sla.solve(pmp.F_of_Q, b)
    except (np.linalg.LinAlgError, sla.LinAlgError) as e:
        raise SingularSystem("F(Q) is singular; Q is not PSD or inputs are corrupt") from e
    nb = pmp.N - 1
    Zb = Z.reshape(nb, 2 * n).T
    xs = Zb[:n, :]
    lams = Zb[n:, :]
    us = np.zeros((m, nb))
    for t in range(nb):  # u_t = -B' lambda_{t+1}, lambda index t+1 -> column t
        us[:, t] = -pmp.sys.B.T @ lams[:, t]
    return xs, lams, us


def inputs_from_states(sys, x):
    """Least-squares input reconstruction u_t = (B'B)^{-1} B'(x_{t+1} - A x_t).

    Returns (u, residuals); residuals[t-1] is the per-step equation-error norm
    so callers can see when the states did not come from these dynamics.
    """
    x = np.asarray(x, dtype=float)
    N = x.shape[1]
    dx = x[:, 1:] - sys.A @ x[:, :-1]
    u, *_ = np.linalg.lstsq(sys.B, dx, rcond=None)
    resid = np.linalg.norm(sys.B @ u - dx, axis=0)
    return u, resid


def _as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def generate_bundle(sys, Q, N, M, init_sampler=None, seed=0):
    """M exact episodes from i.i.d. initial states (default U[-5,5]^n).

    Each episode draws from its own child RNG stream, so results do not
    depend on evaluation order.
    """
    if M < 1:
        raise DimensionMismatch("M must be at least 1")
    gains = solve_riccati(sys, Q, N)
    if init_sampler is None:
        init_sampler = lambda rng: rng.uniform(-5.0, 5.0, size=sys.n)
    episodes = []
    for ss in _as_seedseq(seed).spawn(M):
        rng = np.random.default_rng(ss)
        episodes.append(simulate(sys, gains, init_sampler(rng)))
    return TrajectoryBundle(episodes, N, kind="exact")


def add_noise(bundle, snr_db_x=None, snr_db_u=None, seed=0):
    """White Gaussian noise at the requested per-episode SNR.

    y_t = x_t + v_t for t = 2..N (x_1 stays exact), mu_t = u_t + w_t for
    t = 1..N-1. Noise is rescaled so each episode's realized SNR matches the
    request exactly, with signal power averaged over all entries. Pass None
    (or "none") to leave a component untouched.
    """
    def _parse(s):
        if s is None or (isinstance(s, str) and s.lower() == "none"):
            return None
        return float(s)

    snr_x = _parse(snr_db_x)
    snr_u = _parse(snr_db_u)
    if snr_x is None and snr_u is None:
        return bundle
    if bundle.kind != "exact":
        raise DimensionMismatch("add_noise expects an exact bundle")
    if snr_x is not None and snr_u is not None:
        kind = "noisy_both"
    elif snr_x is not None:
        kind = "noisy_state"
    else:
        kind = "noisy_input"

    def _noisy(sig, snr_db, rng):
        v = rng.standard_normal(sig.shape)
        p_sig = float(np.mean(sig * sig))
        p_noise = float(np.mean(v * v))
        if p_sig == 0.0 or p_noise == 0.0:
            return sig.copy()
        v *= np.sqrt(p_sig * 10.0 ** (-snr_db / 10.0) / p_noise)
        return sig + v

    episodes = []
    for ep, ss in zip(bundle.episodes, _as_seedseq(seed).spawn(bundle.M)):
        rng = np.random.default_rng(ss)
        x = ep.x.copy()
        u = ep.u.copy()
        if snr_x is not None:
            x[:, 1:] = _noisy(ep.x[:, 1:], snr_x, rng)
        if snr_u is not None:
            u = _noisy(ep.u, snr_u, rng)
        episodes.append(Episode(x, u))
    return TrajectoryBundle(episodes, bundle.N, kind=kind, snr_db_x=snr_x, snr_db_u=snr_u)
