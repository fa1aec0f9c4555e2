"""Shared domain types, vectorization algebra and dataset I/O.

Conventions used everywhere: vec() is column-major, vech() stacks the lower
triangle column-major, and the duplication matrix D satisfies
vec(S) = D @ vech(S) for symmetric S.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricInput,
    DimensionMismatch,
    InvalidCost,
    InvalidSystem,
    ParseError,
    PsdViolation,
)

DEFAULT_PHI = 5.0

# 17 significant digits round-trips doubles exactly
FLOAT_FMT = "%.17g"


def sym_tol(S):
    return 1e-10 * max(1.0, float(np.linalg.norm(S)))


def psd_tol_for(Q):
    return 1e-8 * max(1.0, float(np.linalg.norm(Q)))


def rank_tol(singular_values, shape):
    """Default numerical-rank threshold: max(p,q) * sigma_max * 1e-12."""
    if len(singular_values) == 0:
        return 0.0
    return max(shape) * float(singular_values[0]) * 1e-12


def vec(Mtx):
    """Column-major vectorization of a p x q matrix."""
    return np.asarray(Mtx, dtype=float).flatten(order="F")


def vech_indices(n):
    """(row, col) pairs of the lower triangle, column-major order."""
    return [(i, j) for j in range(n) for i in range(j, n)]


def vech(S):
    """Half-vectorization: lower triangle of a symmetric matrix, column-major.

    Raises AsymmetricInput when max|S - S^T| exceeds the scale-relative
    symmetry tolerance.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got shape {S.shape}")
    if np.abs(S - S.T).max(initial=0.0) > sym_tol(S):
        raise AsymmetricInput("matrix is not symmetric within tolerance")
    n = S.shape[0]
    rows, cols = zip(*vech_indices(n))
    return S[list(rows), list(cols)].astype(float)


def unvech(v, n=None):
    """Inverse of vech: rebuild the full symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if n is None:
        # solve k = n(n+1)/2 for n
        n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise DimensionMismatch(f"vector of length {v.size} is not a vech of any n")
    S = np.zeros((n, n))
    for k, (i, j) in enumerate(vech_indices(n)):
        S[i, j] = v[k]
        S[j, i] = v[k]
    return S


class DuplicationMap:
    """The n^2 x n(n+1)/2 binary matrix D with vec(S) = D vech(S)."""

    def __init__(self, n):
        idx = vech_indices(n)
        D = np.zeros((n * n, len(idx)))
        for k, (i, j) in enumerate(idx):
            D[i + j * n, k] = 1.0
            D[j + i * n, k] = 1.0  # same entry when i == j
        D.setflags(write=False)
        self.n = n
        self.D = D

    def __repr__(self):
        return f"DuplicationMap(n={self.n})"


def duplication_map(n):
    return DuplicationMap(n).D


class LtiSystem:
    """Discrete-time pair (A, B) with x_{t+1} = A x_t + B u_t.

    Validated on construction: A invertible, B full column rank,
    (A, B) controllable.
    """

    def __init__(self, A, B):
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B rows {B.shape[0]} != n {A.shape[0]}")
        n, m = B.shape
        sv_a = np.linalg.svd(A, compute_uv=False)
        if sv_a[-1] <= rank_tol(sv_a, A.shape):
            raise InvalidSystem("not_invertible", "A is singular to working precision")
        sv_b = np.linalg.svd(B, compute_uv=False)
        if len(sv_b) < m or sv_b[-1] <= rank_tol(sv_b, B.shape):
            raise InvalidSystem("rank_deficient_B", "B does not have full column rank")
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        sv_c = np.linalg.svd(ctrb, compute_uv=False)
        if int((sv_c > rank_tol(sv_c, ctrb.shape)).sum()) < n:
            raise InvalidSystem("uncontrollable", "(A, B) is not controllable")
        A.setflags(write=False)
        B.setflags(write=False)
        self.A = A
        self.B = B
        self.n = n
        self.m = m

    def __repr__(self):
        return f"LtiSystem(n={self.n}, m={self.m})"


class CostMatrix:
    """Symmetric PSD state-cost matrix inside the Frobenius ball ||Q||_F^2 <= phi.

    Stored as its half-vectorization so the full matrix view is exactly
    symmetric. psd_tol may be overridden for data known only to a few
    printed decimals.
    """

    def __init__(self, Q, phi=DEFAULT_PHI, psd_tol=None):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch(f"Q must be square, got {Q.shape}")
        if np.abs(Q - Q.T).max(initial=0.0) > sym_tol(Q):
            raise AsymmetricInput("Q is not symmetric within tolerance")
        if phi <= 0:
            raise InvalidCost("phi must be positive")
        vh = vech(0.5 * (Q + Q.T))
        Qv = unvech(vh, Q.shape[0])
        tol = psd_tol_for(Qv) if psd_tol is None else float(psd_tol)
        lam_min = float(np.linalg.eigvalsh(Qv)[0]) if Q.shape[0] else 0.0
        if lam_min < -tol:
            raise PsdViolation(f"min eigenvalue {lam_min:.3e} < -{tol:.3e}")
        fro2 = float(np.sum(Qv * Qv))
        if fro2 > phi * (1 + 1e-9):
            raise InvalidCost(f"||Q||_F^2 = {fro2:.6g} exceeds phi = {phi:.6g}")
        self._vh = vh
        self._vh.setflags(write=False)
        self.n = Q.shape[0]
        self.phi = float(phi)
        self.psd_tol = tol

    @property
    def Q(self):
        return unvech(self._vh, self.n)

    @property
    def vh(self):
        return self._vh

    def __repr__(self):
        return f"CostMatrix(n={self.n}, phi={self.phi})"


def as_q(Q):
    """Plain ndarray view of a CostMatrix or array-like cost."""
    if isinstance(Q, CostMatrix):
        return Q.Q
    return np.asarray(Q, dtype=float)


@dataclass(frozen=True)
class Episode:
    x: np.ndarray  # n x N, columns x_1..x_N
    u: np.ndarray  # m x (N-1), columns u_1..u_{N-1}


KINDS = ("exact", "noisy_state", "noisy_input", "noisy_both")


class TrajectoryBundle:
    """M episodes of states and inputs over a shared horizon N.

    kind records whether (and where) noise was injected; exact bundles are
    checked against the dynamics when a system is supplied.
    """

    def __init__(self, episodes, N, kind="exact", snr_db_x=None, snr_db_u=None):
        if kind not in KINDS:
            raise DimensionMismatch(f"kind must be one of {KINDS}")
        if not episodes:
            raise DimensionMismatch("bundle needs at least one episode")
        eps = []
        n = np.asarray(episodes[0].x).shape[0]
        m = np.asarray(episodes[0].u).shape[0]
        for ep in episodes:
            x = np.array(ep.x, dtype=float)
            u = np.array(ep.u, dtype=float)
            if x.shape != (n, N) or u.shape != (m, N - 1):
                raise DimensionMismatch(
                    f"episode shapes {x.shape}, {u.shape} do not match (n={n}, N={N}, m={m})"
                )
            x.setflags(write=False)
            u.setflags(write=False)
            eps.append(Episode(x, u))
        self.episodes = tuple(eps)
        self.N = int(N)
        self.n = n
        self.m = m
        self.kind = kind
        self.snr_db_x = snr_db_x
        self.snr_db_u = snr_db_u

    @property
    def M(self):
        return len(self.episodes)

    def initial_states(self):
        return np.stack([ep.x[:, 0] for ep in self.episodes], axis=1)  # n x M

    def check_dynamics(self, sys, dyn_tol=1e-8):
        """Max dynamics residual over the bundle; raises for exact bundles."""
        worst = 0.0
        for ep in self.episodes:
            pred = sys.A @ ep.x[:, :-1] + sys.B @ ep.u
            worst = max(worst, float(np.abs(pred - ep.x[:, 1:]).max(initial=0.0)))
        if self.kind == "exact" and worst > dyn_tol:
            raise DimensionMismatch(
                f"exact bundle violates dynamics: residual {worst:.3e} > {dyn_tol:.1e}"
            )
        return worst

    def subset(self, M):
        """First M episodes as a new bundle (shared arrays)."""
        if not 1 <= M <= self.M:
            raise DimensionMismatch(f"M={M} outside 1..{self.M}")
        out = TrajectoryBundle.__new__(TrajectoryBundle)
        out.episodes = self.episodes[:M]
        out.N, out.n, out.m = self.N, self.n, self.m
        out.kind = self.kind
        out.snr_db_x, out.snr_db_u = self.snr_db_x, self.snr_db_u
        return out


def _fmt(x):
    return FLOAT_FMT % x


def _matrix_out(Mtx):
    return [[float(_fmt(v)) for v in row] for row in np.asarray(Mtx, dtype=float)]


def save_system(sys, path):
    doc = {"n": sys.n, "m": sys.m, "A": _matrix_out(sys.A), "B": _matrix_out(sys.B)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_system(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    try:
        A = np.array(doc["A"], dtype=float)
        B = np.array(doc["B"], dtype=float)
        n, m = int(doc["n"]), int(doc["m"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: missing or malformed field ({e})") from e
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if A.shape != (n, n) or B.shape != (n, m):
        raise ParseError(f"{path}: declared dims (n={n}, m={m}) do not match matrices")
    return LtiSystem(A, B)


def save_cost(cost, path):
    doc = {"n": cost.n, "phi": float(_fmt(cost.phi)), "Q": _matrix_out(cost.Q)}
    # non-default tolerance must survive the round trip (matrices printed to
    # a few decimals sit slightly outside the cone); default stays implicit
    if cost.psd_tol != psd_tol_for(cost.Q):
        doc["psd_tol"] = float(_fmt(cost.psd_tol))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_cost(path, psd_tol=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    try:
        Q = np.array(doc["Q"], dtype=float)
        n = int(doc["n"])
        phi = float(doc.get("phi", DEFAULT_PHI))
        if psd_tol is None and "psd_tol" in doc:
            psd_tol = float(doc["psd_tol"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: missing or malformed field ({e})") from e
    if Q.shape != (n, n):
        raise ParseError(f"{path}: Q shape {Q.shape} does not match n={n}")
    return CostMatrix(Q, phi=phi, psd_tol=psd_tol)


def save_bundle(bundle, path, comments=()):
    """Trajectory CSV: header `episode,t,x1..xn,u1..um`, u columns empty at t=N.

    A comment line carries kind and SNR metadata so noisy bundles round-trip;
    extra comment lines (settings echoes) are skipped by the loader.
    """
    n, m, N = bundle.n, bundle.m, bundle.N
    with open(path, "w", newline="") as fh:
        sx = "none" if bundle.snr_db_x is None else _fmt(bundle.snr_db_x)
        su = "none" if bundle.snr_db_u is None else _fmt(bundle.snr_db_u)
        fh.write(f"# kind={bundle.kind},snr_db_x={sx},snr_db_u={su}\n")
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(
            ["episode", "t"]
            + [f"x{i+1}" for i in range(n)]
            + [f"u{j+1}" for j in range(m)]
        )
        for i, ep in enumerate(bundle.episodes, start=1):
            for t in range(1, N + 1):
                row = [str(i), str(t)] + [_fmt(v) for v in ep.x[:, t - 1]]
                if t < N:
                    row += [_fmt(v) for v in ep.u[:, t - 1]]
                else:
                    row += [""] * m
                w.writerow(row)


def load_bundle(path):
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError(f"{path}: empty file")
    kind, snr_x, snr_u = "exact", None, None
    lines = text.splitlines()
    while lines and lines[0].startswith("#"):
        meta = lines[0].lstrip("# ").strip()
        for part in meta.split(","):
            if "=" not in part:
                continue
            key, val = part.split("=", 1)
            key, val = key.strip(), val.strip()
            if key == "kind" and val in KINDS:
                kind = val
            elif key in ("snr_db_x", "snr_db_u") and val != "none":
                try:
                    v = float(val)
                except ValueError:
                    raise ParseError(f"{path}: bad metadata value {val!r}")
                if key == "snr_db_x":
                    snr_x = v
                else:
                    snr_u = v
        lines = lines[1:]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: no header row")
    if len(header) < 3 or header[0] != "episode" or header[1] != "t":
        raise ParseError(f"{path}: unexpected header {header!r}")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    if n == 0 or 2 + n + m != len(header):
        raise ParseError(f"{path}: header does not define x/u columns cleanly")
    rows = {}
    for row in reader:
        if not row:
            continue
        try:
            epi, t = int(row[0]), int(row[1])
            xs = [float(v) for v in row[2 : 2 + n]]
            us = [float(v) for v in row[2 + n : 2 + n + m] if v != ""]
        except (ValueError, IndexError) as e:
            raise ParseError(f"{path}: bad row {row!r} ({e})") from e
        rows.setdefault(epi, {})[t] = (xs, us)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    Ns = {max(ts) for ts in rows.values()}
    if len(Ns) != 1:
        raise ParseError(f"{path}: episodes disagree on horizon: {sorted(Ns)}")
    N = Ns.pop()
    episodes = []
    for epi in sorted(rows):
        ts = rows[epi]
        if sorted(ts) != list(range(1, N + 1)):
            raise ParseError(f"{path}: episode {epi} is missing time steps")
        x = np.empty((n, N))
        u = np.empty((m, N - 1))
        for t in range(1, N + 1):
            xs, us = ts[t]
            x[:, t - 1] = xs
            if t < N:
                if len(us) != m:
                    raise ParseError(
                        f"{path}: episode {epi} t={t} has {len(us)} inputs, wanted {m}"
                    )
                u[:, t - 1] = us
            elif us:
                raise ParseError(f"{path}: episode {epi} has inputs at t=N")
        episodes.append(Episode(x, u))
    return TrajectoryBundle(episodes, N, kind=kind, snr_db_x=snr_x, snr_db_u=snr_u)
