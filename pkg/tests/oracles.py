"""Independent reference computations used by the tests.

Nothing here imports the persistence, variational or gfqi modules; each
oracle recomputes its answer from first principles (closed forms, dense
brute force, explicit linear algebra over GF(2)).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize

# ------------------------------------------------------------------ GF(2)


def gf2_rank(M) -> int:
    """Rank over GF(2) of a 0/1 matrix by Gaussian elimination."""
    A = np.array(M, dtype=bool)
    if A.size == 0:
        return 0
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        below = np.flatnonzero(A[:, c])
        below = below[below != r]
        A[below] ^= A[r]
        r += 1
        if r == rows:
            break
    return r


def gf2_nullspace(M) -> np.ndarray:
    """Basis (as rows) of the GF(2) kernel of M (columns are the variables)."""
    A = np.array(M, dtype=bool)
    rows, cols = A.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        others = np.flatnonzero(A[:, c])
        others = others[others != r]
        A[others] ^= A[r]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in set(pivots)]
    basis = np.zeros((len(free), cols), dtype=bool)
    for i, f in enumerate(free):
        basis[i, f] = True
        for row, pc in enumerate(pivots):
            if A[row, f]:
                basis[i, pc] = True
    return basis


# ---------------------------------------------------- torus cubical complex


def periodic_square_complex(values):
    """Cells of the periodic cubical complex on an N x M vertex grid.

    Returns lists of (cells, filtration values, boundary lists) per dimension,
    built by explicit enumeration of vertices, edges and squares.
    """
    V = np.asarray(values, dtype=float)
    N, M = V.shape
    vid = {(i, j): i * M + j for i in range(N) for j in range(M)}
    verts = [((i, j),) for i in range(N) for j in range(M)]
    vval = [V[i, j] for i in range(N) for j in range(M)]
    edges, evals, ebnd = [], [], []
    eid = {}
    for i in range(N):
        for j in range(M):
            for di, dj in ((1, 0), (0, 1)):
                a, b = (i, j), ((i + di) % N, (j + dj) % M)
                eid[(a, (di, dj))] = len(edges)
                edges.append((a, b))
                evals.append(max(V[a], V[b]))
                ebnd.append([vid[a], vid[b]])
    squares, svals, sbnd = [], [], []
    for i in range(N):
        for j in range(M):
            a = (i, j)
            b = ((i + 1) % N, j)
            c = (i, (j + 1) % M)
            d = ((i + 1) % N, (j + 1) % M)
            squares.append(a)
            svals.append(max(V[a], V[b], V[c], V[d]))
            sbnd.append([eid[(a, (1, 0))], eid[(a, (0, 1))], eid[(b, (0, 1))], eid[(c, (1, 0))]])
    return [(verts, np.array(vval), [[] for _ in verts]), (edges, np.array(evals), ebnd),
            (squares, np.array(svals), sbnd)]


def _boundary_matrix(bnd, n_rows):
    D = np.zeros((n_rows, len(bnd)), dtype=bool)
    for col, faces in enumerate(bnd):
        for f in faces:
            D[f, col] ^= True
    return D


def persistent_betti(cx, p, a, b):
    """rank H_p(K_a) -> H_p(K_b) for the sublevel complexes K_a, K_b (a <= b)."""
    _, vals_p, bnd_p = cx[p]
    in_a = vals_p <= a
    n_p = len(vals_p)
    if p == 0:
        Z = np.eye(n_p, dtype=bool)[in_a]
    else:
        D = _boundary_matrix(bnd_p, len(cx[p - 1][1]))[:, in_a]
        Zc = gf2_nullspace(D)
        Z = np.zeros((len(Zc), n_p), dtype=bool)
        Z[:, np.flatnonzero(in_a)] = Zc
    if p + 1 < len(cx):
        _, vals_q, bnd_q = cx[p + 1]
        Dq = _boundary_matrix(bnd_q, n_p)[:, vals_q <= b]
        Bgen = Dq.T
    else:
        Bgen = np.zeros((0, n_p), dtype=bool)
    rb = gf2_rank(Bgen)
    return gf2_rank(np.concatenate([Z, Bgen], axis=0)) - rb


def brute_force_diagram(values):
    """Persistence diagram of the lower-star filtration on the periodic grid.

    Uses the rank function: the multiplicity of the bar [v_i, v_j) in degree p is
    beta(i, j-1) - beta(i, j) - beta(i-1, j-1) + beta(i-1, j).
    """
    cx = periodic_square_complex(values)
    levels = np.unique(np.asarray(values, dtype=float))
    L = len(levels)
    bars = []
    for p in range(3):
        beta = {}

        def B(i, j):
            if i < 0:
                return 0
            key = (i, j)
            if key not in beta:
                beta[key] = persistent_betti(cx, p, levels[i], levels[min(j, L - 1)])
            return beta[key]

        for i in range(L):
            for j in range(i + 1, L):
                m = B(i, j - 1) - B(i, j) - B(i - 1, j - 1) + B(i - 1, j)
                bars += [(p, levels[i], levels[j])] * m
            m = B(i, L - 1) - B(i - 1, L - 1)
            bars += [(p, levels[i], math.inf)] * m
    out = np.array(bars, dtype=float).reshape(-1, 3)
    return out[np.lexsort((out[:, 2], out[:, 1], out[:, 0]))]


def _lower_left_ranks(bnd, row_vals, col_vals, levels):
    """R[i + 1, j] = GF(2) rank of the boundary submatrix with rows of value
    > levels[i] (all rows for i = -1) and columns of value <= levels[j].

    One incremental elimination per row threshold; vectors are Python ints
    used as bitsets over the rows.
    """
    L = len(levels)
    cols = [sum(1 << int(f) for f in set(faces) if faces.count(f) % 2) for faces in bnd]
    order = np.argsort(col_vals, kind="stable")
    col_level = np.searchsorted(levels, np.asarray(col_vals)[order])
    R = np.zeros((L + 1, L), dtype=int)
    for i in range(-1, L):
        thr = -math.inf if i < 0 else levels[i]
        keep = sum(1 << int(r) for r in np.flatnonzero(np.asarray(row_vals) > thr))
        pivots, rank, pos = {}, 0, 0
        for j in range(L):
            while pos < len(order) and col_level[pos] <= j:
                v = cols[order[pos]] & keep
                while v:
                    h = v.bit_length() - 1
                    if h not in pivots:
                        pivots[h] = v
                        rank += 1
                        break
                    v ^= pivots[h]
                pos += 1
            R[i + 1, j] = rank
    return R


def rank_function_diagram(values):
    """Same diagram as :func:`brute_force_diagram`, with the persistent Betti
    numbers taken from submatrix ranks:

        beta_p(a, b) = #p-cells(a) - rank d_p(a) - rank d_{p+1}(b) + rank [d_{p+1}(b) on rows above a],

    since the boundaries of K_b lying in K_a are exactly the kernel of the
    projection onto the rows of cells outside K_a.
    """
    cx = periodic_square_complex(values)
    levels = np.unique(np.asarray(values, dtype=float))
    L = len(levels)
    R = [None] + [_lower_left_ranks(cx[p][2], cx[p - 1][1], cx[p][1], levels) for p in (1, 2)]
    bars = []
    for p in range(3):
        n_p = np.array([np.count_nonzero(cx[p][1] <= a) for a in levels])
        rank_dp = R[p][0] if p > 0 else np.zeros(L, dtype=int)
        if p < 2:
            beta = n_p[:, None] - rank_dp[:, None] - R[p + 1][0][None, :] + R[p + 1][1:]
        else:
            beta = np.repeat((n_p - rank_dp)[:, None], L, axis=1)

        def B(i, j):
            return 0 if i < 0 else int(beta[i, min(j, L - 1)])

        for i in range(L):
            for j in range(i + 1, L):
                m = B(i, j - 1) - B(i, j) - B(i - 1, j - 1) + B(i - 1, j)
                bars += [(p, levels[i], levels[j])] * m
            m = B(i, L - 1) - B(i - 1, L - 1)
            bars += [(p, levels[i], math.inf)] * m
    out = np.array(bars, dtype=float).reshape(-1, 3)
    return out[np.lexsort((out[:, 2], out[:, 1], out[:, 0]))]


# ------------------------------------------------------------ pendulum


def pendulum_rotation_action(E: float) -> float:
    """Integral over one period of sqrt(2 (E - cos 2 pi q))."""
    return quad(lambda q: math.sqrt(max(0.0, 2.0 * (E - math.cos(2 * math.pi * q)))), 0.0, 1.0, limit=200)[0]


PLATEAU_EDGE = pendulum_rotation_action(1.0)  # equals 4 / pi


def pendulum_alpha_exact(a: float) -> float:
    """Mather alpha of 1/2 p^2 + cos(2 pi q): 1 on the plateau, else the energy of the rotating torus."""
    a = abs(a)
    if a <= PLATEAU_EDGE:
        return 1.0
    return brentq(lambda E: pendulum_rotation_action(E) - a, 1.0, 1.0 + a * a)


def _pendulum_chain_action(x, q0, q_end, h, amp=1.0):
    q = np.concatenate([[q0], x, [q_end]])
    v = np.diff(q) / h
    qm = 0.5 * (q[1:] + q[:-1])
    val = h * np.sum(0.5 * v * v - amp * np.cos(2 * np.pi * qm))
    dv = v  # dL/dv
    dq = amp * 2 * np.pi * np.sin(2 * np.pi * qm)  # dL/dq at midpoints
    g = np.zeros_like(q)
    g[:-1] += 0.5 * h * dq - dv
    g[1:] += 0.5 * h * dq + dv
    return val, g[1:-1]


def pendulum_beta(m: int, T: int = 8, steps: int = 32, starts: int = 6) -> float:
    """Average minimal action over curves with displacement m over T periods (endpoints q0, q0 + m).

    q0 is scanned; interior points are optimized by L-BFGS with the analytic
    gradient of the pendulum Lagrangian 1/2 v^2 - cos(2 pi q).
    """
    M = T * steps
    h = 1.0 / steps
    best = math.inf
    for q0 in np.linspace(0.0, 1.0, starts, endpoint=False):
        x0 = q0 + m * np.arange(1, M) / M
        res = minimize(_pendulum_chain_action, x0, args=(q0, q0 + m, h), jac=True, method="L-BFGS-B",
                       options={"maxiter": 5000, "gtol": 1e-10})
        best = min(best, res.fun)
    return best / T


def pendulum_alpha_from_beta(a_values, T: int = 8, steps: int = 32, m_max: int | None = None):
    """Rotation-constrained oracle: alpha(a) = max_m (a m / T - beta(m / T))."""
    a_values = np.atleast_1d(np.asarray(a_values, dtype=float))
    if m_max is None:
        m_max = int(math.ceil(T * (np.max(np.abs(a_values)) + 1.5)))
    ms = np.arange(-m_max, m_max + 1)
    betas = {}
    for m in ms:
        if -m in betas:
            betas[m] = betas[-m]  # the pendulum is symmetric under q -> -q
        else:
            betas[m] = pendulum_beta(int(m), T, steps)
    return np.array([max(a * m / T - betas[m] for m in ms) for a in a_values])


def random_curve_search(k: int, curves: int = 10_000, seed: int = 0, M_per: int = 8) -> float:
    """Lowest pendulum action among random piecewise-linear and constant curves on [0, k]."""
    rng = np.random.default_rng(seed)
    M = k * M_per
    h = 1.0 / M_per
    best = math.inf
    for q in np.linspace(0.0, 1.0, 200, endpoint=False):
        best = min(best, -k * math.cos(2 * math.pi * (q + 0.0)))  # constant curves: integrand -cos
    for _ in range(curves // 100):
        scale = rng.choice([0.02, 0.1, 0.5])
        steps = rng.normal(0.0, scale, (100, M))
        q = np.concatenate([rng.random((100, 1)), steps], axis=1).cumsum(axis=1)
        v = np.diff(q, axis=1) / h
        qm = 0.5 * (q[:, 1:] + q[:, :-1])
        vals = h * np.sum(0.5 * v * v - np.cos(2 * np.pi * qm), axis=1)
        best = min(best, float(vals.min()))
    return best


def fenchel_bruteforce(H_of_p, v, p_lo=-20.0, p_hi=20.0, n=100_001):
    """sup_p (p v - H(p)) on a dense momentum grid."""
    p = np.linspace(p_lo, p_hi, n)
    Hp = H_of_p(p)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.array([np.max(p * vi - Hp) for vi in v])


# ---------------------------------------------------------------- flows


def pendulum_flow(q, p, tau, steps=2000, amp=1.0):
    """Classical RK4 for q' = p, p' = 2 pi amp sin(2 pi q) (analytic right-hand side)."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    dt = tau / steps

    def f(q, p):
        return p, 2 * np.pi * amp * np.sin(2 * np.pi * q)

    for _ in range(steps):
        k1 = f(q, p)
        k2 = f(q + dt / 2 * k1[0], p + dt / 2 * k1[1])
        k3 = f(q + dt / 2 * k2[0], p + dt / 2 * k2[1])
        k4 = f(q + dt * k3[0], p + dt * k3[1])
        q = q + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return q, p


def flipped_image_of_zero_section(tau, n=20_000, steps=400):
    """Dense sample of {(Q, -P)} for (Q, P) the pendulum time-tau image of the zero section."""
    q0 = np.linspace(0.0, 1.0, n, endpoint=False)
    Q, P = pendulum_flow(q0, np.zeros_like(q0), tau, steps)
    return np.stack([np.mod(Q, 1.0), -P], axis=1)


def one_sided_distance(A, B):
    """max over a in A of the distance to B, q taken mod 1 (A, B of shape (m, 2))."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    out = 0.0
    for a in A:
        d = B - a
        d[:, 0] -= np.round(d[:, 0])
        out = max(out, float(np.min(np.hypot(d[:, 0], d[:, 1]))))
    return out


# ------------------------------------------------------------ trig polys


def random_trig_poly(seed: int, degree: int = 3):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=degree)
    b = rng.normal(size=degree)

    def f(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape)
        for j in range(degree):
            out = out + a[j] * np.cos(2 * np.pi * (j + 1) * q) + b[j] * np.sin(2 * np.pi * (j + 1) * q)
        return out
    return f


def dense_extrema(f, n=200_001):
    x = np.linspace(0.0, 1.0, n, endpoint=False)
    y = f(x)
    return float(y.min()), float(y.max())


__all__ = [name for name in dir() if not name.startswith("_") and name not in ("math", "np")]
