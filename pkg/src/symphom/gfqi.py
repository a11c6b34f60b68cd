"""Generating functions quadratic at infinity on T^n x R^f.

Conventions.  A generating function ``S(q, xi)`` generates the Lagrangian
``{(q, dS/dq) : dS/dxi = 0}``.  Hamiltonian-side constructions
(:func:`one_step_gf`, :func:`compose_gf`, :func:`gf_of_function`) generate
the image of the zero section under the momentum flip ``p -> -p`` composed
with the map, and their critical values are Hamiltonian actions
``int H dt - int p dq`` of the arcs leaving the zero section.  The
Lagrangian-side :func:`broken_geodesic_gf` generates the unflipped image of
the zero section under the time-k map and its critical values are
Lagrangian actions; :func:`negate_flip` converts between the two.

Step data.  Maps are encoded by mixed generating functions ``w(Q, p)`` with
old momentum ``p`` and new position ``Q``: ``q = Q - dw/dp`` and
``P = p - dw/dQ``.  The one-step function is ``S(Q; u, p) = <p, u> + w(Q, p)``
with quadratic form ``<p, u> + s|p|^2``; fiber coordinates are rotated into
the eigenbasis of that form so that B is diagonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import flow
from .geometry import Axis, CohomologyClass, HamiltonianSpec, fenchel_lagrangian, grad_p, shift_hamiltonian
from .gridio import write_grid

__all__ = [
    "GeneratingFunction",
    "LagrangianPointCloud",
    "StepTooLarge",
    "FiberBudgetExceeded",
    "NoSplitBase",
    "NotQuadraticAtInfinity",
    "FIBER_BUDGET",
    "C1_GATE",
    "gf_of_function",
    "one_step_gf",
    "compose_gf",
    "restrict_fiber_slice",
    "negate_flip",
    "stabilize",
    "broken_geodesic_gf",
    "critical_locus",
    "induced_function_on_L",
    "check_quadratic_at_infinity",
    "sample_on_mesh",
    "export_grid",
    "torus_hausdorff",
]

FIBER_BUDGET = 6
C1_GATE = 0.3


class StepTooLarge(ValueError):
    """The time-tau map is not C^1-close enough to the identity; subdivide."""


class FiberBudgetExceeded(ValueError):
    pass


class NoSplitBase(ValueError):
    pass


class NotQuadraticAtInfinity(ValueError):
    pass


def _pts(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if n == 1 and x.shape[-1] != 1:
        x = x[..., None]
    return x


@dataclass(frozen=True, eq=False)
class GeneratingFunction:
    """A gfqi on T^n x R^f with diagonal quadratic form ``sum B_i xi_i^2`` at infinity.

    ``impl.value_and_grad(q, xi)`` returns ``(S, dS/dq, dS/dxi)``.  The
    ``fiber_box`` half-widths bound the region outside which S behaves like
    B; ``core`` half-widths bound the region holding the critical data.
    """

    base_dim: int
    fiber_dim: int
    impl: object
    B: tuple
    fiber_box: tuple
    core: tuple
    label: str = ""
    step: object = None
    family: object = None

    def __post_init__(self):
        if not (len(self.B) == len(self.fiber_box) == len(self.core) == self.fiber_dim):
            raise ValueError("B, fiber_box and core must have one entry per fiber coordinate")
        if any(b == 0 for b in self.B):
            raise ValueError("quadratic form at infinity must be non-degenerate")

    @property
    def neg_index(self) -> int:
        return sum(1 for b in self.B if b < 0)

    @property
    def d(self) -> int:
        return self.neg_index

    def _args(self, q, xi):
        q = _pts(q, self.base_dim)
        if self.fiber_dim == 0:
            xi = np.zeros(q.shape[:-1] + (0,)) if xi is None else np.asarray(xi, dtype=float)
        else:
            xi = _pts(xi, self.fiber_dim)
        lead = np.broadcast_shapes(q.shape[:-1], xi.shape[:-1])
        q = np.broadcast_to(q, lead + (self.base_dim,))
        xi = np.broadcast_to(xi, lead + (self.fiber_dim,))
        return q, xi

    def value_and_grad(self, q, xi=None):
        q, xi = self._args(q, xi)
        return self.impl.value_and_grad(q, xi)

    def eval(self, q, xi=None):
        q, xi = self._args(q, xi)
        if hasattr(self.impl, "value"):
            return self.impl.value(q, xi)
        return self.impl.value_and_grad(q, xi)[0]

    __call__ = eval

    def B_value(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.sum(np.asarray(self.B) * xi * xi, axis=-1)

    def B_grad(self, xi):
        return 2.0 * np.asarray(self.B) * np.asarray(xi, dtype=float)


@dataclass(frozen=True, eq=False)
class LagrangianPointCloud:
    """Points (q, p) of a generated Lagrangian with their fiber witnesses."""

    q: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    residuals: np.ndarray
    tol: float

    def __len__(self):
        return len(self.q)


# ----------------------------------------------------------- step maps

class ShearStep:
    """Time-1 map of H = g(q): (q, p) -> (q, p - dg(q)); w(Q, p) = g(Q)."""

    quad = 0.0

    def __init__(self, fn):
        self.fn = fn

    def solve(self, Q, p):
        w, wQ = self.fn.value_and_grad(Q)
        return w, wQ, np.zeros(np.broadcast_shapes(Q.shape, p.shape))

    def deviation_bound(self, n, box):
        rng = np.random.default_rng(7)
        Q = rng.random((256, n))
        return float(np.max(np.abs(self.fn.value_and_grad(Q)[1])))


def _momentum_only(H) -> bool:
    rng = np.random.default_rng(17)
    n = H.dim
    t = rng.random(64)
    q = rng.random((64, n))
    p = rng.uniform(-2 * H.fiber_radius, 2 * H.fiber_radius, (64, n))
    return bool(np.array_equal(H(t, q, p), H(np.zeros(64), np.zeros((64, n)), p)))


class FlowStep:
    """Time-tau map of H from t0, solved for given new position and old momentum."""

    def __init__(self, H: HamiltonianSpec, t0: float, tau: float, substeps: int | None = None):
        self.H = H
        self.t0 = float(t0)
        self.tau = float(tau)
        if substeps is None and _momentum_only(H):
            # q' = H'(p), p' = 0: a single RK4 step is exact
            substeps = 1
        self.substeps = substeps
        self.quad = 0.5 * self.tau * H.p_growth

    def solve(self, Q, p, tol: float = 1e-11, maxiter: int = 60):
        H, n = self.H, self.H.dim
        Q, p = np.broadcast_arrays(np.asarray(Q, dtype=float), np.asarray(p, dtype=float))
        q = Q - self.tau * grad_p(H, self.t0, Q, p)
        res = flow(H, self.t0, self.tau, q, p, self.substeps, jacobian=True)
        Jinv = np.linalg.inv(res.jacobian[..., :n, :n])
        # per-point stopping keeps each value independent of the batch it is solved in
        scale = 1.0 + np.max(np.abs(Q), axis=-1)
        prev = np.full(scale.shape, np.inf)
        Qf, qf, pf, Jf = Q.reshape(-1, n), q.reshape(-1, n).copy(), p.reshape(-1, n), Jinv.reshape(-1, n, n)
        qe, pe, se = res.q.reshape(-1, n).copy(), res.p.reshape(-1, n).copy(), res.action.reshape(-1).copy()
        scale, prev = scale.reshape(-1), prev.reshape(-1)
        active = np.arange(len(Qf))
        for _ in range(maxiter):
            F = qe[active] - Qf[active]
            err = np.max(np.abs(F), axis=-1)
            sc = scale[active]
            # chord iterations stall at the roundoff floor of the vector field
            done = (err < tol * sc) | ((err < 1e3 * tol * sc) & (err >= 0.5 * prev[active]))
            prev[active] = err
            active, F = active[~done], F[~done]
            if len(active) == 0:
                break
            qf[active] = qf[active] - np.einsum("...ij,...j->...i", Jf[active], F)
            r = flow(H, self.t0, self.tau, qf[active], pf[active], self.substeps)
            qe[active], pe[active], se[active] = r.q, r.p, r.action
        else:
            raise StepTooLarge(f"implicit step did not converge (residual {float(np.max(err)):.2e})")
        q, Pn, act = qf.reshape(Q.shape), pe.reshape(Q.shape), se.reshape(Q.shape[:-1])
        w = np.sum((Q - q) * p, axis=-1) - act
        return w, p - Pn, Q - q

    def c1_deviation(self, p_max: float, samples: int = 12) -> float:
        n = self.H.dim
        qs = (np.arange(samples) + 0.5) / samples
        ps = np.linspace(-p_max, p_max, 9)
        if n == 1:
            q = np.repeat(qs, len(ps))[:, None]
            p = np.tile(ps, len(qs))[:, None]
        else:
            rng = np.random.default_rng(3)
            q = rng.random((samples * 9, n))
            p = rng.uniform(-p_max, p_max, (samples * 9, n))
        res = flow(self.H, self.t0, self.tau, q, p, self.substeps, jacobian=True)
        dev = res.jacobian[..., :n, :n] - np.eye(n)
        return float(np.max(np.linalg.norm(dev, ord=2, axis=(-2, -1))))

    def deviation_bound(self, n, box):
        rng = np.random.default_rng(7)
        Q = rng.random((64, n))
        p = rng.uniform(-box, box, (64, n))
        w, wQ, wp = self.solve(Q, p)
        return float(np.max(np.abs(wQ)) + np.max(np.abs(wp - 2 * self.quad * p)))


def _rotation(n, s):
    # eigenbasis of the form <p, u> + s|p|^2 in z = (u, p)
    M = np.zeros((2 * n, 2 * n))
    M[:n, n:] = 0.5 * np.eye(n)
    M[n:, :n] = 0.5 * np.eye(n)
    M[n:, n:] = s * np.eye(n)
    lam, V = np.linalg.eigh(M)
    # fix signs so the rotation is deterministic
    for j in range(2 * n):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    return lam, V


# ------------------------------------------------------------ evaluators

class _TorusFunction:
    def __init__(self, fn, n, h=1e-4):
        self.fn = fn
        self.n = n
        self.h = h

    def value(self, q):
        return np.asarray(self.fn(q), dtype=float) * np.ones(q.shape[:-1])

    def value_and_grad(self, q):
        q = np.asarray(q, dtype=float)
        v = self.value(q)
        g = np.empty(q.shape)
        h = self.h
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            f1 = self.value(q + e) - self.value(q - e)
            f2 = self.value(q + 2 * e) - self.value(q - 2 * e)
            g[..., i] = (8 * f1 - f2) / (12 * h)
        return v, g


class _ExprOnTorus:
    def __init__(self, text, n):
        from .expr import Expression
        self.expr = Expression(text, n)

    def __call__(self, q):
        return self.expr(0.0, q, np.zeros_like(q))


class _FunctionGF:
    def __init__(self, fn):
        self.fn = fn

    def value(self, q, xi):
        return self.fn.value(q)

    def value_and_grad(self, q, xi):
        v, g = self.fn.value_and_grad(q)
        return v, g, np.zeros(xi.shape)


class _StepGF:
    def __init__(self, step, V, n):
        self.step = step
        self.V = V
        self.n = n

    def value_and_grad(self, q, xi):
        n = self.n
        z = xi @ self.V.T
        u, p = z[..., :n], z[..., n:]
        w, wQ, wp = self.step.solve(q, p)
        S = np.sum(p * u, axis=-1) + w
        gz = np.concatenate([p, u + wp], axis=-1)
        return S, wQ, gz @ self.V


class _ComposeGF:
    def __init__(self, inner, step, V, n, f1):
        self.inner = inner
        self.step = step
        self.V = V
        self.n = n
        self.f1 = f1

    def value_and_grad(self, q, xi):
        n, f1 = self.n, self.f1
        z = xi[..., f1:] @ self.V.T
        u, p = z[..., :n], z[..., n:]
        s1, s1q, s1x = self.inner.value_and_grad(q + u, xi[..., :f1])
        w, wQ, wp = self.step.solve(q, p)
        S = s1 + np.sum(p * u, axis=-1) + w
        gz = np.concatenate([s1q + p, u + wp], axis=-1)
        return S, s1q + wQ, np.concatenate([s1x, gz @ self.V], axis=-1)


class _NegGF:
    def __init__(self, inner):
        self.inner = inner

    def value_and_grad(self, q, xi):
        s, sq, sx = self.inner.value_and_grad(q, xi)
        return -s, -sq, -sx


class _StabGF:
    def __init__(self, inner, coeff, f):
        self.inner = inner
        self.coeff = coeff
        self.f = f

    def value_and_grad(self, q, xi):
        s, sq, sx = self.inner.value_and_grad(q, xi[..., :self.f])
        x = xi[..., self.f]
        return s + self.coeff * x * x, sq, np.concatenate([sx, (2 * self.coeff * x)[..., None]], axis=-1)


class _BrokenGeodesicGF:
    """Discrete action of a k-period broken geodesic ending at Q (n = 1)."""

    def __init__(self, L, m, tau, a, vR, c):
        self.L = L
        self.m = m
        self.tau = tau
        self.a = a
        self.vR = vR
        self.c = c

    def _ext(self, t, q, v):
        # L beyond the speed cap continued with a C^1 quadratic tail
        vR, c = self.vR, self.c
        pi = np.clip(v, -vR, vR)
        e = v - pi
        L0, Lq, Lv = self.L.value_and_grad(t, q[..., None], pi[..., None])
        L0, Lq, Lv = L0, Lq[..., 0], Lv[..., 0]
        val = L0 + Lv * e + 0.5 * c * e * e
        dv = Lv + c * e
        dq = Lq
        mask = e != 0
        if np.any(mask):
            h = 1e-5
            tm = np.broadcast_to(t, q.shape)[mask]
            qm, pm = q[mask], pi[mask]
            lp = self.L.value_and_grad(tm, (qm + h)[:, None], pm[:, None])[2][:, 0]
            lm = self.L.value_and_grad(tm, (qm - h)[:, None], pm[:, None])[2][:, 0]
            dq = dq.copy()
            dq[mask] += (lp - lm) / (2 * h) * e[mask]
        return val, dq, dv

    def value_and_grad(self, q, xi):
        m, tau, a = self.m, self.tau, self.a
        Q = q[..., 0]
        suffix = np.cumsum(xi[..., ::-1], axis=-1)[..., ::-1]
        after = np.concatenate([suffix[..., 1:], np.zeros(xi.shape[:-1] + (1,))], axis=-1)
        mid = Q[..., None] - after - 0.5 * xi
        v = xi / tau
        t = (np.arange(m) + 0.5) * tau
        val, Lq, Lv = self._ext(t, mid, v)
        S = tau * np.sum(val - a * v, axis=-1)
        before = np.cumsum(Lq, axis=-1) - Lq
        gxi = (Lv - a) - tau * (0.5 * Lq + before)
        gq = tau * np.sum(Lq, axis=-1)
        return S, gq[..., None], gxi


# --------------------------------------------------- quadratic-at-infinity

def _shell_samples(S, scale, samples, rng):
    f = S.fiber_dim
    box = np.asarray(S.fiber_box) * scale
    xi = rng.uniform(-1, 1, (samples, f)) * box
    face = rng.integers(0, f, samples)
    sign = rng.choice([-1.0, 1.0], samples)
    xi[np.arange(samples), face] = sign * box[face]
    q = rng.random((samples, S.base_dim))
    return q, xi


def check_quadratic_at_infinity(S: GeneratingFunction, samples: int = 256, seed: int = 0, raise_on_fail=True):
    """Sample dS/dxi on the fiber-box shell and on a shell twice as far out.

    Passes when dS/dxi has positive inner product with dB/dxi on both shells
    and the deviation |dS/dxi - dB/dxi| does not grow between them.
    Returns ``(passed, inner_min, dev_inner, dev_outer)``.
    """
    if S.fiber_dim == 0:
        return True, math.inf, 0.0, 0.0
    rng = np.random.default_rng(seed)
    stats = []
    inner_min = math.inf
    for scale in (1.0, 2.0):
        q, xi = _shell_samples(S, scale, samples, rng)
        _, _, g = S.value_and_grad(q, xi)
        gB = S.B_grad(xi)
        inner = np.sum(g * gB, axis=-1) / np.maximum(np.sum(gB * gB, axis=-1), 1e-300)
        inner_min = min(inner_min, float(np.min(inner)))
        stats.append(float(np.max(np.linalg.norm(g - gB, axis=-1))))
    ok = inner_min > 0 and stats[1] <= 1.5 * stats[0] + 1e-9
    if not ok and raise_on_fail:
        raise NotQuadraticAtInfinity(f"{S.label}: shell inner product {inner_min:.3g}, "
                                     f"deviation {stats[0]:.3g} -> {stats[1]:.3g}")
    return ok, inner_min, stats[0], stats[1]


def _grow_box(make, box, tries=6):
    for _ in range(tries):
        S = make(box)
        ok = check_quadratic_at_infinity(S, raise_on_fail=False)[0]
        if ok:
            return S
        box = tuple(2.0 * b for b in box)
    S = make(box)
    check_quadratic_at_infinity(S)
    return S


# ---------------------------------------------------------- constructors

class _Invariant:
    def __call__(self, S, p):
        return S


def gf_of_function(f, dim: int = 1, label: str | None = None) -> GeneratingFunction:
    """Zero-fiber generating function of graph(df).

    ``f`` is a callable on points of shape (..., dim) or an expression in
    q1..qn.  As a step it is the time-1 map of the Hamiltonian f(q).
    """
    if isinstance(f, str):
        text, f = f, _ExprOnTorus(f, dim)
    else:
        text = getattr(f, "__name__", "f")
    fn = _TorusFunction(f, dim)
    return GeneratingFunction(base_dim=dim, fiber_dim=0, impl=_FunctionGF(fn), B=(), fiber_box=(), core=(),
                              label=label or f"graph(d {text})", step=ShearStep(fn), family=_Invariant())


class _OneStepFamily:
    def __init__(self, t0, tau, box, substeps):
        self.t0, self.tau, self.box, self.substeps = t0, tau, box, substeps

    def __call__(self, S, p):
        H = S.step.H
        return one_step_gf(shift_hamiltonian(H, CohomologyClass(p)), self.t0, self.tau, box=self.box,
                           substeps=self.substeps)


def one_step_gf(H: HamiltonianSpec, t0: float, tau: float, box: float | None = None, substeps: int | None = None,
                check: bool = True) -> GeneratingFunction:
    """Generating function of the flipped time-tau image of the zero section.

    Fiber coordinates are (u, p) rotated into the eigenbasis of
    ``<p, u> + (tau c / 2)|p|^2`` with c = ``H.p_growth``.  Raises
    :class:`StepTooLarge` when the position block of the linearized map
    deviates from the identity by ``C1_GATE`` or more.
    """
    n = H.dim
    step = FlowStep(H, t0, tau, substeps)
    lam, V = _rotation(n, step.quad)
    r = float(box if box is not None else H.fiber_radius)
    p_max = r * math.sqrt(2.0)
    if check:
        dev = step.c1_deviation(p_max)
        if dev >= C1_GATE:
            raise StepTooLarge(f"|dQ/dq - I| = {dev:.3f} >= {C1_GATE} for tau={tau}; subdivide")
    rng = np.random.default_rng(5)
    qs = rng.random((32, n))
    v0 = float(np.max(np.abs(grad_p(H, t0, qs, np.zeros((32, n))))))
    core = min(r, max(0.5, 2.0 * abs(tau) * v0 + 0.25))

    def make(rr):
        return GeneratingFunction(base_dim=n, fiber_dim=2 * n, impl=_StepGF(step, V, n), B=tuple(lam),
                                  fiber_box=(rr,) * (2 * n), core=(min(core, rr),) * (2 * n),
                                  label=f"step({H.name}, t0={t0:g}, tau={tau:g})", step=step,
                                  family=_OneStepFamily(t0, tau, rr, substeps))
    if not check:
        return make(r)
    return _grow_box(lambda b: make(b[0]), (r,))


class _ComposeFamily:
    def __init__(self, f1, f2, cap):
        self.f1, self.f2, self.cap = f1, f2, cap

    def __call__(self, S, p):
        S1, S2 = S.parts
        return compose_gf(self.f1(S1, p), self.f2(S2, p), cap=self.cap)


@dataclass(frozen=True, eq=False)
class _ComposedGF(GeneratingFunction):
    parts: tuple = ()


def compose_gf(S1: GeneratingFunction, S2: GeneratingFunction, cap: int = FIBER_BUDGET,
               box: float | None = None) -> GeneratingFunction:
    """Generating function of the composition: first S1's map, then S2's step.

    ``S(Q; xi, u, p) = S1(Q + u, xi) + <p, u> + w2(Q, p)`` where w2 is the
    step data of S2.  Critical values add along concatenated arcs.
    """
    if S1.base_dim != S2.base_dim:
        raise ValueError("base dimensions differ")
    if S2.step is None:
        raise ValueError(f"{S2.label} carries no step data and cannot be composed on the right")
    n = S1.base_dim
    f1 = S1.fiber_dim
    f = f1 + 2 * n
    if f > cap:
        raise FiberBudgetExceeded(f"composed fiber dimension {f} exceeds the budget {cap}")
    lam, V = _rotation(n, S2.step.quad)
    rng = np.random.default_rng(11)
    qs = rng.random((128, n))
    xs = rng.uniform(-1, 1, (128, f1)) * np.asarray(S1.fiber_box) if f1 else np.zeros((128, 0))
    D1 = float(np.max(np.abs(S1.value_and_grad(qs, xs)[1])))
    r2 = max(S2.fiber_box) if S2.fiber_dim else 0.0
    D2 = S2.step.deviation_bound(n, max(r2, 1.0))
    r = float(box) if box is not None else max(r2, 2.5 * (D1 + D2) + 0.5)
    core2 = max(max(S2.core) if S2.fiber_dim else 0.0, 1.5 * D1 + 0.5)
    family = _ComposeFamily(S1.family, S2.family, cap) if (S1.family and S2.family) else None

    def make(b):
        rr = b[0]
        return _ComposedGF(base_dim=n, fiber_dim=f, impl=_ComposeGF(S1.impl, S2.step, V, n, f1),
                           B=tuple(S1.B) + tuple(lam), fiber_box=tuple(S1.fiber_box) + (rr,) * (2 * n),
                           core=tuple(S1.core) + (min(core2, rr),) * (2 * n),
                           label=f"({S1.label}) then ({S2.label})", step=None, family=family, parts=(S1, S2))
    return _grow_box(make, (r,))


def restrict_fiber_slice(S: GeneratingFunction, p) -> GeneratingFunction:
    """Freeze the momentum coordinate of the split base at p.

    The slice at p is the generating function of the same construction
    applied to the Hamiltonian shifted by p.
    """
    if S.family is None:
        raise NoSplitBase(f"{S.label} was not built with a (q, p)-split base")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.all(p == 0):
        return S
    return S.family(S, p)


@dataclass(frozen=True, eq=False)
class _Negation(GeneratingFunction):
    original: object = None


def negate_flip(S: GeneratingFunction) -> GeneratingFunction:
    """-S: generates the momentum-flipped Lagrangian, with B -> -B and d -> f - d."""
    if isinstance(S, _Negation):
        return S.original
    return _Negation(base_dim=S.base_dim, fiber_dim=S.fiber_dim, impl=_NegGF(S.impl), B=tuple(-b for b in S.B),
                     fiber_box=S.fiber_box, core=S.core, label=f"-({S.label})", original=S)


def stabilize(S: GeneratingFunction, coeff: float = 1.0, box: float = 1.0) -> GeneratingFunction:
    """S plus coeff * xi_new^2 in one extra fiber coordinate."""
    return GeneratingFunction(base_dim=S.base_dim, fiber_dim=S.fiber_dim + 1,
                              impl=_StabGF(S.impl, float(coeff), S.fiber_dim), B=tuple(S.B) + (float(coeff),),
                              fiber_box=tuple(S.fiber_box) + (box,), core=tuple(S.core) + (min(box, 0.5),),
                              label=f"stab({S.label})")


class _BrokenFamily:
    def __init__(self, H, k, spp, a, c):
        self.H, self.k, self.spp, self.a, self.c = H, k, spp, a, c

    def __call__(self, S, p):
        return broken_geodesic_gf(self.H, self.k, self.a + float(np.ravel(p)[0]), self.spp, c=self.c)


def _speed_scale(H, a):
    # speeds reachable by orbits leaving the zero section of the a-shifted system
    qs = (np.arange(64) + 0.5) / 64
    ps = np.linspace(a - 12.0, a + 12.0, 961)
    if H.autonomous:
        e_max = float(np.max(H(0.0, qs[:, None], np.full((64, 1), a))))
        low = np.min(H(0.0, qs[None, :, None], ps[:, None, None]), axis=1)
        ok = ps[low <= e_max + 1e-9]
        p_lo, p_hi = (float(ok.min()), float(ok.max())) if ok.size else (a - 2.0, a + 2.0)
    else:
        p_lo, p_hi = a - 2.0, a + 2.0
    grid = np.linspace(p_lo, p_hi, 33)
    ts = np.linspace(0, 1, 5, endpoint=False)
    T, Qg, P = np.meshgrid(ts, qs[::4], grid, indexing="ij")
    v = grad_p(H, T.ravel(), Qg.reshape(-1, 1), P.reshape(-1, 1), richardson=True)
    return float(np.max(np.abs(v)))


def broken_geodesic_gf(H: HamiltonianSpec, k: int, a: float = 0.0, steps_per_period: int = 1, c: float = 1.0,
                       lagrangian=None) -> GeneratingFunction:
    """Lagrangian-side generating function S_k of the time-k map (Tonelli, n = 1).

    Fibers are the m = k * steps_per_period step displacements of a broken
    geodesic ending at Q; S_k is its discrete action with the a-shifted
    integrand.  The Lagrangian is continued quadratically beyond a speed
    cap, so B = (c / 2 tau) sum xi^2 is positive definite (d = 0) and the
    global minimum of S_k is its lower spectral invariant.
    """
    if not H.tonelli:
        raise ValueError(f"{H.name!r} is not Tonelli")
    if H.dim != 1:
        raise ValueError("broken-geodesic generating functions are implemented on T^1")
    k = int(k)
    m = k * int(steps_per_period)
    if m > FIBER_BUDGET:
        raise FiberBudgetExceeded(f"{m} broken-geodesic steps exceed the fiber budget {FIBER_BUDGET}")
    tau = 1.0 / steps_per_period
    L = lagrangian or fenchel_lagrangian(H)
    v_core = _speed_scale(H, float(a))
    vR = 1.25 * v_core + 0.25
    impl = _BrokenGeodesicGF(L, m, tau, float(a), vR, float(c))

    def make(b):
        return GeneratingFunction(base_dim=1, fiber_dim=m, impl=impl, B=(c / (2 * tau),) * m, fiber_box=b,
                                  core=(min(b[0], vR * tau),) * m, label=f"S_{k}({H.name}, a={a:g})",
                                  family=_BrokenFamily(H, k, steps_per_period, float(a), c))
    return _grow_box(make, (1.25 * vR * tau,) * m)


# ----------------------------------------------------------- sampling

def sample_on_mesh(S: GeneratingFunction, base_nodes, fiber_nodes, chunk: int = 1 << 17) -> np.ndarray:
    """Values of S on the tensor mesh base_nodes x fiber_nodes (row-major)."""
    axes = list(base_nodes) + list(fiber_nodes)
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    out = np.empty(total)
    n = S.base_dim
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(total, start + chunk)), shape)
        pts = np.stack([np.asarray(axes[i])[idx[i]] for i in range(len(axes))], axis=-1)
        out[start:start + len(pts)] = S.eval(pts[:, :n], pts[:, n:])
    return out.reshape(shape)


def export_grid(S: GeneratingFunction, path, base_n: int = 64, fiber_nodes=None) -> None:
    """Write S sampled on a mesh to a grid-data file."""
    n = S.base_dim
    if fiber_nodes is None:
        fiber_nodes = [np.linspace(-b, b, 17) for b in S.fiber_box]
    base = [np.arange(base_n) / base_n] * n
    values = sample_on_mesh(S, base, fiber_nodes)
    axes = [Axis(f"q{i + 1}", 0.0, 1.0, base_n, periodic=True) for i in range(n)]
    axes += [Axis(f"xi{j + 1}", float(nd[0]), float(nd[-1]), len(nd)) for j, nd in enumerate(fiber_nodes)]
    uniform = [None] * n + [None if np.allclose(np.diff(nd), np.diff(nd)[0]) else nd for nd in fiber_nodes]
    write_grid(path, axes, values, nodes=uniform)


# ------------------------------------------------------ critical locus

def _fiber_hessian(S, q, xi, h=1e-6):
    f = S.fiber_dim
    Hm = np.empty(xi.shape + (f,))
    for j in range(f):
        e = np.zeros(f)
        e[j] = h
        gp = S.value_and_grad(q, xi + e)[2]
        gm = S.value_and_grad(q, xi - e)[2]
        Hm[..., :, j] = (gp - gm) / (2 * h)
    return 0.5 * (Hm + np.swapaxes(Hm, -1, -2))


def critical_locus(S: GeneratingFunction, q_grid, xi_grid=None, tol: float = 1e-10,
                   maxiter: int = 40) -> LagrangianPointCloud:
    """Solutions of dS/dxi = 0 above each base point of ``q_grid``.

    Seeds are the fiber-grid cells on whose corners every component of
    dS/dxi changes sign; each seed is polished by Newton's method.
    """
    n, f = S.base_dim, S.fiber_dim
    q_grid = _pts(q_grid, n).reshape(-1, n)
    if f == 0:
        _, gq, _ = S.value_and_grad(q_grid, None)
        return LagrangianPointCloud(q_grid, gq, np.zeros((len(q_grid), 0)), np.zeros(len(q_grid)), tol)
    if xi_grid is None:
        xi_grid = [np.linspace(-c, c, 9 if f <= 2 else 7) for c in S.core]
    shape = tuple(len(x) for x in xi_grid)
    mesh = np.stack(np.meshgrid(*xi_grid, indexing="ij"), axis=-1).reshape(-1, f)
    seeds_q, seeds_x = [], []
    for i, q in enumerate(q_grid):
        g = S.value_and_grad(np.broadcast_to(q, (len(mesh), n)), mesh)[2].reshape(shape + (f,))
        sign = g > 0
        anypos = np.ones(tuple(s - 1 for s in shape) + (f,), dtype=bool)
        allpos = np.ones_like(anypos)
        anypos[...] = False
        for corner in range(2**f):
            sl = tuple(slice(1, None) if (corner >> j) & 1 else slice(None, -1) for j in range(f))
            c = sign[sl]
            anypos |= c
            allpos &= c
        change = np.all(anypos & ~allpos, axis=-1)
        cells = np.argwhere(change)
        for cell in cells:
            lo = np.array([xi_grid[j][cell[j]] for j in range(f)])
            hi = np.array([xi_grid[j][cell[j] + 1] for j in range(f)])
            seeds_q.append(q)
            seeds_x.append(0.5 * (lo + hi))
    if not seeds_q:
        return LagrangianPointCloud(np.zeros((0, n)), np.zeros((0, n)), np.zeros((0, f)), np.zeros(0), tol)
    Q = np.array(seeds_q)
    X = np.array(seeds_x)
    active = np.ones(len(Q), dtype=bool)
    for _ in range(maxiter):
        _, _, g = S.value_and_grad(Q, X)
        res = np.max(np.abs(g), axis=-1)
        active = res >= tol
        if not np.any(active):
            break
        Hm = _fiber_hessian(S, Q[active], X[active])
        try:
            step = np.linalg.solve(Hm, g[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(Hm.reshape(-1, f), g[active].reshape(-1), rcond=None)[0].reshape(-1, f)
        X[active] = X[active] - step
    _, gq, g = S.value_and_grad(Q, X)
    res = np.max(np.abs(g), axis=-1)
    box = np.asarray(S.fiber_box)
    keep = (res < tol) & np.all(np.abs(X) <= 2 * box, axis=-1)
    Q, X, P, res = Q[keep], X[keep], gq[keep], res[keep]
    # merge seeds that converged to the same critical point
    order = np.lexsort(tuple(np.round(np.concatenate([Q, X], axis=1), 6).T[::-1]))
    Q, X, P, res = Q[order], X[order], P[order], res[order]
    if len(Q):
        key = np.concatenate([Q, X], axis=1)
        dup = np.zeros(len(Q), dtype=bool)
        dup[1:] = np.all(np.abs(np.diff(key, axis=0)) < 1e-6, axis=1)
        Q, X, P, res = Q[~dup], X[~dup], P[~dup], res[~dup]
    return LagrangianPointCloud(Q, P, X, res, tol)


def induced_function_on_L(S: GeneratingFunction, cloud: LagrangianPointCloud) -> np.ndarray:
    """S at each cloud point's witness: the function S restricted to its Lagrangian."""
    if len(cloud) == 0:
        return np.zeros(0)
    return S.eval(cloud.q, cloud.xi if S.fiber_dim else None)


def torus_hausdorff(A, B) -> float:
    """Hausdorff distance between point sets in T^n x R^n (q taken mod 1)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if len(A) == 0 or len(B) == 0:
        return math.inf if len(A) != len(B) else 0.0
    n = A.shape[1] // 2
    d = A[:, None, :] - B[None, :, :]
    d[..., :n] -= np.round(d[..., :n])
    dist = np.sqrt(np.sum(d * d, axis=-1))
    return float(max(np.max(np.min(dist, axis=1)), np.max(np.min(dist, axis=0))))
