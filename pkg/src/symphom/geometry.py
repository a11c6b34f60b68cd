"""Hamiltonians, Lagrangians and cohomology classes on cotangent bundles of tori.

Torus points are carried as universal-cover lifts in R^n; evaluators are
expected to be 1-periodic in every q coordinate.  All objects are immutable
and their evaluators pure, so they can be shared between worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expr import Expression

__all__ = [
    "HamiltonianSpec",
    "LagrangianSpec",
    "CohomologyClass",
    "DiscreteCurve",
    "Axis",
    "GridSampling",
    "NotConvex",
    "GridTooSmall",
    "from_expression",
    "p_derivatives",
    "grad_p",
    "grad_q",
    "fiber_hessian",
    "check_periodicity",
    "check_tonelli",
    "legendre_transform",
    "fenchel_lagrangian",
    "fenchel_transform_of_lagrangian",
    "shift_hamiltonian",
    "covering_pullback",
    "direct_sum",
    "scale_hamiltonian",
    "add_hamiltonians",
    "poisson_bracket",
    "graph_restriction_bounds",
    "hamiltonian_range",
    "vertical_seminorm",
]

FD_STEP = 1e-4


class NotConvex(ValueError):
    """A sampled fiber Hessian has a non-positive eigenvalue."""


class GridTooSmall(ValueError):
    """A Fenchel supremum was attained on the boundary of the momentum box."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        if dim == 1:
            x = x[..., None]
        else:
            raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class HamiltonianSpec:
    """Time-periodic Hamiltonian on [0,1) x T^n x R^n.

    ``eval(t, q, p)`` is vectorized over leading axes of ``q`` and ``p``
    (trailing axis of length ``dim``).  ``p_growth`` is the constant ``c``
    for which ``H - c|p|^2/2`` has bounded gradient far out in the fibers;
    it fixes the quadratic form at infinity of Hamiltonian-side generating
    functions.  ``components`` records direct-sum factors.
    """

    dim: int
    eval: Callable
    autonomous: bool = True
    tonelli: bool = False
    fiber_radius: float = 4.0
    p_growth: float = 0.0
    name: str = ""
    components: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("torus dimension must be >= 1")
        if not self.fiber_radius > 0:
            raise ValueError("fiber_radius must be positive")

    def __call__(self, t, q, p):
        q = _as_points(q, self.dim)
        p = _as_points(p, self.dim)
        return np.asarray(self.eval(t, q, p), dtype=float)

    def validate(self, samples: int = 64, seed: int = 0) -> "HamiltonianSpec":
        check_periodicity(self, samples=samples, seed=seed)
        if self.tonelli:
            check_tonelli(self, samples=samples, seed=seed)
        return self


def from_expression(text: str, dim: int = 1, *, tonelli: bool = False, fiber_radius: float = 4.0,
                    p_growth: float | None = None, name: str = "", validate: bool = True) -> HamiltonianSpec:
    """Build a Hamiltonian from the closed-form expression language."""
    expr = Expression(text, dim)
    used = expr.variables
    autonomous = "t" not in used
    if p_growth is None:
        p_growth = _estimate_p_growth(expr, dim, fiber_radius)
    H = HamiltonianSpec(dim=dim, eval=expr, autonomous=autonomous, tonelli=tonelli,
                        fiber_radius=fiber_radius, p_growth=p_growth, name=name or text)
    if validate:
        H.validate()
    return H


def _estimate_p_growth(fn, dim, radius):
    # average fiber curvature on a far shell; 0 when H is bounded out there
    rng = np.random.default_rng(12345)
    n = 32
    q = rng.random((n, dim))
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    p = 4.0 * radius * u
    h = 1e-2 * radius
    second = (fn(0.0, q, p + h * u) - 2 * fn(0.0, q, p) + fn(0.0, q, p - h * u)) / h**2
    c = float(np.median(second))
    if abs(c) < 1e-8:
        return 0.0
    return c


# ---------------------------------------------------------------- derivatives

def _stencil(f, x, axis, h, wide=True):
    e = np.zeros(x.shape[-1])
    e[axis] = h
    if not wide:
        return f(x + e), f(x - e), None, None
    return f(x + e), f(x - e), f(x + 2 * e), f(x - 2 * e)


def _first(fp, fm, fp2, fm2, h, richardson):
    # Richardson on the central difference at h and 2h
    if richardson:
        return (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * h)
    return (fp - fm) / (2.0 * h)


def grad_p(H, t, q, p, h: float = FD_STEP, richardson: bool = False):
    """Central-difference gradient of H in the fiber variables."""
    q = _as_points(q, H.dim)
    p = _as_points(p, H.dim)
    p = np.broadcast_to(p, np.broadcast_shapes(q.shape, p.shape))
    out = np.empty(p.shape)
    for i in range(H.dim):
        f = lambda x: H(t, q, x)
        out[..., i] = _first(*_stencil(f, p, i, h, richardson), h, richardson)
    return out


def grad_q(H, t, q, p, h: float = FD_STEP, richardson: bool = False):
    """Central-difference gradient of H in the base variables."""
    q = _as_points(q, H.dim)
    p = _as_points(p, H.dim)
    q = np.broadcast_to(q, np.broadcast_shapes(q.shape, p.shape))
    out = np.empty(q.shape)
    for i in range(H.dim):
        f = lambda x: H(t, x, p)
        out[..., i] = _first(*_stencil(f, q, i, h, richardson), h, richardson)
    return out


def p_derivatives(H, t, q, p, h: float = 1e-3):
    """Value, fiber gradient and fiber Hessian from fourth-order stencils."""
    q = _as_points(q, H.dim)
    p = _as_points(p, H.dim)
    shape = np.broadcast_shapes(q.shape, p.shape)
    p = np.broadcast_to(p, shape)
    n = H.dim
    f0 = H(t, q, p)
    grad = np.empty(shape)
    hess = np.empty(shape + (n,))
    f = lambda x: H(t, q, x)
    for i in range(n):
        fp, fm, fp2, fm2 = _stencil(f, p, i, h)
        grad[..., i] = (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * h)
        hess[..., i, i] = (-fp2 + 16.0 * fp - 30.0 * f0 + 16.0 * fm - fm2) / (12.0 * h * h)
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            mixed = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4.0 * h * h)
            hess[..., i, j] = mixed
            hess[..., j, i] = mixed
    return f0, grad, hess


def fiber_hessian(H, t, q, p, h: float = 1e-3):
    return p_derivatives(H, t, q, p, h)[2]


def check_periodicity(H, samples: int = 64, seed: int = 0, tol: float = 1e-12):
    """Spot-check H(t, q+m, p) = H(t, q, p) for integer shifts m."""
    rng = np.random.default_rng(seed)
    n = H.dim
    t = rng.random(samples)
    q = rng.random((samples, n))
    p = rng.uniform(-H.fiber_radius, H.fiber_radius, (samples, n))
    m = rng.integers(-3, 4, (samples, n))
    base = H(t, q, p)
    shifted = H(t, q + m, p)
    scale = max(1.0, float(np.max(np.abs(base))))
    err = float(np.max(np.abs(shifted - base)))
    if err > tol * scale * 100:
        raise ValueError(f"Hamiltonian {H.name!r} is not 1-periodic in q (max deviation {err:.3g})")
    if not H.autonomous:
        err_t = float(np.max(np.abs(H(t + 1.0, q, p) - base)))
        if err_t > tol * scale * 100:
            raise ValueError(f"Hamiltonian {H.name!r} is not 1-periodic in t (max deviation {err_t:.3g})")
    return err


def check_tonelli(H, samples: int = 64, seed: int = 0):
    """Sample fiber Hessians; raise NotConvex on a non-positive eigenvalue."""
    rng = np.random.default_rng(seed + 1)
    n = H.dim
    t = rng.random(samples)
    q = rng.random((samples, n))
    p = rng.uniform(-H.fiber_radius, H.fiber_radius, (samples, n))
    hess = fiber_hessian(H, t, q, p)
    eig = np.linalg.eigvalsh(hess)
    if np.any(eig <= 0):
        i = int(np.argmin(eig.min(axis=-1)))
        raise NotConvex(f"fiber Hessian of {H.name!r} has eigenvalue {eig[i].min():.3g} at p={p[i]}")
    return float(eig.min())


# ------------------------------------------------------------- domain types

@dataclass(frozen=True)
class LagrangianSpec:
    """Fenchel-dual Lagrangian L(t, q, v).

    ``derivs(t, q, v)`` returns ``(L, dL/dq, dL/dv)`` when available; the
    grid-tabulated variant falls back to finite differences.
    """

    dim: int
    eval: Callable
    provenance: str = "analytic"
    grid: "GridSampling | None" = None
    derivs: Callable | None = None

    def __call__(self, t, q, v):
        q = _as_points(q, self.dim)
        v = _as_points(v, self.dim)
        return np.asarray(self.eval(t, q, v), dtype=float)

    def value_and_grad(self, t, q, v):
        q = _as_points(q, self.dim)
        v = _as_points(v, self.dim)
        if self.derivs is not None:
            return self.derivs(t, q, v)
        shape = np.broadcast_shapes(q.shape, v.shape)
        q = np.broadcast_to(q, shape)
        v = np.broadcast_to(v, shape)
        L = self(t, q, v)
        dq = np.empty(shape)
        dv = np.empty(shape)
        h = FD_STEP
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            dq[..., i] = (self(t, q + e, v) - self(t, q - e, v)) / (2 * h)
            dv[..., i] = (self(t, q, v + e) - self(t, q, v - e)) / (2 * h)
        return L, dq, dv


@dataclass(frozen=True)
class CohomologyClass:
    """A class in H^1(T^n; R), represented by the constant 1-form a."""

    a: tuple

    def __init__(self, a):
        vec = np.atleast_1d(np.asarray(a, dtype=float))
        if vec.ndim != 1:
            raise ValueError("a cohomology class is a vector")
        object.__setattr__(self, "a", tuple(float(x) for x in vec))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.a)

    @property
    def dim(self) -> int:
        return len(self.a)

    def __neg__(self):
        return CohomologyClass(-self.vector)

    def __sub__(self, other):
        return CohomologyClass(self.vector - other.vector)

    def __add__(self, other):
        return CohomologyClass(self.vector + other.vector)


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """Lifted piecewise-linear path on [0, horizon] over a uniform grid."""

    samples: np.ndarray
    horizon: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ValueError("a curve needs at least two samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.step <= 0:
            raise ValueError("step must be positive")

    @property
    def steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def step(self) -> float:
        return self.horizon / self.steps

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def displacement(self) -> np.ndarray:
        return self.samples[-1] - self.samples[0]

    def shifted(self, m) -> "DiscreteCurve":
        return DiscreteCurve(self.samples + np.asarray(m, dtype=float), self.horizon)


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    n: int
    periodic: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"axis {self.name!r}: resolution must be >= 2")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.hi > self.lo:
            raise ValueError(f"axis {self.name!r}: range must be finite and non-empty")

    @property
    def nodes(self) -> np.ndarray:
        if self.periodic:
            return self.lo + (self.hi - self.lo) * np.arange(self.n) / self.n
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n if self.periodic else self.n - 1)


@dataclass(frozen=True)
class GridSampling:
    """Per-axis ranges and resolutions for a sampling box."""

    axes: tuple

    def __init__(self, axes: Sequence[Axis]):
        object.__setattr__(self, "axes", tuple(axes))
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate axis names")

    def axis(self, name: str) -> Axis | None:
        for a in self.axes:
            if a.name == name:
                return a
        return None

    @property
    def shape(self):
        return tuple(a.n for a in self.axes)

    @property
    def cell_diameter(self) -> float:
        return float(np.sqrt(sum(a.spacing**2 for a in self.axes)))


# ------------------------------------------------------- multilinear tables

class GridFunction:
    """Piecewise-multilinear interpolant of tabulated values.

    Periodic axes wrap; bounded axes clamp to the box (queries outside a
    bounded axis are an error unless ``extrapolate`` is set).
    """

    def __init__(self, axes: Sequence[Axis], values: np.ndarray, extrapolate: bool = False):
        self.axes = tuple(axes)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != tuple(a.n for a in self.axes):
            raise ValueError("values do not match axis resolutions")
        self.extrapolate = extrapolate

    def __call__(self, coords: Sequence[np.ndarray]) -> np.ndarray:
        coords = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
        shape = coords[0].shape
        idx0, frac = [], []
        for ax, x in zip(self.axes, coords):
            s = (x - ax.lo) / ax.spacing
            if ax.periodic:
                s = np.mod(s, ax.n)
                i = np.floor(s).astype(int)
                f = s - i
                i = np.mod(i, ax.n)
            else:
                if not self.extrapolate and (np.any(s < -1e-9) or np.any(s > ax.n - 1 + 1e-9)):
                    raise GridTooSmall(f"query outside bounded axis {ax.name!r}")
                s = np.clip(s, 0.0, ax.n - 1)
                i = np.minimum(np.floor(s).astype(int), ax.n - 2)
                f = s - i
            idx0.append(i)
            frac.append(f)
        out = np.zeros(shape)
        d = len(self.axes)
        for corner in range(2**d):
            w = np.ones(shape)
            idx = []
            for k, ax in enumerate(self.axes):
                bit = (corner >> k) & 1
                w = w * (frac[k] if bit else 1.0 - frac[k])
                j = idx0[k] + bit
                if ax.periodic:
                    j = np.mod(j, ax.n)
                idx.append(j)
            out += w * self.values[tuple(idx)]
        return out


# --------------------------------------------------------- Fenchel duality

class _GridLagrangian:
    def __init__(self, table: GridFunction, dim: int, autonomous: bool):
        self.table = table
        self.dim = dim
        self.autonomous = autonomous

    def __call__(self, t, q, v):
        shape = np.broadcast_shapes(q.shape[:-1], v.shape[:-1], np.shape(t))
        coords = []
        if not self.autonomous:
            coords.append(np.broadcast_to(t, shape))
        coords += [np.broadcast_to(q[..., i], shape) for i in range(self.dim)]
        coords += [np.broadcast_to(v[..., i], shape) for i in range(self.dim)]
        return self.table(coords)


def legendre_transform(H: HamiltonianSpec, grid: GridSampling, refine: bool = True) -> LagrangianSpec:
    """Grid Fenchel transform L(t,q,v) = sup_p (<p,v> - H(t,q,p)).

    ``grid`` must carry axes ``p1..pn`` (the search box) and ``v1..vn``;
    axes ``q1..qn`` and ``t`` are optional (defaults: 16 periodic nodes).
    Node values are refined by Newton from the best momentum node, and the
    result interpolates multilinearly between nodes.
    """
    if not H.tonelli:
        raise NotConvex(f"Hamiltonian {H.name!r} is not declared Tonelli")
    n = H.dim
    p_axes = [grid.axis(f"p{i + 1}") for i in range(n)]
    v_axes = [grid.axis(f"v{i + 1}") for i in range(n)]
    if any(a is None for a in p_axes + v_axes):
        raise ValueError("grid needs p1..pn and v1..vn axes")
    q_axes = [grid.axis(f"q{i + 1}") or Axis(f"q{i + 1}", 0.0, 1.0, 16, True) for i in range(n)]
    q_axes = [replace(a, periodic=True) for a in q_axes]
    t_axis = None if H.autonomous else (grid.axis("t") or Axis("t", 0.0, 1.0, 16, True))
    if t_axis is not None:
        t_axis = replace(t_axis, periodic=True)

    tq_axes = ([t_axis] if t_axis is not None else []) + q_axes
    tq_mesh = np.meshgrid(*[a.nodes for a in tq_axes], indexing="ij")
    tq_shape = tq_mesh[0].shape
    t_vals = tq_mesh[0].reshape(-1) if t_axis is not None else np.zeros(tq_mesh[0].size)
    q_vals = np.stack([m.reshape(-1) for m in tq_mesh[-n:]], axis=-1)

    p_mesh = np.stack([m.reshape(-1) for m in np.meshgrid(*[a.nodes for a in p_axes], indexing="ij")], axis=-1)
    v_mesh = np.stack([m.reshape(-1) for m in np.meshgrid(*[a.nodes for a in v_axes], indexing="ij")], axis=-1)

    hess = fiber_hessian(H, t_vals[:, None], q_vals[:, None, :], p_mesh[None, ::max(1, len(p_mesh) // 64), :])
    if np.any(np.linalg.eigvalsh(hess) <= 0):
        raise NotConvex(f"fiber Hessian of {H.name!r} is not positive-definite on the grid")

    p_shape = tuple(a.n for a in p_axes)
    L = np.empty((len(q_vals), len(v_mesh)))
    arg = np.empty((len(q_vals), len(v_mesh), n))
    for j in range(len(q_vals)):
        h_vals = H(t_vals[j], q_vals[j][None, :], p_mesh)  # (P,)
        obj = v_mesh @ p_mesh.T - h_vals[None, :]  # (V, P)
        best = np.argmax(obj, axis=1)
        multi = np.stack(np.unravel_index(best, p_shape), axis=-1)
        on_edge = np.any((multi == 0) | (multi == np.array(p_shape) - 1), axis=1)
        if np.any(on_edge):
            k = int(np.argmax(on_edge))
            raise GridTooSmall(f"sup over p attained on the momentum-box boundary at q={q_vals[j]}, v={v_mesh[k]}")
        L[j] = obj[np.arange(len(v_mesh)), best]
        arg[j] = p_mesh[best]
    if refine:
        tt = np.broadcast_to(t_vals[:, None], L.shape)
        qq = np.broadcast_to(q_vals[:, None, :], arg.shape)
        vv = np.broadcast_to(v_mesh[None, :, :], arg.shape)
        p_star = _fenchel_newton(H, tt, qq, vv, arg)
        L = np.einsum("...i,...i->...", p_star, vv) - H(tt, qq, p_star)
    table = GridFunction(tq_axes + v_axes, L.reshape(tq_shape + tuple(a.n for a in v_axes)))
    full = GridSampling(tq_axes + p_axes + v_axes)
    return LagrangianSpec(dim=n, eval=_GridLagrangian(table, n, H.autonomous), provenance="grid-fenchel", grid=full)


def _bracket_guess(H, t, q, v, nodes: int = 17):
    # n = 1: invert the monotone fiber derivative on a coarse momentum grid
    r = H.fiber_radius
    grid = np.linspace(-r, r, nodes)
    shape = np.broadcast_shapes(np.shape(q), np.shape(v))
    qq = np.broadcast_to(q, shape)[..., None, :]
    pp = grid[:, None]
    tt = np.asarray(t, dtype=float)
    if tt.ndim:
        tt = np.broadcast_to(tt, shape[:-1])[..., None]
    dh = (H(tt, qq, pp + 1e-4) - H(tt, qq, pp - 1e-4)) / 2e-4
    vv = np.broadcast_to(v, shape)[..., 0]
    below = np.sum(dh < vv[..., None], axis=-1)
    i = np.clip(below - 1, 0, nodes - 2)
    d0 = np.take_along_axis(dh, i[..., None], -1)[..., 0]
    d1 = np.take_along_axis(dh, (i + 1)[..., None], -1)[..., 0]
    w = np.clip((vv - d0) / np.where(d1 > d0, d1 - d0, 1.0), 0.0, 1.0)
    guess = grid[i] + w * (grid[1] - grid[0])
    outside = (below == 0) | (below == nodes)
    guess = np.where(outside, vv, guess)
    return guess[..., None]


def _fenchel_newton(H, t, q, v, p0, tol: float = 1e-10, maxiter: int = 60):
    """Damped Newton for argmax_p <p,v> - H(t,q,p), vectorized over points.

    Converged points leave the active set, so the few slow points near a
    degenerate fiber Hessian do not hold up the rest.
    """
    shape = np.broadcast_shapes(np.shape(p0), v.shape, np.shape(q))
    n = shape[-1]
    p = np.array(np.broadcast_to(p0, shape), dtype=float).reshape(-1, n)
    vf = np.broadcast_to(v, shape).reshape(-1, n)
    qf = np.broadcast_to(q, shape).reshape(-1, n)
    tt = np.asarray(t, dtype=float)
    tf = np.broadcast_to(tt, shape[:-1]).reshape(-1) if tt.ndim else tt
    thresh = tol * np.maximum(1.0, np.max(np.abs(vf), axis=-1))
    active = np.arange(len(p))
    for _ in range(maxiter):
        if active.size == 0:
            break
        ta = tf[active] if np.ndim(tf) else tf
        qa, va, pa = qf[active], vf[active], p[active]
        f0, g, hs = p_derivatives(H, ta, qa, pa)
        r = g - va
        try:
            step = -np.linalg.solve(hs, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -r
        # converged when both the residual and the Newton step are negligible; near a
        # degenerate fiber Hessian a small residual alone leaves p inaccurate
        small_step = np.max(np.abs(np.nan_to_num(step, nan=np.inf)), axis=-1) < tol * (1 + np.max(np.abs(pa), axis=-1))
        done = (np.max(np.abs(r), axis=-1) < thresh[active]) & small_step
        done |= np.max(np.abs(r), axis=-1) < 1e-15
        if np.all(done):
            break
        keep = ~done
        active, ta = active[keep], (ta[keep] if np.ndim(ta) else ta)
        qa, va, pa, f0, r, hs, step = qa[keep], va[keep], pa[keep], f0[keep], r[keep], hs[keep], step[keep]
        bad = ~np.isfinite(step).all(axis=-1) | (np.einsum("...i,...i->...", step, r) >= 0)
        step[bad] = -r[bad]
        phi0 = f0 - np.einsum("...i,...i->...", pa, va)
        slope = np.einsum("...i,...i->...", step, r)
        alpha = np.ones(phi0.shape)
        for _ in range(40):
            trial = pa + alpha[..., None] * step
            phi = H(ta, qa, trial) - np.einsum("...i,...i->...", trial, va)
            ok = phi <= phi0 + 1e-4 * alpha * slope + 1e-14 * (1 + np.abs(phi0))
            if np.all(ok):
                break
            alpha = np.where(ok, alpha, 0.5 * alpha)
        p[active] = pa + alpha[..., None] * step
    return p.reshape(shape)


class _PointwiseLagrangian:
    """L(t,q,v) by Newton on the fiber gradient; gradients via the envelope theorem."""

    def __init__(self, H: HamiltonianSpec):
        self.H = H

    def _argmax(self, t, q, v):
        guess = _bracket_guess(self.H, t, q, v) if self.H.dim == 1 else v
        return _fenchel_newton(self.H, t, q, v, guess)

    def __call__(self, t, q, v):
        p = self._argmax(t, q, v)
        return np.einsum("...i,...i->...", p, v) - self.H(t, q, p)

    def derivs(self, t, q, v):
        q, v = np.broadcast_arrays(q, v)
        p = self._argmax(t, q, v)
        L = np.einsum("...i,...i->...", p, v) - self.H(t, q, p)
        dq = -grad_q(self.H, t, q, p, h=1e-3, richardson=True)
        return L, dq, p


class _SumLagrangian:
    def __init__(self, parts, dims):
        self.parts = parts
        self.dims = dims

    def _split(self, x):
        out, s = [], 0
        for d in self.dims:
            out.append(x[..., s:s + d])
            s += d
        return out

    def __call__(self, t, q, v):
        return sum(L(t, qi, vi) for L, qi, vi in zip(self.parts, self._split(q), self._split(v)))

    def derivs(self, t, q, v):
        q, v = np.broadcast_arrays(q, v)
        total, dqs, dvs = 0.0, [], []
        for L, qi, vi in zip(self.parts, self._split(q), self._split(v)):
            val, dq, dv = L.value_and_grad(t, qi, vi)
            total = total + val
            dqs.append(dq)
            dvs.append(dv)
        return total, np.concatenate(dqs, axis=-1), np.concatenate(dvs, axis=-1)


def fenchel_lagrangian(H: HamiltonianSpec) -> LagrangianSpec:
    """Pointwise Fenchel dual with envelope-theorem gradients.

    Direct sums split into their factors.  Unlike :func:`legendre_transform`
    the result is smooth, which the action minimizer needs.
    """
    if not H.tonelli:
        raise NotConvex(f"Hamiltonian {H.name!r} is not declared Tonelli")
    if H.components:
        parts = [fenchel_lagrangian(c) for c in H.components]
        impl = _SumLagrangian(parts, [c.dim for c in H.components])
        return LagrangianSpec(dim=H.dim, eval=impl, provenance="pointwise-newton", derivs=impl.derivs)
    impl = _PointwiseLagrangian(H)
    return LagrangianSpec(dim=H.dim, eval=impl, provenance="pointwise-newton", derivs=impl.derivs)


def fenchel_transform_of_lagrangian(L: LagrangianSpec, v_axis_nodes: np.ndarray, t, q, p):
    """Brute-force sup_v (<p,v> - L(t,q,v)) over given velocity nodes (n = 1)."""
    v = np.asarray(v_axis_nodes, dtype=float)
    q = _as_points(q, L.dim)
    p = np.asarray(p, dtype=float)
    vals = L(t, q[..., None, :], v[:, None])
    return np.max(p[..., None] * v - vals, axis=-1)


# ----------------------------------------------------- derived Hamiltonians

class _Shifted:
    def __init__(self, H, a):
        self.H = H
        self.a = np.asarray(a, dtype=float)

    def __call__(self, t, q, p):
        return self.H(t, q, p + self.a)


class _Pullback:
    def __init__(self, H, k):
        self.H = H
        self.k = k

    def __call__(self, t, q, p):
        return self.H(self.k * np.asarray(t, dtype=float), self.k * q, p)


class _DirectSum:
    def __init__(self, H1, H2):
        self.H1 = H1
        self.H2 = H2
        self.n1 = H1.dim

    def __call__(self, t, q, p):
        n1 = self.n1
        return self.H1(t, q[..., :n1], p[..., :n1]) + self.H2(t, q[..., n1:], p[..., n1:])


class _Scaled:
    def __init__(self, H, lam):
        self.H = H
        self.lam = float(lam)

    def __call__(self, t, q, p):
        return self.lam * self.H(t, q, p)


class _Added:
    def __init__(self, F, G):
        self.F = F
        self.G = G

    def __call__(self, t, q, p):
        return self.F(t, q, p) + self.G(t, q, p)


def shift_hamiltonian(H: HamiltonianSpec, a: CohomologyClass) -> HamiltonianSpec:
    """H_a(t,q,p) = H(t,q,p+a): conjugation by the fiber translation T_a."""
    if a.dim != H.dim:
        raise ValueError("class and Hamiltonian dimensions differ")
    if not np.any(a.vector):
        return H
    comps = ()
    if H.components:
        s = 0
        parts = []
        for c in H.components:
            parts.append(shift_hamiltonian(c, CohomologyClass(a.vector[s:s + c.dim])))
            s += c.dim
        comps = tuple(parts)
    return replace(H, eval=_Shifted(H, a.vector), name=f"{H.name}[p+{list(a.a)}]", components=comps)


def covering_pullback(H: HamiltonianSpec, k: int) -> HamiltonianSpec:
    """H_k(t,q,p) = H(kt,kq,p)."""
    if k < 1 or int(k) != k:
        raise ValueError("k must be a positive integer")
    if k == 1:
        return H
    comps = tuple(covering_pullback(c, k) for c in H.components)
    return replace(H, eval=_Pullback(H, int(k)), name=f"{H.name}[k={k}]", components=comps)


def direct_sum(H1: HamiltonianSpec, H2: HamiltonianSpec) -> HamiltonianSpec:
    """(H1 + H2)(t, (q1,q2), (p1,p2)) on T^(n1+n2)."""
    parts = (H1.components or (H1,)) + (H2.components or (H2,))
    return HamiltonianSpec(
        dim=H1.dim + H2.dim,
        eval=_DirectSum(H1, H2),
        autonomous=H1.autonomous and H2.autonomous,
        tonelli=H1.tonelli and H2.tonelli,
        fiber_radius=max(H1.fiber_radius, H2.fiber_radius),
        p_growth=min(H1.p_growth, H2.p_growth) if H1.p_growth and H2.p_growth else 0.0,
        name=f"({H1.name})+({H2.name})",
        components=parts,
    )


def scale_hamiltonian(H: HamiltonianSpec, lam: float) -> HamiltonianSpec:
    """lam * H; lam > 0 keeps the Tonelli property."""
    lam = float(lam)
    comps = tuple(scale_hamiltonian(c, lam) for c in H.components) if lam > 0 else ()
    return replace(H, eval=_Scaled(H, lam), tonelli=H.tonelli and lam > 0,
                   p_growth=lam * H.p_growth, name=f"{lam:g}*({H.name})", components=comps)


def add_hamiltonians(F: HamiltonianSpec, G: HamiltonianSpec) -> HamiltonianSpec:
    if F.dim != G.dim:
        raise ValueError("dimensions differ")
    return HamiltonianSpec(dim=F.dim, eval=_Added(F, G), autonomous=F.autonomous and G.autonomous,
                           tonelli=F.tonelli and G.tonelli, fiber_radius=max(F.fiber_radius, G.fiber_radius),
                           p_growth=F.p_growth + G.p_growth, name=f"({F.name})+({G.name})")


# ------------------------------------------------------------ diagnostics

def poisson_bracket(F: HamiltonianSpec, G: HamiltonianSpec, q, p, h: float = FD_STEP):
    """{F,G} = sum_i dF/dp_i dG/dq_i - dF/dq_i dG/dp_i (omega = dp ^ dq)."""
    if not (F.autonomous and G.autonomous):
        raise ValueError("poisson_bracket needs autonomous functions")
    if F.dim != G.dim:
        raise ValueError("dimensions differ")
    Fp, Fq = grad_p(F, 0.0, q, p, h), grad_q(F, 0.0, q, p, h)
    Gp, Gq = grad_p(G, 0.0, q, p, h), grad_q(G, 0.0, q, p, h)
    return np.sum(Fp * Gq - Fq * Gp, axis=-1)


def _tq_nodes(H, resolution):
    n = H.dim
    axes = [np.arange(resolution) / resolution for _ in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    q = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    t = np.zeros(1) if H.autonomous else np.arange(resolution) / resolution
    return t, q


def graph_restriction_bounds(H: HamiltonianSpec, a: CohomologyClass, resolution: int = 64):
    """(min, max) of H(t, q, a) over a (t, q) grid."""
    t, q = _tq_nodes(H, resolution)
    vals = H(t[:, None], q[None, :, :], a.vector)
    return float(vals.min()), float(vals.max())


def hamiltonian_range(H: HamiltonianSpec, resolution: int = 48, p_nodes: int = 33):
    """(integral over t of min H_t, integral over t of max H_t) on the fiber-radius box."""
    t, q = _tq_nodes(H, resolution)
    r = H.fiber_radius
    pax = np.linspace(-r, r, p_nodes)
    pmesh = np.stack([m.reshape(-1) for m in np.meshgrid(*[pax] * H.dim, indexing="ij")], axis=-1)
    lo, hi = [], []
    for ti in t:
        vals = H(ti, q[:, None, :], pmesh[None, :, :])
        lo.append(vals.min())
        hi.append(vals.max())
    return float(np.mean(lo)), float(np.mean(hi))


def vertical_seminorm(H: HamiltonianSpec, c: CohomologyClass, resolution: int = 32, p_nodes: int = 33):
    """Time-integral of sup_{q,|p|<=R} |<dH/dp, c>|, the vertical pairing at the constant form c."""
    t, q = _tq_nodes(H, resolution)
    r = H.fiber_radius
    pax = np.linspace(-r, r, p_nodes)
    pmesh = np.stack([m.reshape(-1) for m in np.meshgrid(*[pax] * H.dim, indexing="ij")], axis=-1)
    sups = []
    for ti in t:
        g = grad_p(H, ti, q[:, None, :], pmesh[None, :, :])
        sups.append(np.max(np.abs(g @ c.vector)))
    return float(np.mean(sups))
