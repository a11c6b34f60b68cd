"""Discrete Lagrangian action, free-endpoint minimization, and alpha functions.

The class a enters on the Lagrangian side: curves minimize the integral of
``L(t, q, v) - <a, v>``, which is the Fenchel dual of ``H(t, q, p + a)``.
Minimal actions ``c_k = -min A^k`` over horizons k form a subadditive
sequence and ``alpha_H(a) = lim c_k / k``.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .geometry import CohomologyClass, DiscreteCurve, HamiltonianSpec, LagrangianSpec, fenchel_lagrangian, grad_p

__all__ = [
    "ActionProblem",
    "MinimizeConfig",
    "MinimizationResult",
    "LimitEstimate",
    "HorizonMismatch",
    "Diverged",
    "NonMonotoneWarning",
    "discrete_action",
    "action_gradient",
    "minimize_action",
    "extrapolate_limit",
    "alpha_at",
    "alpha_profile",
    "AlphaRow",
    "DEFAULT_K_SCHEDULE",
]

log = logging.getLogger(__name__)

DEFAULT_K_SCHEDULE = (2, 4, 8, 16)


class HorizonMismatch(ValueError):
    pass


class Diverged(RuntimeError):
    """The action fell below the configured floor."""


class NonMonotoneWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ActionProblem:
    L: LagrangianSpec
    a: CohomologyClass
    k: int
    steps_per_period: int = 8

    def __post_init__(self):
        if self.k < 1 or int(self.k) != self.k:
            raise ValueError("horizon must be a positive integer")
        if self.steps_per_period < 8:
            raise ValueError("steps_per_period must be >= 8")
        if self.a.dim != self.L.dim:
            raise ValueError("class and Lagrangian dimensions differ")

    @property
    def M(self) -> int:
        return self.k * self.steps_per_period

    @property
    def h(self) -> float:
        return 1.0 / self.steps_per_period


def _segments(problem, x):
    n = problem.L.dim
    q = x.reshape(problem.M + 1, n)
    h = problem.h
    tm = (np.arange(problem.M) + 0.5) * h
    qm = 0.5 * (q[1:] + q[:-1])
    v = (q[1:] - q[:-1]) / h
    return q, tm, qm, v


def discrete_action(problem: ActionProblem, curve: DiscreteCurve) -> float:
    """Midpoint rule for the integral of L(t, q, v) - <a, v> over [0, k]."""
    if curve.horizon != problem.k or curve.steps != problem.M:
        raise HorizonMismatch(f"curve has horizon {curve.horizon} with {curve.steps} steps, "
                              f"problem expects {problem.k} with {problem.M}")
    return _action(problem, curve.samples.reshape(-1))


def _action(problem, x):
    q, tm, qm, v = _segments(problem, x)
    vals = problem.L(tm, qm, v) - v @ problem.a.vector
    return float(problem.h * np.sum(vals))


def _action_and_grad(problem, x):
    q, tm, qm, v = _segments(problem, x)
    h = problem.h
    a = problem.a.vector
    L, Lq, Lv = problem.L.value_and_grad(tm, qm, v)
    value = float(h * np.sum(L - v @ a))
    Lv = Lv - a
    g = np.zeros_like(q)
    g[:-1] += 0.5 * h * Lq - Lv
    g[1:] += 0.5 * h * Lq + Lv
    return value, g.reshape(-1)


def action_gradient(problem: ActionProblem, curve: DiscreteCurve) -> np.ndarray:
    return _action_and_grad(problem, curve.samples.reshape(-1))[1].reshape(curve.samples.shape)


@dataclass(frozen=True)
class MinimizeConfig:
    gtol: float = 1e-8
    slope_spacing: float = 0.25
    slope_margin: float = 1.0
    jitter: float = 0.02
    offsets: tuple = (0.0, 0.5)
    seed: int = 0
    max_starts: int = 96
    polish: int = 4
    screen_iters: int = 40
    maxiter: int = 3000
    floor: float | None = None
    # relative stagnation stop for the full L-BFGS runs (non-smooth L at v = 0 never meets gtol)
    ftol: float = 1e-13
    # lattice centre and half-width; default: centre a, half-width |a| + slope_margin
    slope_center: tuple | None = None
    slope_half: float | None = None


@dataclass(frozen=True, eq=False)
class MinimizationResult:
    value: float
    minimizer: DiscreteCurve
    starts_used: int
    converged: bool
    gradient_norm: float


def _seed_slopes(a, cfg):
    n = len(a)
    a_max = float(np.max(np.abs(a))) if n else 0.0
    half = a_max + cfg.slope_margin if cfg.slope_half is None else float(cfg.slope_half)
    center = np.asarray(a, dtype=float) if cfg.slope_center is None else np.asarray(cfg.slope_center, dtype=float)
    # anchored at 0 so the static curve is always seeded
    sp = cfg.slope_spacing
    lattice = sp * np.arange(np.ceil(-half / sp - 1e-9), np.floor(half / sp + 1e-9) + 1)
    if n == 1:
        return lattice[:, None]
    # n > 1: full product lattice, thinned to the points nearest the centre
    mesh = np.stack([m.reshape(-1) for m in np.meshgrid(*[lattice] * n, indexing="ij")], axis=-1)
    budget = max(1, cfg.max_starts // max(1, len(cfg.offsets)))
    if len(mesh) > budget:
        order = np.argsort(np.linalg.norm(mesh - center, axis=1), kind="stable")
        mesh = mesh[np.sort(order[:budget])]
    return mesh


def _hessian(problem, x, eps=1e-5):
    n = problem.L.dim
    size = x.size
    Hm = np.zeros((size, size))
    points = problem.M + 1
    for color in range(3):
        for i in range(n):
            idx = np.arange(color, points, 3) * n + i
            e = np.zeros(size)
            e[idx] = eps
            gp = _action_and_grad(problem, x + e)[1]
            gm = _action_and_grad(problem, x - e)[1]
            col = (gp - gm) / (2 * eps)
            for j in idx:
                pt = j // n
                lo = max(0, pt - 1) * n
                hi = min(points, pt + 2) * n
                Hm[lo:hi, j] = col[lo:hi]
    return 0.5 * (Hm + Hm.T)


def _newton_polish(problem, x, gtol, iters=8):
    f, g = _action_and_grad(problem, x)
    for _ in range(iters):
        if np.max(np.abs(g)) < gtol:
            break
        Hm = _hessian(problem, x)
        try:
            lam, V = np.linalg.eigh(Hm)
        except np.linalg.LinAlgError:
            break
        thr = 1e-9 * max(1.0, float(np.max(np.abs(lam))))
        if lam[0] < -thr:
            break
        # translation-invariant Lagrangians leave a flat direction; project it out
        inv = np.where(lam > thr, 1.0 / np.where(lam > thr, lam, 1.0), 0.0)
        step = -V @ (inv * (V.T @ g))
        t = 1.0
        while t > 1e-6:
            f_new, g_new = _action_and_grad(problem, x + t * step)
            if f_new <= f + 1e-4 * t * float(g @ step) + 1e-13 * (1 + abs(f)):
                break
            t *= 0.5
        else:
            break
        x, f, g = x + t * step, f_new, g_new
    return x, f, g


def minimize_action(problem: ActionProblem, config: MinimizeConfig | None = None) -> MinimizationResult:
    """Multi-start minimization of the discrete action with free endpoints.

    Starts are straight lines whose slopes run over a lattice around the
    class a (the rotation vectors of minimizers live there), with a little
    seeded jitter.  A short L-BFGS screen ranks the starts, the best few are
    run to convergence and finished with banded-Hessian Newton steps.
    """
    cfg = config or MinimizeConfig()
    n = problem.L.dim
    M = problem.M
    k = problem.k
    floor = cfg.floor if cfg.floor is not None else -1e6 * k
    rng = np.random.default_rng(cfg.seed)
    times = np.linspace(0.0, k, M + 1)[:, None]
    slopes = _seed_slopes(problem.a.vector, cfg)

    fun = lambda x: _action_and_grad(problem, x)
    screened = []
    for off in cfg.offsets:
        for s in slopes:
            x0 = (off + times * s + cfg.jitter * rng.standard_normal((M + 1, n))).reshape(-1)
            res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                           options={"maxiter": cfg.screen_iters, "gtol": 1e-12, "ftol": 1e-15})
            if res.fun < floor:
                raise Diverged(f"action {res.fun:.4g} below floor {floor:.4g}")
            screened.append((float(res.fun), len(screened), res.x))
    starts_used = len(screened)
    screened.sort(key=lambda r: (r[0], r[1]))

    best = None
    for value, _, x0 in screened[:cfg.polish]:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.maxiter, "gtol": 1e-11, "ftol": cfg.ftol, "maxcor": 20})
        x, f, g = _newton_polish(problem, res.x, cfg.gtol)
        if f < floor:
            raise Diverged(f"action {f:.4g} below floor {floor:.4g}")
        gnorm = float(np.max(np.abs(g)))
        if best is None or f < best[0] - 1e-12:
            best = (f, x, gnorm)
    f, x, gnorm = best
    curve = DiscreteCurve(x.reshape(M + 1, n), k)
    value = discrete_action(problem, curve)
    return MinimizationResult(value=value, minimizer=curve, starts_used=starts_used,
                              converged=gnorm < cfg.gtol, gradient_norm=gnorm)


@dataclass(frozen=True)
class LimitEstimate:
    """Estimate of lim c_k / k for a subadditive sequence c_k."""

    values: tuple  # ((k, c_k), ...)
    fekete_bound: float
    extrapolated: float
    uncertainty: float
    model: str = "1/k"

    @property
    def ratios(self):
        return tuple(c / k for k, c in self.values)


def _fit(ks, rs, power):
    x = ks ** (-power)
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, rs, rcond=None)
    resid = float(np.sum((A @ coef - rs) ** 2))
    return float(coef[0]), resid


def extrapolate_limit(values) -> LimitEstimate:
    """Fekete bound plus a rate-model extrapolation of c_k / k.

    The extrapolation fits ``c_k/k = L + b k^-s`` to the last three points
    for s = 1 and s = 1/2, keeps the better fit (ties go to s = 1), and
    clamps the result to the band spanned by the last three ratios widened
    by the uncertainty, which is half their spread.
    """
    items = sorted(dict(values).items())
    if len(items) < 3:
        raise ValueError("need at least three horizons")
    ks = np.array([k for k, _ in items], dtype=float)
    cs = np.array([c for _, c in items], dtype=float)
    rs = cs / ks
    fekete = float(np.min(rs))
    tail_k, tail_r = ks[-3:], rs[-3:]
    unc = 0.5 * float(np.max(tail_r) - np.min(tail_r))
    lim1, res1 = _fit(tail_k, tail_r, 1.0)
    lim2, res2 = _fit(tail_k, tail_r, 0.5)
    scale = 1e-24 * (1.0 + float(np.sum(tail_r**2)))
    if res2 + scale < res1:
        est, model = lim2, "1/sqrt(k)"
    else:
        est, model = lim1, "1/k"
    lo = float(np.min(tail_r)) - unc
    hi = float(np.max(tail_r)) + unc
    est = min(max(est, lo), hi)
    return LimitEstimate(values=tuple((int(k), float(c)) for k, c in items), fekete_bound=fekete,
                         extrapolated=est, uncertainty=unc, model=model)


@dataclass(frozen=True)
class AlphaRow:
    """One CSV row of an alpha computation."""

    a: tuple
    k: int
    M: int
    value: float
    gradient_norm: float
    starts_used: int
    converged: bool
    wall_time_ms: float = field(default=0.0, compare=False)

    CSV_HEADER = ("a", "k", "M", "value", "value_per_k", "gradient_norm", "starts_used")

    def csv_fields(self):
        a = ";".join(repr(float(x)) for x in self.a)
        return (a, str(self.k), str(self.M), repr(self.value), repr(self.value / self.k),
                f"{self.gradient_norm:.3e}", str(self.starts_used))


def velocity_range(H: HamiltonianSpec, a: CohomologyClass, margin: float = 1.0, nodes: int = 9):
    """(mean, max) of |dH/dp| over p in a box of half-width ``margin`` around a.

    Minimizing curves of the a-shifted action move with velocities in this
    range, which sizes the multistart slope lattice.
    """
    n = H.dim
    g = (np.arange(nodes) + 0.5) / nodes
    q = np.stack(np.meshgrid(*[g] * n, indexing="ij"), axis=-1).reshape(-1, n)
    offs = np.stack(np.meshgrid(*[np.linspace(-margin, margin, 3)] * n, indexing="ij"), axis=-1).reshape(-1, n)
    vmax = 0.0
    for t in g[::3]:
        for o in offs:
            v = grad_p(H, t, q, a.vector + o)
            vmax = max(vmax, float(np.max(np.abs(v))))
    center = np.mean(grad_p(H, 0.0, q, np.broadcast_to(a.vector, q.shape)), axis=0)
    return center, vmax


def spatial_frequency(H: HamiltonianSpec, a: CohomologyClass, nodes: int = 64, rel: float = 1e-3) -> int:
    """Highest Fourier mode of q -> H(t, q, a) above ``rel`` of the dominant one (0 if q-independent)."""
    n = H.dim
    g = np.arange(nodes) / nodes
    best = 0
    for axis in range(n):
        for t in (0.0, 0.37):
            q = np.zeros((nodes, n)) + 0.1234
            q[:, axis] = g
            vals = np.asarray(H(t, q, np.broadcast_to(a.vector, q.shape)), dtype=float)
            c = np.abs(np.fft.rfft(vals))[1:]
            if c.size == 0 or c.max() < 1e-12 * (1 + np.abs(vals).max()):
                continue
            best = max(best, int(np.flatnonzero(c > rel * c.max()).max()) + 1)
    return best


def resolved_steps(H: HamiltonianSpec, a: CohomologyClass, steps_per_period: int = 8, advance: float = 0.25,
                   margin: float = 1.0) -> int:
    """Steps per period so that a minimizer advances at most ``advance`` potential wavelengths per step.

    The midpoint rule under-resolves fast rotations through oscillating
    potentials; ``steps_per_period`` acts as a floor.
    """
    freq = spatial_frequency(H, a)
    if freq == 0:
        return int(steps_per_period)
    _, vmax = velocity_range(H, a, margin)
    return max(int(steps_per_period), int(np.ceil(vmax * freq / advance - 1e-9)))


def _velocity_aware(H, a, cfg):
    if cfg.slope_half is not None:
        return cfg
    center, vmax = velocity_range(H, a, cfg.slope_margin)
    half = max(float(np.max(np.abs(a.vector))) + cfg.slope_margin, vmax)
    return replace(cfg, slope_half=half, slope_center=tuple(float(c) for c in center))


def alpha_at(H: HamiltonianSpec, a: CohomologyClass, k_schedule=DEFAULT_K_SCHEDULE, steps_per_period: int = 8,
             config: MinimizeConfig | None = None, lagrangian: LagrangianSpec | None = None,
             rows: list | None = None, adaptive_steps: bool = True) -> LimitEstimate:
    """alpha_H(a) as the limit of -min A^k / k over the horizon schedule.

    With ``adaptive_steps`` the time step is refined by :func:`resolved_steps`;
    the step count actually used is recorded in each row's ``M``.
    """
    if not H.tonelli:
        raise ValueError(f"Hamiltonian {H.name!r} is not Tonelli; the variational route does not apply")
    L = lagrangian or fenchel_lagrangian(H)
    config = _velocity_aware(H, a, config or MinimizeConfig())
    if adaptive_steps:
        steps_per_period = resolved_steps(H, a, steps_per_period, margin=config.slope_margin)
    values = {}
    for k in k_schedule:
        problem = ActionProblem(L, a, int(k), steps_per_period)
        t0 = time.perf_counter()
        res = minimize_action(problem, config)
        elapsed = 1e3 * (time.perf_counter() - t0)
        values[int(k)] = -res.value
        log.debug("alpha %s a=%s k=%d value=%.12g |g|=%.2e", H.name, a.a, k, res.value, res.gradient_norm)
        if rows is not None:
            rows.append(AlphaRow(a.a, int(k), problem.M, res.value, res.gradient_norm, res.starts_used,
                                 res.converged, elapsed))
    est = extrapolate_limit(values)
    ratios = est.ratios
    slack = est.uncertainty + 1e-9 * (1 + abs(est.extrapolated))
    if any(r2 > r1 + slack for r1, r2 in zip(ratios, ratios[1:])):
        warnings.warn(f"c_k/k not monotone for {H.name} at a={a.a}: {ratios}", NonMonotoneWarning, stacklevel=2)
    return est


def _alpha_job(args):
    H, a, ks, spp, cfg = args
    rows = []
    est = alpha_at(H, CohomologyClass(a), ks, spp, cfg, rows=rows)
    return est, rows


def alpha_profile(H: HamiltonianSpec, a_grid, k_schedule=DEFAULT_K_SCHEDULE, steps_per_period: int = 8,
                  config: MinimizeConfig | None = None, jobs: int = 1, rows: list | None = None):
    """[(a, LimitEstimate)] over a grid of classes; cells run independently."""
    grid = [tuple(np.atleast_1d(np.asarray(a, dtype=float))) for a in a_grid]
    tasks = [(H, a, tuple(k_schedule), steps_per_period, config) for a in grid]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_alpha_job, tasks))
    else:
        results = [_alpha_job(t) for t in tasks]
    out = []
    for a, (est, r) in zip(grid, results):
        out.append((a, est))
        if rows is not None:
            rows.extend(r)
    if len(out) >= 3 and len(grid[0]) == 1:
        xs = np.array([a[0] for a, _ in out])
        ys = np.array([e.extrapolated for _, e in out])
        order = np.argsort(xs)
        xs, ys = xs[order], ys[order]
        # alpha is convex; flag second differences that dip below the noise
        d2 = (ys[2:] - ys[1:-1]) / np.diff(xs)[1:] - (ys[1:-1] - ys[:-2]) / np.diff(xs)[:-1]
        tol = max(e.uncertainty for _, e in out) * 4 + 1e-6
        if np.any(d2 < -tol):
            warnings.warn(f"alpha profile of {H.name} is not convex within {tol:.2g}", NonMonotoneWarning,
                          stacklevel=2)
    return out
