"""mu_a, zeta_a and the homogenized Hamiltonian, plus the executable axiom battery.

Two routes compute ``mu_a(phi_H)``:

* ``variational``: for Tonelli H, the alpha function from
  :mod:`symphom.variational`;
* ``gfqi``: spectral invariants of generating functions on T^1.  Tonelli
  Hamiltonians use the broken-geodesic function S_k of the shifted
  Lagrangian, whose flip has ``ell_+ = -min S_k``; other Hamiltonians use
  compositions of one-step generating functions of the shifted flow.
  Small horizons only, so the values are flagged as heuristic limits.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import catalog
from .geometry import (CohomologyClass, HamiltonianSpec, covering_pullback, graph_restriction_bounds,
                       hamiltonian_range, scale_hamiltonian, shift_hamiltonian, vertical_seminorm)
from .gfqi import FIBER_BUDGET, StepTooLarge, broken_geodesic_gf, compose_gf, negate_flip, one_step_gf
from .persistence import PersistenceGrid, graded_nodes, refinement_study
from .variational import (DEFAULT_K_SCHEDULE, LimitEstimate, MinimizeConfig, alpha_at, extrapolate_limit,
                          spatial_frequency, velocity_range)

__all__ = [
    "MuParams",
    "MuResult",
    "PropertyRecord",
    "PropertyReport",
    "RouteUnavailable",
    "mu",
    "zeta",
    "homogenized_hamiltonian",
    "cross_check_alpha_vs_gfqi",
    "check_axioms",
    "Battery",
    "default_battery",
]

log = logging.getLogger(__name__)


class RouteUnavailable(ValueError):
    pass


@dataclass(frozen=True)
class MuParams:
    k_schedule: tuple = DEFAULT_K_SCHEDULE
    steps_per_period: int = 8
    minimize: MinimizeConfig = field(default_factory=MinimizeConfig)
    gfqi_k: tuple = (1, 2)
    gfqi_levels: tuple = ((48, 17), (96, 33))
    gfqi_shells: int = 3


@dataclass(frozen=True)
class MuResult:
    value: float
    route: str
    a: CohomologyClass
    convergence: LimitEstimate
    caveats: tuple = ()
    refinement_error: float = 0.0

    @property
    def uncertainty(self) -> float:
        return self.convergence.uncertainty + self.refinement_error


def _small_k_limit(values: dict) -> LimitEstimate:
    if len(values) >= 3:
        return extrapolate_limit(values)
    items = sorted(values.items())
    ratios = [c / k for k, c in items]
    unc = 0.5 * (max(ratios) - min(ratios))
    return LimitEstimate(values=tuple((int(k), float(c)) for k, c in items), fekete_bound=min(ratios),
                         extrapolated=ratios[-1], uncertainty=unc, model="last-ratio")


def _grids(S, params: MuParams):
    levels = params.gfqi_levels
    if S.fiber_dim >= 3:
        levels = ((12, 5), (16, 7))
    out = []
    for base_n, n_core in levels:
        shells = params.gfqi_shells if S.fiber_dim < 3 else 1
        fibers = [graded_nodes(c, b, n_core, shells) for c, b in zip(S.core, S.fiber_box)]
        out.append(PersistenceGrid((base_n,) * S.base_dim, fibers))
    return out


def _hamiltonian_chain(H: HamiltonianSpec, k: int):
    """Composition of one-step generating functions over k periods."""
    for m in (1, 2, 3):
        if 2 * m * k > FIBER_BUDGET:
            break
        try:
            tau = 1.0 / m
            S = one_step_gf(H, 0.0, tau)
            for j in range(1, m * k):
                S = compose_gf(S, one_step_gf(H, (j * tau) % 1.0, tau))
            return S
        except StepTooLarge:
            continue
    raise RouteUnavailable(f"{H.name}: no subdivision of {k} periods fits the fiber budget {FIBER_BUDGET}")


def _broken_geodesic_resolution(H: HamiltonianSpec, a: CohomologyClass, advance: float = 0.25) -> int:
    """Steps per period the one-step-per-period S_k would need at the mean speed of class a.

    With one midpoint per period a path can sit on the potential maximum
    while still carrying the displacement, so fast classes come out too low.
    """
    freq = spatial_frequency(H, a)
    if freq == 0:
        return 1
    v, _ = velocity_range(H, a, margin=0.0)
    return max(1, int(np.ceil(float(np.max(np.abs(v))) * freq / advance - 1e-9)))


def gfqi_spectra(H: HamiltonianSpec, a: CohomologyClass, k: int, params: MuParams | None = None):
    """(S(k)_a, refinement report) with ell_+ of S(k)_a approximating ell_+(phi^k) for the class a."""
    params = params or MuParams()
    if H.dim != 1:
        raise RouteUnavailable("the gfqi route is implemented on T^1")
    if H.tonelli:
        S = negate_flip(broken_geodesic_gf(H, k, a=a.a[0]))
    else:
        S = _hamiltonian_chain(shift_hamiltonian(H, a), k)
    return S, refinement_study(S, _grids(S, params))


def mu(H: HamiltonianSpec, a, route: str = "auto", params: MuParams | None = None) -> MuResult:
    """mu_a of the time-1 map of H."""
    params = params or MuParams()
    a = a if isinstance(a, CohomologyClass) else CohomologyClass(a)
    if route == "auto":
        route = "variational" if H.tonelli else "gfqi"
    if route == "variational":
        if not H.tonelli:
            raise RouteUnavailable(f"{H.name} is not Tonelli; the variational route does not apply")
        est = alpha_at(H, a, params.k_schedule, params.steps_per_period, params.minimize)
        return MuResult(est.extrapolated, "variational", a, est)
    if route != "gfqi":
        raise ValueError(f"unknown route {route!r}")
    values, err = {}, 0.0
    for k in params.gfqi_k:
        _, rep = gfqi_spectra(H, a, k, params)
        values[k] = rep.ell_plus
        err = max(err, rep.refinement_error / k)
    est = _small_k_limit(values)
    caveats = ("gfqi small-k limit is a heuristic",)
    if H.tonelli:
        need = _broken_geodesic_resolution(H, a)
        if need > 1:
            caveats += (f"broken-geodesic quadrature under-resolved: {need} steps per period needed, 1 used",)
    if not H.tonelli:
        caveats += ("gfqi extrapolation heuristic for non-Tonelli",)
    return MuResult(est.extrapolated, "gfqi", a, est, caveats, err)


def zeta(F: HamiltonianSpec, a, route: str = "auto", params: MuParams | None = None) -> MuResult:
    """zeta_a(F) = mu_a of the time-1 map of an autonomous F."""
    if not F.autonomous:
        raise ValueError("zeta is defined on autonomous functions")
    return mu(F, a, route, params)


def homogenized_hamiltonian(H: HamiltonianSpec, p_grid, route: str = "auto", params: MuParams | None = None):
    """[(p, Hbar(p))]: the value of mu_p on the time-1 map."""
    out = []
    for p in p_grid:
        r = mu(H, CohomologyClass(p), route, params)
        out.append((tuple(np.atleast_1d(np.asarray(p, dtype=float))), r.value, r.uncertainty))
    return out


# -------------------------------------------------------------- records

@dataclass(frozen=True)
class PropertyRecord:
    property_id: str
    instance: str
    inputs: str
    measured: float
    slack: float
    tolerance: float
    expected_failure: bool = False

    @property
    def violated(self) -> bool:
        return not (self.slack <= self.tolerance)

    @property
    def passed(self) -> bool:
        """True when the record behaves as intended (negative instances must be violated)."""
        return self.violated if self.expected_failure else not self.violated


@dataclass
class PropertyReport:
    records: list = field(default_factory=list)

    def add(self, rec: PropertyRecord):
        self.records.append(rec)

    def sorted(self):
        return sorted(self.records, key=lambda r: (r.property_id, r.instance))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["property", "instance", "inputs", "measured", "slack", "tolerance", "expected_failure",
                    "violated", "ok"])
        for r in self.sorted():
            w.writerow([r.property_id, r.instance, r.inputs, f"{r.measured:.10g}", f"{r.slack:.6g}",
                        f"{r.tolerance:.6g}", int(r.expected_failure), int(r.violated), int(r.passed)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.sorted():
            tag = "ok  " if r.passed else "FAIL"
            neg = " (negative instance)" if r.expected_failure else ""
            lines.append(f"[{tag}] {r.property_id:<16} {r.instance:<36} slack={r.slack:.3g} "
                         f"tol={r.tolerance:.3g}{neg}")
        n_ok = sum(r.passed for r in self.records)
        lines.append(f"{n_ok}/{len(self.records)} records ok; battery {'PASSED' if self.passed else 'FAILED'}")
        return "\n".join(lines) + "\n"


def _ineq(lo, x, hi):
    # amount by which lo <= x <= hi is violated
    return max(0.0, lo - x, x - hi)


# ------------------------------------------------------------ cross-check

def cross_check_alpha_vs_gfqi(H: HamiltonianSpec, k: int, a: float = 0.0, params: MuParams | None = None,
                              rel_tol: float = 0.03):
    """Variational min A^k against ell_-(S_k) and -ell_+ of the flipped S_k.

    Returns two records; both sides are grid-refined independently.
    """
    from .variational import ActionProblem, minimize_action
    from .geometry import fenchel_lagrangian
    params = params or MuParams()
    cls = CohomologyClass([a])
    L = fenchel_lagrangian(H)
    var = minimize_action(ActionProblem(L, cls, k, params.steps_per_period), params.minimize).value
    S = broken_geodesic_gf(H, k, a=a, lagrangian=L)
    grids = _grids(S, params)
    rep = refinement_study(S, grids)
    flipped = refinement_study(negate_flip(S), grids)
    scale = max(1.0, abs(var))
    tol = rel_tol * scale + rep.refinement_error
    inputs = f"k={k};a={a:g};var={var:.10g}"
    return [
        PropertyRecord("CrossRoute", f"{H.name} k={k} ell_minus", inputs, rep.ell_minus,
                       abs(var - rep.ell_minus), tol),
        PropertyRecord("CrossRoute", f"{H.name} k={k} -ell_plus(flip)", inputs, -flipped.ell_plus,
                       abs(var + flipped.ell_plus), tol),
    ]


# ---------------------------------------------------------------- battery

@dataclass(frozen=True)
class Battery:
    """Hamiltonians and classes used by :func:`check_axioms`."""

    pendulum_classes: tuple = (0.0, 1.0, 1.8)
    kinetic_classes: tuple = (0.0, 1.0)
    quartic_classes: tuple = (0.5,)
    covering_degrees: tuple = (2, 3)
    covering_classes: tuple = (0.0, 1.8)
    lipschitz_pair: tuple = (1.5, 1.8)
    plateau_value: float = 0.3
    product_class: tuple = (1.0, 0.0)
    rel_tol: float = 0.02
    route_tol: float = 0.03
    include_zero: bool = True
    include_negative: bool = True
    include_cross_route: bool = True


def default_battery() -> Battery:
    return Battery()


class _Cache:
    def __init__(self, params):
        self.params = params
        self.data = {}

    def mu(self, H, a, route="auto"):
        a = tuple(np.atleast_1d(np.asarray(a, dtype=float)))
        key = (H.name, a, route)
        if key not in self.data:
            self.data[key] = mu(H, CohomologyClass(a), route, self.params)
        return self.data[key]


def check_axioms(battery: Battery | None = None, params: MuParams | None = None,
                 tolerance_scale: float = 1.0) -> PropertyReport:
    """Run the property battery; failures are records, not exceptions."""
    b = battery or default_battery()
    params = params or MuParams()
    cache = _Cache(params)
    rep = PropertyReport()
    s = float(tolerance_scale)

    def tol(*results, value=1.0):
        unc = sum(r.uncertainty for r in results)
        return s * (b.rel_tol * max(1.0, abs(value)) + unc)

    K, P, Q = catalog.kinetic(), catalog.pendulum(), catalog.quartic()
    tonelli_cases = [(K, a) for a in b.kinetic_classes] + [(P, a) for a in b.pendulum_classes] \
        + [(Q, a) for a in b.quartic_classes]

    # Thm 1.3(vii): restriction to the graph of the constant form a bounds mu_a
    for H, a in tonelli_cases:
        r = cache.mu(H, a)
        lo, hi = graph_restriction_bounds(H, CohomologyClass([a]))
        rep.add(PropertyRecord("Thm1.3(vii)", f"{H.name} a={a:g}", f"min={lo:.6g};max={hi:.6g}", r.value,
                               _ineq(lo, r.value, hi), tol(r, value=r.value)))

    # Thm 1.3(iii): Hofer bounds against K = 0 and between pendulum and kinetic
    for H, a in tonelli_cases:
        r = cache.mu(H, a)
        lo, hi = hamiltonian_range(H)
        rep.add(PropertyRecord("Thm1.3(iii)", f"{H.name} vs 0 a={a:g}", f"intmin={lo:.6g};intmax={hi:.6g}",
                               r.value, _ineq(lo, r.value, hi), tol(r, value=r.value)))
    for a in b.pendulum_classes:
        rp, rk = cache.mu(P, a), cache.mu(K, a)
        diff = rp.value - rk.value
        rep.add(PropertyRecord("Thm1.3(iii)", f"pendulum vs kinetic a={a:g}", "H-K=cos(2 pi q) in [-1,1]", diff,
                               _ineq(-1.0, diff, 1.0), tol(rp, rk)))

    # Thm 1.3(i): subadditive minimal actions and mu(phi^2) = 2 mu(phi)
    from .variational import ActionProblem, minimize_action
    from .geometry import fenchel_lagrangian
    a_sub = b.pendulum_classes[-1]
    L = fenchel_lagrangian(P)
    c4 = -minimize_action(ActionProblem(L, CohomologyClass([a_sub]), 4, params.steps_per_period),
                          params.minimize).value
    c8 = -minimize_action(ActionProblem(L, CohomologyClass([a_sub]), 8, params.steps_per_period),
                          params.minimize).value
    rep.add(PropertyRecord("Thm1.3(i)", f"pendulum c8<=2c4 a={a_sub:g}", f"c4={c4:.10g};c8={c8:.10g}", c8,
                           max(0.0, c8 - 2 * c4), 1e-9 * s * max(1.0, abs(c8))))
    P2 = scale_hamiltonian(P, 2.0)
    for a in (0.0, a_sub):
        r1, r2 = cache.mu(P, a), cache.mu(P2, a)
        rep.add(PropertyRecord("Thm1.3(i)", f"mu(phi^2)=2mu(phi) a={a:g}", f"mu={r1.value:.10g}", r2.value,
                               abs(r2.value - 2 * r1.value), tol(r1, r1, r2, value=r2.value)))

    # Thm 1.3(viii): commuting pair lambda H, mu H
    P15, P05 = scale_hamiltonian(P, 1.5), scale_hamiltonian(P, 0.5)
    for a in (0.0, a_sub):
        r15, r1, r05 = cache.mu(P15, a), cache.mu(P, a), cache.mu(P05, a)
        rep.add(PropertyRecord("Thm1.3(viii)", f"1.5P<=P+0.5P a={a:g}", f"{r1.value:.8g}+{r05.value:.8g}",
                               r15.value, max(0.0, r15.value - r1.value - r05.value),
                               tol(r15, r1, r05, value=r15.value)))

    # Thm 1.3(ix): Lipschitz in a with the vertical semi-norm
    a1, a2 = b.lipschitz_pair
    r1, r2 = cache.mu(P, a1), cache.mu(P, a2)
    c = CohomologyClass([a2 - a1])
    bound = vertical_seminorm(P, c)
    gap = abs(r2.value - r1.value)
    rep.add(PropertyRecord("Thm1.3(ix)", f"pendulum a={a1:g},{a2:g}", f"seminorm={bound:.6g}", gap,
                           max(0.0, gap - bound), tol(r1, r2)))
    if b.include_negative:
        rep.add(PropertyRecord("Thm1.3(ix)", f"pendulum a={a1:g},{a2:g} seminorm:=0", "seminorm=0", gap,
                               max(0.0, gap - 0.0), tol(r1, r2), expected_failure=True))

    # Thm 1.5(i): zeta(2F) = 2 zeta(F)
    F = catalog.plateau(b.plateau_value)
    F2 = scale_hamiltonian(F, 2.0)
    zf, zf2 = cache.mu(F, 0.0), cache.mu(F2, 0.0)
    rep.add(PropertyRecord("Thm1.5(i)", "plateau lambda=2", f"zeta={zf.value:.10g}", zf2.value,
                           abs(zf2.value - 2 * zf.value), tol(zf, zf, zf2, value=zf2.value)))
    r1, r2 = cache.mu(P, a_sub), cache.mu(P2, a_sub)
    rep.add(PropertyRecord("Thm1.5(i)", f"pendulum lambda=2 a={a_sub:g}", f"zeta={r1.value:.10g}", r2.value,
                           abs(r2.value - 2 * r1.value), tol(r1, r1, r2, value=r2.value)))

    # Thm 1.5(iii): min(F-G) <= zeta(F) - zeta(G) <= max(F-G)
    for a in b.pendulum_classes:
        rp, rk = cache.mu(P, a), cache.mu(K, a)
        d = rp.value - rk.value
        rep.add(PropertyRecord("Thm1.5(iii)", f"pendulum-kinetic a={a:g}", "F-G in [-1,1]", d,
                               _ineq(-1.0, d, 1.0), tol(rp, rk)))
    d = zf2.value - zf.value
    rep.add(PropertyRecord("Thm1.5(iii)", "2plateau-plateau a=0", f"F-G in [0,{b.plateau_value:g}]", d,
                           _ineq(0.0, d, b.plateau_value), tol(zf, zf2)))

    # Thm 1.5(vi): F = c near the zero section
    rep.add(PropertyRecord("Thm1.5(vi)", f"plateau c={b.plateau_value:g}", "gfqi k=1,2", zf.value,
                           abs(zf.value - b.plateau_value), tol(zf, value=b.plateau_value)))

    # Thm 1.5(vii): {F, G} = 0 gives zeta(F+G) <= zeta(F) + zeta(G)
    G = catalog.quartic_kinetic()
    FG = catalog.kinetic_plus_quartic()
    for a in (1.0,):
        rf, rg, rfg = cache.mu(K, a), cache.mu(G, a), cache.mu(FG, a)
        rep.add(PropertyRecord("Thm1.5(vii)", f"p^2/2 + p^4/4 a={a:g}", f"{rf.value:.8g}+{rg.value:.8g}",
                               rfg.value, max(0.0, rfg.value - rf.value - rg.value),
                               tol(rf, rg, rfg, value=rfg.value)))
    r15, r1, r05 = cache.mu(P15, 0.0), cache.mu(P, 0.0), cache.mu(P05, 0.0)
    rep.add(PropertyRecord("Thm1.5(vii)", "P + 0.5P a=0", f"{r1.value:.8g}+{r05.value:.8g}", r15.value,
                           max(0.0, r15.value - r1.value - r05.value), tol(r15, r1, r05, value=r15.value)))

    # Prop 1.4: product on T^2
    T2 = catalog.product_kinetic_pendulum()
    ra = cache.mu(T2, b.product_class)
    r1 = cache.mu(K, b.product_class[0])
    r2 = cache.mu(P, b.product_class[1])
    rep.add(PropertyRecord("Prop1.4", f"kinetic+pendulum a={b.product_class}", f"{r1.value:.8g}+{r2.value:.8g}",
                           ra.value, abs(ra.value - r1.value - r2.value), tol(ra, r1, r2, value=ra.value)))

    # Prop 1.2: covering invariance
    for k in b.covering_degrees:
        Hk = covering_pullback(P, k)
        for a in b.covering_classes:
            rk, r0 = cache.mu(Hk, a), cache.mu(P, a)
            rep.add(PropertyRecord("Prop1.2", f"pendulum k={k} a={a:g}", f"mu={r0.value:.10g}", rk.value,
                                   abs(rk.value - r0.value), tol(rk, r0, value=r0.value)))

    # route consistency where both routes run
    if b.include_cross_route:
        for H, a in ((P, 0.0), (Q, b.quartic_classes[0])):
            rv, rg = cache.mu(H, a, "variational"), cache.mu(H, a, "gfqi")
            rep.add(PropertyRecord("RouteConsistency", f"{H.name} a={a:g}", f"var={rv.value:.10g}", rg.value,
                                   abs(rv.value - rg.value), s * (b.route_tol * max(1.0, abs(rv.value))
                                                                  + rv.uncertainty + rg.uncertainty)))

    # degenerate instance: H = 0 through the gfqi route gives exact zeros
    if b.include_zero:
        Z = catalog.zero()
        for a in (0.0, 1.0):
            rz = cache.mu(Z, a)
            rep.add(PropertyRecord("Thm1.3(vii)", f"zero a={a:g}", "min=0;max=0", rz.value,
                                   _ineq(0.0, rz.value, 0.0), tol(rz)))
        Z2 = scale_hamiltonian(Z, 2.0)
        rz, rz2 = cache.mu(Z, 0.0), cache.mu(Z2, 0.0)
        rep.add(PropertyRecord("Thm1.5(i)", "zero lambda=2", "zeta=0", rz2.value, abs(rz2.value - 2 * rz.value),
                               tol(rz, rz2)))
    return rep
