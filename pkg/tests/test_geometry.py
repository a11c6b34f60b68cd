import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symphom import catalog
from symphom.geometry import (Axis, CohomologyClass, DiscreteCurve, GridSampling, GridTooSmall, NotConvex,
                              covering_pullback, direct_sum, fenchel_lagrangian, fenchel_transform_of_lagrangian,
                              from_expression, grad_p, graph_restriction_bounds, legendre_transform,
                              poisson_bracket, shift_hamiltonian, vertical_seminorm)

import oracles

RNG = np.random.default_rng(7)
Q = RNG.random((100, 1))
P = RNG.uniform(-2, 2, (100, 1))


def test_periodicity_is_enforced():
    with pytest.raises(ValueError):
        from_expression("p1^2 + q1", 1)


def test_tonelli_flag_checked():
    with pytest.raises(NotConvex):
        from_expression("-p1^2", 1, tonelli=True)


# ------------------------------------------------------------- Fenchel

def _grid(p_lo=-6, p_hi=6, np_=241, v_lo=-2.5, v_hi=2.5, nv=51):
    return GridSampling([Axis("p1", p_lo, p_hi, np_), Axis("v1", v_lo, v_hi, nv), Axis("q1", 0, 1, 16, True)])


def test_legendre_kinetic_is_self_dual():
    L = legendre_transform(catalog.kinetic(), _grid())
    v = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(L(0.0, np.zeros((9, 1)), v[:, None]), 0.5 * v * v, atol=2e-3)


def test_legendre_pendulum_flips_potential():
    L = legendre_transform(catalog.pendulum(), _grid())
    q = np.linspace(0, 1, 16, endpoint=False)
    v = 0.6
    np.testing.assert_allclose(L(0.0, q[:, None], np.full((16, 1), v)), 0.5 * v * v - np.cos(2 * np.pi * q),
                               atol=2e-3)


def test_fenchel_quartic_against_bruteforce():
    H = from_expression("0.25*p1^4", 1, tonelli=True, fiber_radius=3.0)
    L = fenchel_lagrangian(H)
    v = np.array([0.0, 1.0, 2.0])
    ref = oracles.fenchel_bruteforce(lambda p: 0.25 * p ** 4, v)
    got = L(0.0, np.zeros((3, 1)), v[:, None])
    np.testing.assert_allclose(got, ref, atol=1e-8)
    np.testing.assert_allclose(got, 0.75 * np.abs(v) ** (4 / 3), atol=1e-8)


def test_grid_legendre_boundary_attainment_is_error():
    with pytest.raises(GridTooSmall):
        legendre_transform(catalog.kinetic(), _grid(p_lo=-1, p_hi=1, np_=41))


def test_fenchel_young_on_random_points():
    H = catalog.pendulum()
    grid = _grid()
    L = legendre_transform(H, grid)
    t = 0.0
    q = RNG.random((1000, 1))
    p = RNG.uniform(-2.0, 2.0, (1000, 1))
    v = grad_p(H, t, q, p)
    gap = L(t, q, v) + H(t, q, p) - np.sum(p * v, axis=-1)
    # interpolation error bound: cell diameter times a local Lipschitz bound of L (|v| + 2 pi)
    lip = 2.5 + 2 * np.pi
    assert np.max(np.abs(gap)) < 10 * grid.cell_diameter * lip


def test_double_transform_recovers_h():
    H = catalog.pendulum()
    L = fenchel_lagrangian(H)
    q = RNG.random((20, 1))
    p = RNG.uniform(-1.5, 1.5, 20)
    back = fenchel_transform_of_lagrangian(L, np.linspace(-6, 6, 4001), 0.0, q, p)
    np.testing.assert_allclose(back, H(0.0, q, p[:, None]), atol=2e-5)


# ------------------------------------------------------------ shifts etc.

def test_shift_examples():
    K = catalog.kinetic()
    assert shift_hamiltonian(K, CohomologyClass(0.0)) is K
    K1 = shift_hamiltonian(K, CohomologyClass(1.0))
    np.testing.assert_allclose(K1(0.0, Q, P), 0.5 * (P[:, 0] + 1) ** 2)
    Pa = shift_hamiltonian(catalog.pendulum(), CohomologyClass(0.5))
    np.testing.assert_allclose(Pa(0.0, Q, P), 0.5 * (P[:, 0] + 0.5) ** 2 + np.cos(2 * np.pi * Q[:, 0]), atol=1e-14)
    assert Pa.tonelli


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3))
def test_shift_roundtrip(a):
    H = catalog.pendulum()
    back = shift_hamiltonian(shift_hamiltonian(H, CohomologyClass(a)), CohomologyClass(-a))
    np.testing.assert_allclose(back(0.3, Q, P), H(0.3, Q, P), atol=1e-12)


def test_covering_examples():
    H = catalog.pendulum()
    assert covering_pullback(H, 1) is H
    K = catalog.kinetic()
    np.testing.assert_allclose(covering_pullback(K, 3)(0.0, Q, P), K(0.0, Q, P))
    np.testing.assert_allclose(covering_pullback(H, 2)(0.0, Q, P),
                               0.5 * P[:, 0] ** 2 + np.cos(4 * np.pi * Q[:, 0]), atol=1e-12)
    assert covering_pullback(H, 2).tonelli


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4))
def test_covering_composes(j, k):
    H = from_expression("0.5*p1^2 + cos(2*pi*q1)*sin(2*pi*t)", 1, tonelli=True)
    lhs = covering_pullback(covering_pullback(H, j), k)
    rhs = covering_pullback(H, j * k)
    for t in (0.0, 0.13, 0.71):
        np.testing.assert_allclose(lhs(t, Q, P), rhs(t, Q, P), atol=1e-9)


def test_direct_sum_examples():
    K1 = catalog.kinetic()
    S = direct_sum(K1, K1)
    q2 = RNG.random((50, 2))
    p2 = RNG.normal(size=(50, 2))
    np.testing.assert_allclose(S(0.0, q2, p2), 0.5 * np.sum(p2 ** 2, axis=1))
    assert S.tonelli and S.dim == 2
    pk = direct_sum(catalog.pendulum(), K1)
    np.testing.assert_allclose(pk(0.0, q2, p2), 0.5 * np.sum(p2 ** 2, axis=1) + np.cos(2 * np.pi * q2[:, 0]))
    z = direct_sum(catalog.pendulum(), catalog.zero())
    np.testing.assert_allclose(z(0.0, q2, p2), catalog.pendulum()(0.0, q2[:, :1], p2[:, :1]))
    assert not z.tonelli


def test_poisson_bracket_examples():
    F = from_expression("p1", 1)
    G = from_expression("0.5*p1^2 + p1^3", 1)
    assert np.max(np.abs(poisson_bracket(F, G, Q, P))) < 1e-8
    S = from_expression("sin(2*pi*q1)", 1)
    np.testing.assert_allclose(poisson_bracket(F, S, Q, P), 2 * np.pi * np.cos(2 * np.pi * Q[:, 0]), atol=1e-6)
    Pn = catalog.pendulum()
    assert np.max(np.abs(poisson_bracket(Pn, Pn, Q, P))) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(-2, 2))
def test_poisson_antisymmetry(q, p):
    F = catalog.pendulum()
    G = from_expression("p1*sin(2*pi*q1) + 0.25*p1^4", 1)
    qq, pp = np.array([[q]]), np.array([[p]])
    assert abs(poisson_bracket(F, G, qq, pp)[0] + poisson_bracket(G, F, qq, pp)[0]) < 1e-10


def test_graph_restriction_examples():
    K = catalog.kinetic()
    assert graph_restriction_bounds(K, CohomologyClass(1.0)) == pytest.approx((0.5, 0.5))
    assert graph_restriction_bounds(catalog.pendulum(), CohomologyClass(0.0)) == pytest.approx((-1.0, 1.0))
    assert graph_restriction_bounds(K, CohomologyClass(0.0)) == (0.0, 0.0)


def test_vertical_seminorm_of_kinetic():
    # sup over |p| <= R of |p c| is R |c|
    K = catalog.kinetic()
    assert vertical_seminorm(K, CohomologyClass(0.5)) == pytest.approx(0.5 * K.fiber_radius, rel=1e-6)


def test_curve_displacement_is_lift_independent():
    c = DiscreteCurve(np.array([[0.2], [0.7], [1.9]]), 2)
    np.testing.assert_allclose(c.displacement, [1.7])
    np.testing.assert_allclose(c.shifted([3]).displacement, [1.7])
    assert c.step == pytest.approx(1.0)
