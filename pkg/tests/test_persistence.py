import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symphom.gfqi import compose_gf, gf_of_function, negate_flip, one_step_gf, stabilize
from symphom import catalog
from symphom.persistence import (MemoryBudget, PersistenceDiagram, PersistenceGrid, RankMismatch, build_filtration,
                                 compute_persistence, default_grid, filtration_from_values, graded_nodes,
                                 refinement_study, spectral_invariants, spectral_report)

import oracles


def diagram_of(V, periodic=(True, True), coned=()):
    return compute_persistence(filtration_from_values(V, periodic, coned))


def on_circle(f):
    return lambda q: f(q[..., 0])


# ------------------------------------------------------- engine vs oracle

@pytest.mark.parametrize("seed", range(6))
def test_matches_rank_function_oracle_small(seed):
    V = np.random.default_rng(seed).random((7, 6))
    np.testing.assert_array_equal(diagram_of(V).canonical(), oracles.brute_force_diagram(V))


def test_matches_oracle_with_ties():
    V = np.random.default_rng(3).integers(0, 4, (6, 6)).astype(float)
    ours = compute_persistence(filtration_from_values(V, (True, True))).canonical()
    np.testing.assert_array_equal(ours, oracles.brute_force_diagram(V))


@pytest.mark.parametrize("seed", range(4))
def test_submatrix_rank_oracle_agrees_with_direct_ranks(seed):
    # the fast oracle used at 16x16 is itself checked against the direct one
    rng = np.random.default_rng(100 + seed)
    for V in (rng.random((6, 5)), rng.integers(0, 3, (5, 6)).astype(float)):
        np.testing.assert_array_equal(oracles.rank_function_diagram(V), oracles.brute_force_diagram(V))


def test_torus_essential_ranks():
    d = diagram_of(np.random.default_rng(0).random((9, 9)))
    assert d.essential_ranks == (1, 2, 1)


def test_circle_and_interval():
    V = np.array([0.0, 2.0, 1.0, 3.0])
    d = diagram_of(V, (True,))
    assert d.essential_ranks == (1, 1)
    np.testing.assert_array_equal(d.canonical(), [[0, 0, np.inf], [0, 1, 2], [1, 3, np.inf]])
    d = diagram_of(V, (False,))
    assert d.essential_ranks == (1, 0)


def test_coned_interval_is_relative_homology():
    # (I, dI) has H_1 = Z_2 and reduced H_0 = 0; the cone point carries the H_0 class
    V = np.array([3.0, 0.5, -1.0, 0.7, 4.0])
    d = diagram_of(V, (False,), coned=(0,))
    assert d.essential_ranks == (1, 1)
    assert d.essential(1)[0] == 4.0  # the last boundary vertex closes the relative cycle


def test_determinism():
    V = np.random.default_rng(4).random((10, 10))
    assert diagram_of(V).to_csv() == diagram_of(V.copy()).to_csv()


def test_to_csv_format():
    d = PersistenceDiagram(np.array([[0, 0.5, np.inf], [0, 0.25, 0.75]]), (1,))
    assert d.to_csv().splitlines() == ["dim,birth,death", "0,0.25,0.75", "0,0.5,inf"]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_constant_shift_moves_every_bar(seed, c):
    V = np.random.default_rng(seed).random((5, 6))
    a = diagram_of(V).canonical()
    b = diagram_of(V + c).canonical()
    np.testing.assert_allclose(b[:, 1:], a[:, 1:] + c, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_reparametrization_keeps_pairs(seed):
    V = np.random.default_rng(seed).random((6, 5))
    a = diagram_of(V).canonical()
    b = diagram_of(np.exp(3 * V)).canonical()
    np.testing.assert_allclose(np.log(b[:, 1:]) / 3, a[:, 1:], atol=1e-12)


# ------------------------------------------------------------- grids

def test_graded_nodes():
    x = graded_nodes(1.0, 4.0, 9, 3)
    assert len(x) == 15
    assert x[0] == -5.0 and x[-1] == 5.0
    np.testing.assert_allclose(x, -x[::-1])
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(x[3:12], np.linspace(-1, 1, 9))


def test_graded_nodes_even_core_rounded_up():
    assert len(graded_nodes(1.0, 0.5, 8, 0)) == 9


def test_grid_validation():
    with pytest.raises(ValueError):
        PersistenceGrid(1)
    g = PersistenceGrid(8, [np.linspace(-1, 1, 5)])
    assert g.shape == (8, 5)
    assert g == PersistenceGrid((8,), [np.linspace(-1, 1, 5)])
    assert "base=8" in g.describe()


def test_memory_budget():
    with pytest.raises(MemoryBudget):
        filtration_from_values(np.zeros((100, 100)), (True, True), max_cells=1000)
    S = one_step_gf(catalog.pendulum(), 0.0, 0.1)
    with pytest.raises(MemoryBudget):
        build_filtration(S, PersistenceGrid(64, [np.linspace(-5, 5, 41)] * 2), max_cells=10_000)


def test_grid_must_contain_fiber_box():
    S = one_step_gf(catalog.pendulum(), 0.0, 0.1)
    with pytest.raises(ValueError):
        build_filtration(S, PersistenceGrid(16, [np.linspace(-0.1, 0.1, 5)] * 2))


# --------------------------------------------------- spectral invariants

def test_zero_section():
    r = spectral_report(gf_of_function(lambda q: np.zeros(q.shape[:-1])), PersistenceGrid(32))
    assert r.ell_minus == 0.0 and r.ell_plus == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_morse_function_values(seed):
    f = oracles.random_trig_poly(seed)
    lo, hi = oracles.dense_extrema(f)
    N = 256
    r = spectral_report(gf_of_function(on_circle(f)), PersistenceGrid(N))
    osc = np.max(np.abs(np.diff(f(np.arange(N + 1) / N))))
    assert r.ell_minus == pytest.approx(lo, abs=osc)
    assert r.ell_plus == pytest.approx(hi, abs=osc)


def test_morse_on_t2():
    f = lambda q: np.cos(2 * np.pi * q[..., 0]) + 0.5 * np.sin(2 * np.pi * q[..., 1])  # noqa: E731
    r = spectral_report(gf_of_function(f, dim=2), PersistenceGrid((32, 32)))
    assert r.ell_minus == pytest.approx(-1.5, abs=1e-9)
    assert r.ell_plus == pytest.approx(1.5, abs=1e-9)


def test_stabilization_invariance():
    f = oracles.random_trig_poly(1)
    S = gf_of_function(on_circle(f))
    base = spectral_report(S, PersistenceGrid(64))
    for coeff in (1.0, -1.0):
        T = stabilize(S, coeff, box=1.0)
        r = spectral_report(T, PersistenceGrid(64, [np.linspace(-1.25, 1.25, 9)]))
        assert (r.ell_minus, r.ell_plus) == (base.ell_minus, base.ell_plus)


def test_duality_on_shared_grid():
    S = one_step_gf(catalog.pendulum(), 0.0, 0.1)
    grid = default_grid(S, base_n=32, n_core=9, n_shell=2)
    r = spectral_report(S, grid)
    n = spectral_report(negate_flip(S), grid)
    assert n.ell_plus == pytest.approx(-r.ell_minus, abs=1e-12)
    assert n.ell_minus == pytest.approx(-r.ell_plus, abs=1e-12)


def test_pendulum_step_spectral_values():
    # flipped time-0.1 image: critical values are 0.1 * H at the fixed points
    S = one_step_gf(catalog.pendulum(), 0.0, 0.1)
    r = spectral_report(S, default_grid(S, base_n=64))
    assert r.ell_minus == pytest.approx(-0.1, abs=2e-3)
    assert r.ell_plus == pytest.approx(0.1, abs=2e-3)


def test_rank_mismatch_is_reported():
    d = diagram_of(np.random.default_rng(0).random((6, 6)))
    with pytest.raises(RankMismatch):
        spectral_invariants(d, 1, 0)


def test_refinement_study():
    S = gf_of_function(on_circle(oracles.random_trig_poly(2)))
    rep = refinement_study(S, [PersistenceGrid(32), PersistenceGrid(64), PersistenceGrid(128)])
    assert len(rep.levels) == 3
    assert rep.refinement_error == pytest.approx(
        max(abs(rep.levels[2][1] - rep.levels[1][1]), abs(rep.levels[2][2] - rep.levels[1][2])))
    with pytest.raises(ValueError):
        refinement_study(S, [PersistenceGrid(32)])


@pytest.mark.parametrize("eps", [1e-3, 1e-2])
def test_c0_stability_on_sampled_values(eps):
    S = compose_gf(one_step_gf(catalog.pendulum(), 0.0, 0.1), one_step_gf(catalog.pendulum(), 0.1, 0.1))
    grid = default_grid(S, base_n=16, n_core=5, n_shell=1)
    from symphom.gfqi import sample_on_mesh
    V = sample_on_mesh(S, grid.base_nodes, grid.fiber_nodes)
    base = spectral_report(S, grid, values=V)
    rng = np.random.default_rng(0)
    for _ in range(3):
        r = spectral_report(S, grid, values=V + rng.uniform(-eps, eps, V.shape))
        assert abs(r.ell_minus - base.ell_minus) <= eps
        assert abs(r.ell_plus - base.ell_plus) <= eps


def test_spectral_report_orders_values():
    with pytest.raises(ValueError):
        from symphom.persistence import SpectralReport
        SpectralReport(1.0, 0.0, diagram_of(np.zeros((2, 2))))
