"""Sublevel-set persistence of generating functions on cubical grids.

The grid is base torus (periodic axes) times a fiber box (bounded axes).
Cells of the cubical complex are addressed on the doubled grid: a cell has
coordinate ``c_i`` on axis i, even for a vertex position and odd for an
edge position, so its dimension is the number of odd coordinates.  Every
cell enters the filtration at the max of its vertex values (lower star).

The relative pair needed for spectral invariants is realized by coning the
cells on the E^- boundary (fiber axes with negative B) to a virtual vertex
sitting below every sampled value.  Reduction is over Z_2 with the clearing
optimization; ties are broken by (value, dimension, cell index).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numba
import numpy as np
from numba import types
from numba.typed import Dict

from .gfqi import GeneratingFunction, sample_on_mesh

__all__ = [
    "PersistenceGrid",
    "CubicalFiltration",
    "PersistenceDiagram",
    "SpectralReport",
    "MemoryBudget",
    "RankMismatch",
    "MAX_CELLS",
    "graded_nodes",
    "default_grid",
    "filtration_from_values",
    "build_filtration",
    "compute_persistence",
    "spectral_invariants",
    "spectral_report",
    "refinement_study",
]

MAX_CELLS = 20_000_000


class MemoryBudget(RuntimeError):
    pass


class RankMismatch(RuntimeError):
    pass


# ------------------------------------------------------------------ grids

def graded_nodes(core: float, box: float, n_core: int = 17, n_shell: int = 3) -> np.ndarray:
    """Symmetric fiber nodes: uniform on [-core, core], geometric shells out past the box.

    The outermost node sits at 1.25 * box so the grid contains the fiber box
    plus one extra shell.
    """
    if n_core % 2 == 0:
        n_core += 1
    core = float(core)
    outer = 1.25 * float(box)
    inner = np.linspace(-core, core, n_core)
    if outer <= core * (1 + 1e-12) or n_shell == 0:
        return inner if outer <= core else np.linspace(-outer, outer, n_core)
    ratio = (outer / core) ** (1.0 / n_shell)
    shells = core * ratio ** np.arange(1, n_shell + 1)
    shells[-1] = outer
    return np.concatenate([-shells[::-1], inner, shells])


@dataclass(frozen=True)
class PersistenceGrid:
    """Base resolution per periodic axis and explicit node lists per fiber axis."""

    base_n: tuple
    fiber_nodes: tuple = ()

    def __init__(self, base_n, fiber_nodes=()):
        if isinstance(base_n, int):
            base_n = (base_n,)
        object.__setattr__(self, "base_n", tuple(int(b) for b in base_n))
        object.__setattr__(self, "fiber_nodes", tuple(np.asarray(f, dtype=float) for f in fiber_nodes))
        if any(b < 2 for b in self.base_n) or any(len(f) < 2 for f in self.fiber_nodes):
            raise ValueError("resolutions must be >= 2 per axis")

    @property
    def base_nodes(self):
        return [np.arange(b) / b for b in self.base_n]

    @property
    def shape(self):
        return self.base_n + tuple(len(f) for f in self.fiber_nodes)

    def describe(self) -> str:
        fib = ",".join(f"{len(f)}[{f[0]:.3g},{f[-1]:.3g}]" for f in self.fiber_nodes)
        return f"base={'x'.join(map(str, self.base_n))};fiber={fib or '-'}"

    def __eq__(self, other):
        return (isinstance(other, PersistenceGrid) and self.base_n == other.base_n
                and len(self.fiber_nodes) == len(other.fiber_nodes)
                and all(np.array_equal(a, b) for a, b in zip(self.fiber_nodes, other.fiber_nodes)))

    def __hash__(self):
        return hash((self.base_n, tuple(tuple(f) for f in self.fiber_nodes)))


def default_grid(S: GeneratingFunction, base_n: int = 64, n_core: int = 17, n_shell: int = 3) -> PersistenceGrid:
    fibers = [graded_nodes(c, b, n_core, n_shell) for c, b in zip(S.core, S.fiber_box)]
    return PersistenceGrid((base_n,) * S.base_dim, fibers)


# ------------------------------------------------------------- filtration

@dataclass(frozen=True, eq=False)
class CubicalFiltration:
    """Lower-star cubical filtration, possibly with a coned E^- boundary.

    ``order`` lists cell ids in filtration order; ids below ``n_grid`` are
    grid cells (flat index on the doubled grid), ids ``n_grid + j`` are
    cones over the j-th capped cell, and the last id is the virtual vertex.
    """

    shape: tuple
    periodic: tuple
    vertex_values: np.ndarray
    cell_values: np.ndarray
    cell_dims: np.ndarray
    capped: np.ndarray
    cap_value: float
    order: np.ndarray
    bnd_ptr: np.ndarray
    bnd_idx: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cell_values)

    @property
    def max_dim(self) -> int:
        return int(self.cell_dims.max()) if len(self.cell_dims) else 0

    def sorted_values(self):
        return self.cell_values[self.order]

    def sorted_dims(self):
        return self.cell_dims[self.order]


def _doubled_values(V, periodic):
    out = V
    for ax, per in enumerate(periodic):
        n = out.shape[ax]
        m = 2 * n if per else 2 * n - 1
        shape = list(out.shape)
        shape[ax] = m
        D = np.empty(shape)
        ev = [slice(None)] * out.ndim
        od = [slice(None)] * out.ndim
        ev[ax] = slice(0, m, 2)
        od[ax] = slice(1, m, 2)
        D[tuple(ev)] = out
        nxt = np.roll(out, -1, axis=ax)
        if not per:
            sl = [slice(None)] * out.ndim
            sl[ax] = slice(0, n - 1)
            D[tuple(od)] = np.maximum(out[tuple(sl)], nxt[tuple(sl)])
        else:
            D[tuple(od)] = np.maximum(out, nxt)
        out = D
    return out


def filtration_from_values(values, periodic, coned_axes=(), max_cells: int = MAX_CELLS) -> CubicalFiltration:
    """Lower-star filtration of vertex values on a periodic/bounded grid.

    ``coned_axes`` lists bounded axes whose boundary faces are coned off.
    """
    V = np.asarray(values, dtype=float)
    periodic = tuple(bool(p) for p in periodic)
    if V.ndim != len(periodic):
        raise ValueError("one periodic flag per axis")
    for ax in coned_axes:
        if periodic[ax]:
            raise ValueError("only bounded axes can be coned")
    P = tuple(2 * n if per else 2 * n - 1 for n, per in zip(V.shape, periodic))
    n_grid = int(np.prod(P))
    if n_grid > max_cells:
        raise MemoryBudget(f"{n_grid} cells exceed the budget of {max_cells}")
    D = _doubled_values(V, periodic).reshape(-1)
    coords = np.indices(P).reshape(len(P), -1)
    odd = coords & 1
    dims = odd.sum(axis=0).astype(np.int64)

    capped_mask = np.zeros(n_grid, dtype=bool)
    for ax in coned_axes:
        capped_mask |= (coords[ax] == 0) | (coords[ax] == P[ax] - 1)
    capped = np.flatnonzero(capped_mask)
    n_cone = len(capped)
    total = n_grid + n_cone + (1 if n_cone else 0)
    if total > max_cells:
        raise MemoryBudget(f"{total} cells exceed the budget of {max_cells}")
    cap_value = float(V.min()) - 1.0

    values_all = np.empty(total)
    dims_all = np.empty(total, dtype=np.int64)
    values_all[:n_grid] = D
    dims_all[:n_grid] = dims
    if n_cone:
        values_all[n_grid:n_grid + n_cone] = D[capped]
        dims_all[n_grid:n_grid + n_cone] = dims[capped] + 1
        values_all[-1] = cap_value
        dims_all[-1] = 0

    # boundary pairs (cell, face) on the grid
    strides = np.array([int(np.prod(P[i + 1:])) for i in range(len(P))], dtype=np.int64)
    cols, rows = [], []
    flat = np.arange(n_grid, dtype=np.int64)
    for ax in range(len(P)):
        sel = odd[ax] == 1
        cells = flat[sel]
        c = coords[ax][sel]
        lo = cells - strides[ax]
        hi_c = c + 1
        if periodic[ax]:
            wrap = hi_c == P[ax]
            hi = cells + strides[ax]
            hi[wrap] = cells[wrap] - c[wrap] * strides[ax]
        else:
            hi = cells + strides[ax]
        cols += [cells, cells]
        rows += [lo, hi]
    if n_cone:
        # cone index of a capped grid cell
        cone_of = np.full(n_grid, -1, dtype=np.int64)
        cone_of[capped] = n_grid + np.arange(n_cone)
        gcols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        grows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        in_cap = capped_mask[gcols]
        # d(sigma * v) = sigma + (d sigma) * v ; for a vertex, sigma + v
        cols.append(cone_of[gcols[in_cap]])
        rows.append(cone_of[grows[in_cap]])
        cone_ids = n_grid + np.arange(n_cone)
        cols.append(cone_ids)
        rows.append(capped)
        vert = dims[capped] == 0
        cols.append(cone_ids[vert])
        rows.append(np.full(int(vert.sum()), total - 1, dtype=np.int64))
    col = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    row = np.concatenate(rows) if rows else np.zeros(0, np.int64)

    order = np.lexsort((np.arange(total), dims_all, values_all))
    rank = np.empty(total, dtype=np.int64)
    rank[order] = np.arange(total)
    rc, rr = rank[col], rank[row]
    srt = np.lexsort((rr, rc))
    rc, rr = rc[srt], rr[srt]
    ptr = np.zeros(total + 1, dtype=np.int64)
    np.add.at(ptr, rc + 1, 1)
    ptr = np.cumsum(ptr)
    return CubicalFiltration(shape=V.shape, periodic=periodic, vertex_values=V, cell_values=values_all,
                             cell_dims=dims_all, capped=capped, cap_value=cap_value if n_cone else math.nan,
                             order=order, bnd_ptr=ptr, bnd_idx=rr)


def build_filtration(S: GeneratingFunction, grid: PersistenceGrid | None = None, values=None,
                     max_cells: int = MAX_CELLS) -> CubicalFiltration:
    """Sample S on the grid and build its (coned) lower-star filtration.

    ``values`` may be supplied to reuse (or perturb) an existing sampling.
    """
    grid = grid or default_grid(S)
    if len(grid.base_n) != S.base_dim or len(grid.fiber_nodes) != S.fiber_dim:
        raise ValueError("grid does not match the generating function's dimensions")
    for nodes, box in zip(grid.fiber_nodes, S.fiber_box):
        if nodes[0] > -box or nodes[-1] < box:
            raise ValueError(f"fiber grid [{nodes[0]:g}, {nodes[-1]:g}] does not contain the fiber box {box:g}")
    P = 1
    for n in grid.base_n:
        P *= 2 * n
    for nodes in grid.fiber_nodes:
        P *= 2 * len(nodes) - 1
    if P > max_cells:
        raise MemoryBudget(f"{P} cells exceed the budget of {max_cells}")
    if values is None:
        values = sample_on_mesh(S, grid.base_nodes, grid.fiber_nodes)
    periodic = (True,) * S.base_dim + (False,) * S.fiber_dim
    coned = tuple(S.base_dim + j for j, b in enumerate(S.B) if b < 0)
    return filtration_from_values(values, periodic, coned, max_cells=max_cells)


# -------------------------------------------------------------- reduction

@numba.njit(cache=True)
def _symdiff(a, b):
    out = np.empty(len(a) + len(b), dtype=np.int64)
    i = j = k = 0
    while i < len(a) and j < len(b):
        if a[i] < b[j]:
            out[k] = a[i]
            i += 1
            k += 1
        elif a[i] > b[j]:
            out[k] = b[j]
            j += 1
            k += 1
        else:
            i += 1
            j += 1
    while i < len(a):
        out[k] = a[i]
        i += 1
        k += 1
    while j < len(b):
        out[k] = b[j]
        j += 1
        k += 1
    return out[:k]


@numba.njit(cache=True)
def _reduce(ptr, idx, dims, maxdim):
    n = len(dims)
    owner = np.full(n, -1, dtype=np.int64)  # pivot row -> column
    cleared = np.zeros(n, dtype=np.bool_)
    store = Dict.empty(key_type=types.int64, value_type=types.int64[:])
    for d in range(maxdim, 0, -1):
        for j in range(n):
            if dims[j] != d or cleared[j]:
                continue
            col = idx[ptr[j]:ptr[j + 1]].copy()
            while len(col) > 0:
                o = owner[col[-1]]
                if o < 0:
                    break
                col = _symdiff(col, store[o])
            if len(col) > 0:
                owner[col[-1]] = j
                store[j] = col
                cleared[col[-1]] = True
    return owner


# --------------------------------------------------------------- diagrams

@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Bars (dim, birth, death) with death = inf for essential classes."""

    bars: np.ndarray  # shape (m, 3)
    essential_ranks: tuple

    def __post_init__(self):
        b = np.asarray(self.bars, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "bars", b)

    def in_dim(self, k: int) -> np.ndarray:
        return self.bars[self.bars[:, 0] == k][:, 1:]

    def essential(self, k: int) -> np.ndarray:
        b = self.in_dim(k)
        return np.sort(b[np.isinf(b[:, 1])][:, 0])

    def finite(self, k: int) -> np.ndarray:
        b = self.in_dim(k)
        return b[np.isfinite(b[:, 1])]

    def canonical(self) -> np.ndarray:
        """Bars sorted lexicographically; used for equality tests."""
        b = self.bars
        return b[np.lexsort((b[:, 2], b[:, 1], b[:, 0]))]

    def to_csv(self) -> str:
        lines = ["dim,birth,death"]
        for d, b, e in self.canonical():
            lines.append(f"{int(d)},{float(b)!r},{'inf' if math.isinf(e) else repr(float(e))}")
        return "\n".join(lines) + "\n"


def compute_persistence(filt: CubicalFiltration, keep_zero_length: bool = False) -> PersistenceDiagram:
    """Z_2 persistence diagram of the filtration (deterministic)."""
    dims = filt.sorted_dims()
    vals = filt.sorted_values()
    owner = _reduce(filt.bnd_ptr, filt.bnd_idx, dims, filt.max_dim)
    n = len(dims)
    is_death = np.zeros(n, dtype=bool)
    pos = owner >= 0
    is_death[owner[pos]] = True
    births = np.flatnonzero(pos)
    deaths = owner[pos]
    bars = [np.stack([dims[births].astype(float), vals[births], vals[deaths]], axis=1)]
    essential = np.flatnonzero(~pos & ~is_death)
    bars.append(np.stack([dims[essential].astype(float), vals[essential], np.full(len(essential), np.inf)], axis=1))
    allbars = np.concatenate(bars)
    if not keep_zero_length:
        allbars = allbars[allbars[:, 1] != allbars[:, 2]]
    maxd = filt.max_dim
    ranks = tuple(int(np.sum(dims[essential] == k)) for k in range(maxd + 1))
    return PersistenceDiagram(allbars, ranks)


@dataclass(frozen=True)
class SpectralReport:
    ell_minus: float
    ell_plus: float
    diagram: PersistenceDiagram = field(repr=False, compare=False)
    grid: str = ""
    refinement_error: float = math.nan
    levels: tuple = ()

    def __post_init__(self):
        if self.ell_minus > self.ell_plus:
            raise ValueError(f"ell_minus {self.ell_minus} exceeds ell_plus {self.ell_plus}")


def spectral_invariants(diagram: PersistenceDiagram, n: int, d: int, grid: str = "") -> SpectralReport:
    """ell_- and ell_+ from the essential classes in degrees d and d + n."""
    ranks = list(diagram.essential_ranks) + [0] * (d + n + 2)
    expected = [0] * len(ranks)
    for j in range(n + 1):
        expected[d + j] = comb(n, j)
    if d >= 1:
        expected[0] += 1  # the virtual cone point
    if ranks[:len(expected)] != expected:
        raise RankMismatch(f"essential ranks {tuple(diagram.essential_ranks)} do not match H_*(T^{n}) "
                           f"shifted by {d}")
    lo = float(diagram.essential(d).min())
    hi = float(diagram.essential(d + n).min())
    return SpectralReport(ell_minus=lo, ell_plus=hi, diagram=diagram, grid=grid)


def spectral_report(S: GeneratingFunction, grid: PersistenceGrid | None = None, values=None) -> SpectralReport:
    grid = grid or default_grid(S)
    filt = build_filtration(S, grid, values=values)
    return spectral_invariants(compute_persistence(filt), S.base_dim, S.neg_index, grid.describe())


def refinement_study(S: GeneratingFunction, grids) -> SpectralReport:
    """ell_+- on ascending grids; the error is the change between the last two levels."""
    grids = list(grids)
    if len(grids) < 2:
        raise ValueError("a refinement study needs at least two grids")
    reports = [spectral_report(S, g) for g in grids]
    last, prev = reports[-1], reports[-2]
    err = max(abs(last.ell_minus - prev.ell_minus), abs(last.ell_plus - prev.ell_plus))
    levels = tuple((r.grid, r.ell_minus, r.ell_plus) for r in reports)
    return SpectralReport(last.ell_minus, last.ell_plus, last.diagram, last.grid, err, levels)
