"""Flat binary grid files.

Layout: the magic line ``SYMGRID1``, one line of JSON describing the axes
(``name``, ``lo``, ``hi``, ``n``, ``periodic`` and, for non-uniform axes,
explicit ``nodes``), then the values as little-endian float64 in row-major
order (last axis fastest).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.interpolate import NdBSpline, make_interp_spline

from .geometry import Axis, GridFunction, HamiltonianSpec

__all__ = ["MAGIC", "write_grid", "read_grid", "hamiltonian_from_grid", "GridFileError"]

MAGIC = b"SYMGRID1\n"


class GridFileError(ValueError):
    pass


def write_grid(path, axes, values, nodes=None) -> None:
    """Write ``values`` sampled on ``axes``; ``nodes`` optionally overrides per-axis node lists."""
    values = np.ascontiguousarray(values, dtype="<f8")
    shape = tuple(a.n for a in axes)
    if values.shape != shape:
        raise GridFileError(f"values have shape {values.shape}, axes say {shape}")
    header = []
    for i, a in enumerate(axes):
        entry = {"name": a.name, "lo": a.lo, "hi": a.hi, "n": a.n, "periodic": a.periodic}
        if nodes is not None and nodes[i] is not None:
            entry["nodes"] = [float(x) for x in nodes[i]]
        header.append(entry)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps({"axes": header}, sort_keys=True).encode() + b"\n")
        fh.write(values.tobytes(order="C"))


def read_grid(path):
    """Return ``(axes, values, nodes)``."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise GridFileError(f"{path}: not a grid file (bad magic)")
    rest = data[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise GridFileError(f"{path}: truncated header")
    try:
        header = json.loads(rest[:nl])
        axes = [Axis(e["name"], float(e["lo"]), float(e["hi"]), int(e["n"]), bool(e.get("periodic", False)))
                for e in header["axes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise GridFileError(f"{path}: malformed header ({exc})") from None
    nodes = [np.array(e["nodes"]) if "nodes" in e else None for e in header["axes"]]
    payload = rest[nl + 1:]
    count = int(np.prod([a.n for a in axes]))
    if len(payload) != 8 * count:
        raise GridFileError(f"{path}: expected {count} float64 values, found {len(payload) / 8:g}")
    values = np.frombuffer(payload, dtype="<f8").reshape(tuple(a.n for a in axes)).astype(float)
    return axes, values, nodes


class _SplineTable:
    """Tensor-product cubic spline through tabulated values (periodic axes wrap).

    Coefficients are built one axis at a time; the result is C^2, so finite
    differences of it, and Fenchel duals of strictly convex tables, behave.
    """

    def __init__(self, axes, values):
        self.axes = tuple(axes)
        c = np.asarray(values, dtype=float)
        knots, degrees = [], []
        for i, ax in enumerate(self.axes):
            x = ax.nodes
            if ax.periodic:
                x = np.append(x, ax.hi)
                c = np.concatenate([c, np.take(c, [0], axis=i)], axis=i)
            k = min(3, len(x) - 1)
            spl = make_interp_spline(x, c, k=k, axis=i, bc_type="periodic" if ax.periodic and k > 1 else None)
            c = np.moveaxis(spl.c, 0, i)
            knots.append(spl.t)
            degrees.append(k)
        self.spline = NdBSpline(tuple(knots), c, tuple(degrees), extrapolate=True)

    def __call__(self, coords):
        coords = np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in coords])
        cols = []
        for ax, x in zip(self.axes, coords):
            cols.append(ax.lo + np.mod(x - ax.lo, ax.hi - ax.lo) if ax.periodic else x)
        pts = np.stack(cols, axis=-1)
        return self.spline(pts.reshape(-1, len(cols))).reshape(pts.shape[:-1])


class _TabulatedHamiltonian:
    def __init__(self, axes, values, dim, interpolation="cubic"):
        if interpolation == "cubic":
            self.table = _SplineTable(axes, values)
        elif interpolation == "linear":
            self.table = GridFunction(axes, values, extrapolate=True)
        else:
            raise ValueError(f"unknown interpolation {interpolation!r}")
        self.names = [a.name for a in axes]
        self.dim = dim

    def __call__(self, t, q, p):
        shape = np.broadcast_shapes(np.shape(q)[:-1], np.shape(p)[:-1], np.shape(t))
        coords = []
        for name in self.names:
            if name == "t":
                coords.append(np.broadcast_to(np.mod(t, 1.0), shape))
            elif name[0] == "q":
                coords.append(np.broadcast_to(q[..., int(name[1:]) - 1], shape))
            else:
                coords.append(np.broadcast_to(p[..., int(name[1:]) - 1], shape))
        return self.table(coords)


def hamiltonian_from_grid(path, tonelli: bool = False, fiber_radius: float | None = None,
                          name: str | None = None, interpolation: str = "cubic") -> HamiltonianSpec:
    """Hamiltonian from a grid file with axes among t, q1.., p1..

    q axes must be periodic on [0, 1); a t axis, if present, likewise.
    ``interpolation`` is ``"cubic"`` (tensor spline, the default; smooth
    enough for the action minimizer) or ``"linear"`` (multilinear).
    """
    axes, values, nodes = read_grid(path)
    if any(n is not None for n in nodes):
        raise GridFileError(f"{path}: Hamiltonian tables need uniform axes")
    names = [a.name for a in axes]
    qs = sorted(int(n[1:]) for n in names if n.startswith("q"))
    ps = sorted(int(n[1:]) for n in names if n.startswith("p"))
    dim = len(ps)
    if dim == 0 or ps != list(range(1, dim + 1)) or any(i > dim for i in qs):
        raise GridFileError(f"{path}: axes {names} do not describe a Hamiltonian on T*T^n")
    for a in axes:
        if a.name in ("t",) or a.name.startswith("q"):
            if not a.periodic or a.lo != 0.0 or a.hi != 1.0:
                raise GridFileError(f"{path}: axis {a.name!r} must be periodic on [0, 1)")
        elif not a.name.startswith("p"):
            raise GridFileError(f"{path}: unknown axis {a.name!r}")
    radius = fiber_radius
    if radius is None:
        radius = min(max(abs(a.lo), abs(a.hi)) for a in axes if a.name.startswith("p"))
    return HamiltonianSpec(dim=dim, eval=_TabulatedHamiltonian(axes, values, dim, interpolation), autonomous="t" not in names,
                           tonelli=tonelli, fiber_radius=float(radius), name=name or Path(path).stem)
