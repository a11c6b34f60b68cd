"""Spectral invariants of generating functions, read off sublevel persistence.

Run: python demos/generating_function_spectra.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from symphom import catalog
from symphom.gfqi import compose_gf, critical_locus, gf_of_function, negate_flip, one_step_gf
from symphom.persistence import PersistenceGrid, default_grid, spectral_report
from symphom.svg import diagram_plot

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# graph of df: ell_- = min f and ell_+ = max f
S = gf_of_function("cos(2*pi*q1) + 0.4*sin(4*pi*q1)")
r = spectral_report(S, PersistenceGrid(256))
print(f"graph(df):           ell_- = {r.ell_minus:+.5f}   ell_+ = {r.ell_plus:+.5f}")

# one step of the pendulum flow and its two-step composite
P = catalog.pendulum()
step = one_step_gf(P, 0.0, 0.1)
two = compose_gf(step, one_step_gf(P, 0.1, 0.1))
for name, G, grid in (("one step, tau=0.1", step, default_grid(step, base_n=48)),
                      ("two steps", two, default_grid(two, base_n=16, n_core=5, n_shell=1))):
    r = spectral_report(G, grid)
    n = spectral_report(negate_flip(G), grid)
    print(f"{name:20s} ell_- = {r.ell_minus:+.5f}   ell_+ = {r.ell_plus:+.5f}   "
          f"negated: ({n.ell_minus:+.5f}, {n.ell_plus:+.5f})")
    (out / f"diagram_{G.fiber_dim}.svg").write_text(diagram_plot(r.diagram.canonical(), title=name))

# the generated Lagrangian: points (q, p) above a coarse base grid
cloud = critical_locus(step, np.linspace(0, 1, 8, endpoint=False))
for q, p in zip(cloud.q[:, 0], cloud.p[:, 0]):
    print(f"  q={q:.3f}  p={p:+.4f}")
