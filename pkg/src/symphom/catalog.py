"""Standard Hamiltonians used by the demos, the axiom battery and the tests."""
from __future__ import annotations

import numpy as np

from .geometry import HamiltonianSpec, direct_sum, from_expression

__all__ = [
    "kinetic",
    "pendulum",
    "quartic",
    "zero",
    "constant",
    "plateau",
    "product_kinetic_pendulum",
    "quartic_kinetic",
    "kinetic_plus_quartic",
    "PENDULUM_PLATEAU_EDGE",
]

# |a| <= 4/pi is the flat part of the pendulum alpha function
PENDULUM_PLATEAU_EDGE = 4.0 / np.pi


def kinetic(dim: int = 1) -> HamiltonianSpec:
    text = "0.5*norm2(p)" if dim > 1 else "0.5*p1^2"
    return from_expression(text, dim, tonelli=True, p_growth=1.0, name="kinetic")


def pendulum(amplitude: float = 1.0) -> HamiltonianSpec:
    return from_expression(f"0.5*p1^2 + {amplitude!r}*cos(2*pi*q1)", 1, tonelli=True, p_growth=1.0,
                           name="pendulum" if amplitude == 1.0 else f"pendulum({amplitude:g})")


def quartic() -> HamiltonianSpec:
    """1/4 p^4 plus a potential whose maximum sits off any dyadic grid."""
    return from_expression("0.25*p1^4 + 0.8*cos(2*pi*q1) + 0.2*sin(4*pi*q1)", 1, tonelli=True,
                           fiber_radius=3.0, p_growth=0.0, name="quartic")


def quartic_kinetic() -> HamiltonianSpec:
    """1/4 p^4 on T^1 (no potential)."""
    return from_expression("0.25*p1^4", 1, tonelli=True, fiber_radius=3.0, p_growth=0.0, name="quartic_kinetic")


def kinetic_plus_quartic() -> HamiltonianSpec:
    """1/2 p^2 + 1/4 p^4; both summands depend on p only, so they Poisson-commute."""
    return from_expression("0.5*p1^2 + 0.25*p1^4", 1, tonelli=True, fiber_radius=3.0, p_growth=0.0,
                           name="kinetic_plus_quartic")


def zero(dim: int = 1) -> HamiltonianSpec:
    return HamiltonianSpec(dim=dim, eval=_Constant(0.0), name="zero")


def constant(c: float, dim: int = 1) -> HamiltonianSpec:
    return HamiltonianSpec(dim=dim, eval=_Constant(float(c)), name=f"const({c:g})")


class _Constant:
    def __init__(self, c):
        self.c = c

    def __call__(self, t, q, p):
        shape = np.broadcast_shapes(np.shape(q)[:-1], np.shape(p)[:-1], np.shape(t))
        return np.full(shape, self.c)


def _smoothstep(x):
    # C^infinity transition from 1 (x <= 0) to 0 (x >= 1)
    x = np.clip(x, 0.0, 1.0)
    a = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
    b = np.where(x > 0.0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
    return a / (a + b)


class _Plateau:
    def __init__(self, c, inner, outer):
        self.c = float(c)
        self.inner = float(inner)
        self.outer = float(outer)

    def __call__(self, t, q, p):
        r = np.sqrt(np.sum(np.asarray(p) ** 2, axis=-1))
        out = self.c * _smoothstep((r - self.inner) / (self.outer - self.inner))
        shape = np.broadcast_shapes(np.shape(q)[:-1], np.shape(p)[:-1], np.shape(t))
        return np.broadcast_to(out, shape).copy()


def plateau(c: float, inner: float = 0.5, outer: float = 1.5, dim: int = 1) -> HamiltonianSpec:
    """Compactly supported F(p) equal to c for |p| <= inner and 0 for |p| >= outer."""
    return HamiltonianSpec(dim=dim, eval=_Plateau(c, inner, outer), fiber_radius=outer + 1.0,
                           name=f"plateau({c:g})")


def product_kinetic_pendulum() -> HamiltonianSpec:
    """1/2 p1^2 + (1/2 p2^2 + cos 2 pi q2) on T^2."""
    return direct_sum(kinetic(1), pendulum())
