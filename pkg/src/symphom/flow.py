"""RK4 integration of Hamiltonian flows with action and variational equations.

Sign convention: q' = dH/dp, p' = -dH/dq.  The action carried along is
``s' = <p, q'> - H`` so that the Hamiltonian action of an arc from q0 to q1
is ``int H dt - int p dq = -s``.
"""
from __future__ import annotations

import numpy as np

from .geometry import grad_p, grad_q

__all__ = ["vector_field", "phase_hessian", "flow", "FlowResult", "default_substeps"]

_H = 1e-4


def vector_field(H, t, q, p):
    dq = grad_p(H, t, q, p, h=_H, richardson=True)
    dp = -grad_q(H, t, q, p, h=_H, richardson=True)
    return dq, dp


def phase_hessian(H, t, q, p, h: float = 1e-3):
    """Second derivatives of H in z = (q, p), shape (..., 2n, 2n)."""
    n = H.dim
    z = np.concatenate(np.broadcast_arrays(q, p), axis=-1)
    f = lambda x: H(t, x[..., :n], x[..., n:])
    f0 = f(z)
    m = 2 * n
    out = np.empty(z.shape + (m,))
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = h
        out[..., i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / (h * h)
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = h
            v = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * h * h)
            out[..., i, j] = v
            out[..., j, i] = v
    return out


class FlowResult:
    __slots__ = ("q", "p", "action", "jacobian")

    def __init__(self, q, p, action, jacobian):
        self.q = q
        self.p = p
        self.action = action
        self.jacobian = jacobian


def default_substeps(tau: float) -> int:
    return max(8, int(np.ceil(abs(tau) * 64)))


def _rhs(H, t, q, p, J):
    dq, dp = vector_field(H, t, q, p)
    ds = np.sum(p * dq, axis=-1) - H(t, q, p)
    dJ = None
    if J is not None:
        n = H.dim
        hess = phase_hessian(H, t, q, p)
        # linearization of (H_p, -H_q) in z = (q, p)
        A = np.concatenate([hess[..., n:, :], -hess[..., :n, :]], axis=-2)
        dJ = A @ J
    return dq, dp, ds, dJ


def flow(H, t0: float, tau: float, q, p, substeps: int | None = None, jacobian: bool = False) -> FlowResult:
    """Time-tau map from (q, p) at time t0, vectorized over leading axes."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    q, p = np.broadcast_arrays(q, p)
    q = q.copy()
    p = p.copy()
    n = H.dim
    m = substeps or default_substeps(tau)
    dt = tau / m
    s = np.zeros(q.shape[:-1])
    J = None
    if jacobian:
        J = np.broadcast_to(np.eye(2 * n), q.shape[:-1] + (2 * n, 2 * n)).copy()
    t = float(t0)
    for _ in range(m):
        k1 = _rhs(H, t, q, p, J)
        k2 = _rhs(H, t + dt / 2, q + dt / 2 * k1[0], p + dt / 2 * k1[1],
                  None if J is None else J + dt / 2 * k1[3])
        k3 = _rhs(H, t + dt / 2, q + dt / 2 * k2[0], p + dt / 2 * k2[1],
                  None if J is None else J + dt / 2 * k2[3])
        k4 = _rhs(H, t + dt, q + dt * k3[0], p + dt * k3[1], None if J is None else J + dt * k3[3])
        q = q + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        s = s + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if J is not None:
            J = J + dt / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        t += dt
    return FlowResult(q, p, s, J)
