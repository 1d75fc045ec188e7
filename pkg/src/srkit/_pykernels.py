"""Pure-NumPy kernels, valid for any :class:`~srkit.model.ChartModel`.

These mirror the compiled routines in ``_ckernels.pyx`` one for one and are
used when the extension is unavailable, for non-builtin models, or when the
python backend is forced.
"""

from __future__ import annotations

import numpy as np


def hamilton_rhs(model, q, p):
    F = model.fields(q)[:, : model.m]
    J = model.jacobian(q)[: model.m]
    u = p @ F
    w = np.einsum("a,iab->ib", p, J)
    return F @ u, -(u @ w)


def hamilton_linear(model, q, p):
    n, m = model.n, model.m
    F = model.fields(q)[:, :m]
    J = model.jacobian(q)[:m]
    Hs = model.hessian(q)[:m]
    u = p @ F
    w = np.einsum("a,iab->ib", p, J)
    K = np.einsum("a,iabc->ibc", p, Hs)
    uJ = np.einsum("i,iab->ab", u, J)
    A = np.empty((2 * n, 2 * n))
    A[:n, :n] = F @ w + uJ
    A[:n, n:] = F @ F.T
    A[n:, :n] = -(w.T @ w + np.einsum("i,ibc->bc", u, K))
    A[n:, n:] = -(w.T @ F.T + uJ.T)
    return A


def _aug(model, y, Y):
    n = model.n
    q, p = y[:n], y[n:]
    dq, dp = hamilton_rhs(model, q, p)
    dy = np.concatenate([dq, dp])
    if Y is None:
        return dy, None
    return dy, hamilton_linear(model, q, p) @ Y


def hamilton_flow(model, q0, p0, t0, t1, nsteps, stm=False):
    """Classical RK4 on Hamilton's equations (and optionally the variational system).

    Returns ``(T, Q, P, Phi)`` where ``Phi`` is the final ``(2n, 2n)`` state
    transition matrix or ``None``.
    """
    n = model.n
    T = np.linspace(t0, t1, nsteps + 1)
    Y = np.empty((nsteps + 1, 2 * n))
    y = np.concatenate([np.asarray(q0, float), np.asarray(p0, float)])
    Phi = np.eye(2 * n) if stm else None
    Y[0] = y
    for j in range(nsteps):
        h = T[j + 1] - T[j]
        k1, K1 = _aug(model, y, Phi)
        k2, K2 = _aug(model, y + 0.5 * h * k1, None if Phi is None else Phi + 0.5 * h * K1)
        k3, K3 = _aug(model, y + 0.5 * h * k2, None if Phi is None else Phi + 0.5 * h * K2)
        k4, K4 = _aug(model, y + h * k3, None if Phi is None else Phi + h * K3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if Phi is not None:
            Phi = Phi + h / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
        Y[j + 1] = y
    return T, Y[:, :n].copy(), Y[:, n:].copy(), Phi


def hamilton_aug_rhs(model, y):
    """Right-hand side of state plus flattened variational matrix (for adaptive solvers)."""
    n2 = 2 * model.n
    dy, dY = _aug(model, y[:n2], y[n2:].reshape(n2, n2))
    return np.concatenate([dy, dY.ravel()])


def hamilton_state_rhs(model, y):
    n = model.n
    dq, dp = hamilton_rhs(model, y[:n], y[n:])
    return np.concatenate([dq, dp])


def _ctrl(model, q, c, M, B):
    F = model.fields(q)
    dq = F @ c
    if M is None:
        return dq, None, None
    A = np.einsum("i,iab->ab", c, model.jacobian(q))
    return dq, A @ M, A @ B + F


def control_flow(model, q0, h, dt, substeps=1, want_phi=False, want_sens=False):
    """RK4 integration of dq/dt = sum_i h_i X_i(q) with piecewise-constant controls.

    Returns ``(Q, Phi, sens)``: nodes ``(N+1, n)``; discrete fundamental
    solution at nodes ``(N+1, n, n)`` when ``want_phi``; and
    ``sens[j] = d q_N / d h_j`` ``(N, n, n)`` when ``want_sens``.
    """
    n = model.n
    h = np.asarray(h, float)
    N = h.shape[0]
    Q = np.empty((N + 1, n))
    q = np.asarray(q0, float).copy()
    Q[0] = q
    track = want_phi or want_sens
    Phi = np.empty((N + 1, n, n)) if track else None
    Ms = np.empty((N, n, n)) if want_sens else None
    Bs = np.empty((N, n, n)) if want_sens else None
    if track:
        Phi[0] = np.eye(n)
    for j in range(N):
        c = h[j]
        s = dt[j] / substeps
        M = np.eye(n) if track else None
        B = np.zeros((n, n)) if track else None
        for _ in range(substeps):
            k1, K1, L1 = _ctrl(model, q, c, M, B)
            if track:
                k2, K2, L2 = _ctrl(model, q + 0.5 * s * k1, c, M + 0.5 * s * K1, B + 0.5 * s * L1)
                k3, K3, L3 = _ctrl(model, q + 0.5 * s * k2, c, M + 0.5 * s * K2, B + 0.5 * s * L2)
                k4, K4, L4 = _ctrl(model, q + s * k3, c, M + s * K3, B + s * L3)
                M = M + s / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
                B = B + s / 6.0 * (L1 + 2 * L2 + 2 * L3 + L4)
            else:
                k2 = _ctrl(model, q + 0.5 * s * k1, c, None, None)[0]
                k3 = _ctrl(model, q + 0.5 * s * k2, c, None, None)[0]
                k4 = _ctrl(model, q + s * k3, c, None, None)[0]
            q = q + s / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Q[j + 1] = q
        if track:
            Phi[j + 1] = M @ Phi[j]
        if want_sens:
            Ms[j] = M
            Bs[j] = B
    sens = None
    if want_sens:
        sens = np.empty((N, n, n))
        P = np.eye(n)
        for j in range(N - 1, -1, -1):
            sens[j] = P @ Bs[j]
            P = P @ Ms[j]
    return Q, (Phi if want_phi else None), sens
