"""Normal geodesics: the sub-Riemannian Hamiltonian and its flow.

With an orthonormal horizontal frame the Hamiltonian is
``H(q, p) = 1/2 * sum_i (p . X_i(q))**2`` over the horizontal fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import _pykernels, kernels
from .errors import OutOfChart, StepFailure
from .model import ChartModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegratorOptions:
    """``method`` is ``"rk45"`` (adaptive Dormand-Prince, dense output) or ``"rk4"``."""

    method: str = "rk45"
    steps: int = 200
    rtol: float = 1e-10
    atol: float = 1e-12
    n_out: int = 101
    max_h_drift: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.steps < 1 or self.n_out < 2:
            raise ValueError("steps must be >= 1 and n_out >= 2")


RK4 = IntegratorOptions(method="rk4")


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: Optional[np.ndarray] = None
    model: str = ""
    order: str = ""
    velocity: Optional[np.ndarray] = None
    exit_event: Optional[dict] = None
    info: dict = field(default_factory=dict)

    @property
    def span(self):
        return float(self.t[0]), float(self.t[-1])

    @property
    def endpoint(self):
        return self.q[-1]

    def __len__(self):
        return len(self.t)


def hamiltonian(model: ChartModel, q, p) -> float:
    q = model.check(q)
    u = np.asarray(p, float) @ model.fields(q)[:, : model.m]
    return 0.5 * float(u @ u)


def hamiltonian_along(model: ChartModel, q, p) -> np.ndarray:
    return np.array([0.5 * float(np.sum((pj @ model.fields(qj)[:, : model.m]) ** 2))
                     for qj, pj in zip(q, p)])


def hamilton_rhs(model: ChartModel, q, p):
    """Return ``(dq/dt, dp/dt)`` of the normal-geodesic equations."""
    q = model.check(q)
    return kernels.hamilton_rhs(model, q, np.asarray(p, float))


def _velocities(model, Q, P):
    return np.array([kernels.hamilton_rhs(model, q, p)[0] for q, p in zip(Q, P)])


def outside_chart(model, Q):
    bad = ~np.all(np.isfinite(Q), axis=1)
    if model.domain_box is not None:
        lo, hi = model.domain_box[:, 0], model.domain_box[:, 1]
        bad |= np.any((Q < lo) | (Q > hi), axis=1)
    return np.flatnonzero(bad)


def _locate_exit(model, q, p, t0, h):
    """Bisect the RK4 step ``[t0, t0 + h]`` for the first time leaving the chart."""
    lo, hi = 0.0, 1.0
    state = (q, p)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        _, Q, P, _ = _pykernels.hamilton_flow(model, q, p, t0, t0 + mid * h, 1)
        if len(outside_chart(model, Q[1:])):
            hi = mid
        else:
            lo = mid
            state = (Q[1], P[1])
        if (hi - lo) * abs(h) < 1e-13 * max(1.0, abs(t0)):
            break
    return t0 + lo * h, state


def _finish(model, T, Q, P, order, opts):
    vel = _velocities(model, Q, P)
    H = hamiltonian_along(model, Q, P)
    drift = float(np.max(np.abs(H - H[0]))) if len(H) else 0.0
    info = {"H0": float(H[0]), "h_drift": drift, "backend": kernels.backend_for(model)}
    if opts.max_h_drift is not None and drift > opts.max_h_drift * max(1.0, H[0]):
        log.warning("Hamiltonian drift %.3e exceeds bound %.3e", drift, opts.max_h_drift)
        info["h_drift_exceeded"] = True
    return Trajectory(t=T, q=Q, p=P, model=model.name, order=order, velocity=vel, info=info)


def integrate_geodesic(model: ChartModel, q0, p0, span, opts: IntegratorOptions = IntegratorOptions()):
    """Integrate the normal-geodesic flow from ``(q0, p0)`` over ``span = (a, b)``.

    Raises :class:`OutOfChart` carrying the partial trajectory when the curve
    leaves the domain box, and :class:`StepFailure` if the adaptive step
    underflows.
    """
    q0 = model.check(q0)
    p0 = np.asarray(p0, float)
    if p0.shape != (model.n,):
        raise ValueError(f"expected a {model.n}-covector, got shape {p0.shape}")
    a, b = float(span[0]), float(span[1])
    if a == b:
        return _finish(model, np.array([a]), q0[None], p0[None], opts.method, opts)

    if opts.method == "rk4":
        T, Q, P, _ = kernels.hamilton_flow(model, q0, p0, a, b, opts.steps)
        bad = outside_chart(model, Q)
        if len(bad):
            j = bad[0]
            t_exit, (qe, pe) = _locate_exit(model, Q[j - 1], P[j - 1], T[j - 1], T[j] - T[j - 1])
            T = np.append(T[:j], t_exit)
            Q = np.vstack([Q[:j], qe])
            P = np.vstack([P[:j], pe])
            partial = _finish(model, T, Q, P, "rk4", opts)
            partial = replace(partial, exit_event={"t": t_exit, "q": qe.tolist()})
            raise OutOfChart(f"geodesic left the chart at t={t_exit:.6g}", point=qe,
                             partial=partial, exit_time=t_exit)
        return _finish(model, T, Q, P, "rk4", opts)

    events = None
    if model.domain_box is not None:
        box = model.domain_box

        def leave(t, y):
            q = y[: model.n]
            return float(np.min(np.minimum(q - box[:, 0], box[:, 1] - q)))

        leave.terminal = True
        leave.direction = -1
        events = [leave]
    y0 = np.concatenate([q0, p0])
    sol = solve_ivp(kernels.state_rhs(model), (a, b), y0, method="RK45", rtol=opts.rtol,
                    atol=opts.atol, dense_output=True, events=events)
    if sol.status == -1:
        raise StepFailure(f"adaptive integration failed: {sol.message}")
    t_end = float(sol.t[-1])
    T = np.linspace(a, t_end, opts.n_out)
    Y = sol.sol(T).T
    Y[0], Y[-1] = y0, sol.y[:, -1]
    n = model.n
    traj = _finish(model, T, Y[:, :n].copy(), Y[:, n:].copy(), "rk45-dense", opts)
    if sol.status == 1:
        qe = sol.y[:n, -1]
        traj = replace(traj, exit_event={"t": t_end, "q": qe.tolist()})
        raise OutOfChart(f"geodesic left the chart at t={t_end:.6g}", point=qe,
                         partial=traj, exit_time=t_end)
    return traj


def flow_with_jacobian(model: ChartModel, q0, p0, span, opts: IntegratorOptions = RK4):
    """Endpoint ``(q(b), p(b))`` and ``J = d(q(b), p(b)) / d(q0, p0)``."""
    q0 = model.check(q0)
    p0 = np.asarray(p0, float)
    a, b = float(span[0]), float(span[1])
    n = model.n
    if a == b:
        return q0.copy(), p0.copy(), np.eye(2 * n)
    if opts.method == "rk4":
        _, Q, P, J = kernels.hamilton_flow(model, q0, p0, a, b, opts.steps, stm=True)
        if len(outside_chart(model, Q)):
            raise OutOfChart("geodesic left the chart during linearization", point=Q[-1])
        return Q[-1], P[-1], J
    y0 = np.concatenate([q0, p0, np.eye(2 * n).ravel()])
    sol = solve_ivp(kernels.aug_rhs(model), (a, b), y0, method="RK45",
                    rtol=opts.rtol, atol=opts.atol)
    if sol.status == -1:
        raise StepFailure(f"adaptive integration failed: {sol.message}")
    yb = sol.y[:, -1]
    if not model.contains(yb[:n]):
        raise OutOfChart("geodesic left the chart during linearization", point=yb[:n])
    return yb[:n], yb[n:2 * n], yb[2 * n:].reshape(2 * n, 2 * n)


def flow_linearization(model: ChartModel, q0, p0, span, opts: IntegratorOptions = RK4) -> np.ndarray:
    """``2n x 2n`` Jacobian of the time-``span`` flow map; ``J[:n, n:]`` is dq(b)/dp0."""
    return flow_with_jacobian(model, q0, p0, span, opts)[2]


def lift_residual(model: ChartModel, traj: Trajectory) -> float:
    """Max over nodes of ``|p . X_i - g(dq/dt, X_i)|`` on the horizontal fields."""
    if traj.p is None:
        raise ValueError("trajectory carries no momentum")
    vel = traj.velocity
    if vel is None:
        vel = CubicSpline(traj.t, traj.q, axis=0)(traj.t, 1)
    worst = 0.0
    for q, p, v in zip(traj.q, traj.p, vel):
        F = model.fields(q)
        coeff = np.linalg.solve(F, v)[: model.m]
        worst = max(worst, float(np.max(np.abs(p @ F[:, : model.m] - coeff))))
    return worst
