"""Geodesic boundary-value problems, action and length, and a direct-minimization oracle."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.optimize

from . import kernels
from .endpoint import ControlCurve, curve_to_controls, trapezoid_weights
from .errors import NoConvergence, NonHorizontal, OutOfChart, TransversalityFailure
from .hamflow import (RK4, IntegratorOptions, Trajectory, flow_with_jacobian, hamiltonian_along,
                      integrate_geodesic, outside_chart)
from .model import ChartModel, annihilator_coframe

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# boundary sets


@dataclass(frozen=True, eq=False)
class SubmanifoldSpec:
    """A point, or a regular level set ``{q : G(q) = 0}`` of codimension ``codim``.

    ``anchor`` is a point on (or near) the set used to seed solvers; ``param``
    optionally maps ``(dim,)`` local coordinates to points of the set.
    """

    kind: str
    point: Optional[np.ndarray] = None
    G: Optional[Callable] = None
    jac: Optional[Callable] = None
    codim: int = 0
    anchor: Optional[np.ndarray] = None
    param: Optional[Callable] = None

    @classmethod
    def at(cls, q) -> "SubmanifoldSpec":
        q = np.asarray(q, float)
        return cls(kind="point", point=q, codim=q.size, anchor=q)

    @classmethod
    def level_set(cls, G, codim: int, jac=None, anchor=None, param=None) -> "SubmanifoldSpec":
        return cls(kind="level-set", G=G, jac=jac, codim=int(codim),
                   anchor=None if anchor is None else np.asarray(anchor, float), param=param)

    @property
    def is_point(self) -> bool:
        return self.kind == "point"

    def value(self, q) -> np.ndarray:
        if self.is_point:
            return np.asarray(q, float) - self.point
        return np.atleast_1d(np.asarray(self.G(np.asarray(q, float)), float))

    def jacobian(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        if self.is_point:
            return np.eye(q.size)
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(q), float))
        h = 1e-6 * np.maximum(1.0, np.abs(q))
        cols = []
        for b in range(q.size):
            e = np.zeros(q.size)
            e[b] = h[b]
            cols.append((self.value(q + e) - self.value(q - e)) / (2 * h[b]))
        return np.array(cols).T

    def tangent_basis(self, q) -> np.ndarray:
        """Orthonormal basis of ``ker dG`` from the SVD, each column sign-fixed."""
        JG = self.jacobian(q)
        n = JG.shape[1]
        if self.is_point:
            return np.zeros((n, 0))
        _, s, Vt = np.linalg.svd(JG)
        if s[-1] <= 1e-10 * s[0]:
            raise ValueError(f"level set is not regular at {np.asarray(q).tolist()}")
        basis = Vt[self.codim:].T.copy()
        for j in range(basis.shape[1]):
            col = basis[:, j]
            nz = np.flatnonzero(np.abs(col) > 1e-12)
            if len(nz) and col[nz[0]] < 0:
                basis[:, j] = -col
        return basis

    def project(self, q, iters: int = 50) -> np.ndarray:
        """Gauss-Newton projection of ``q`` onto the set."""
        if self.is_point:
            return self.point.copy()
        q = np.asarray(q, float).copy()
        for _ in range(iters):
            g = self.value(q)
            if np.linalg.norm(g) < 1e-14:
                break
            q = q - np.linalg.lstsq(self.jacobian(q), g, rcond=None)[0]
        return q

    def transversality(self, model: ChartModel, q) -> dict:
        """Certificate for ``T_q S + D_q = T_q M`` via the rank of ``[ker dG | X_h]``."""
        T = self.tangent_basis(q)
        X = model.fields(np.asarray(q, float))[:, : model.m]
        s = np.linalg.svd(np.hstack([T, X]), compute_uv=False)
        rank = int(np.sum(s > 1e-10 * s[0]))
        return {"point": np.asarray(q, float).tolist(), "rank": rank, "n": model.n,
                "sigma_min": float(s[model.n - 1]) if len(s) >= model.n else 0.0,
                "transversal": rank == model.n}


# ---------------------------------------------------------------------------
# functionals


def _horizontal_speeds(model: ChartModel, obj, tol: float):
    """Per-node (trajectory) or per-interval (controls) horizontal speeds and weights."""
    if isinstance(obj, ControlCurve):
        scale = max(1.0, float(np.max(np.abs(obj.h), initial=0.0)))
        if obj.horizontal_defect(model.m) > tol * scale:
            raise NonHorizontal(f"complement controls reach {obj.horizontal_defect(model.m):.3e}")
        return np.linalg.norm(obj.h[:, : model.m], axis=1), obj.dt
    if obj.p is not None:
        u = np.array([p @ model.fields(q)[:, : model.m] for q, p in zip(obj.q, obj.p)])
        return np.linalg.norm(u, axis=1), trapezoid_weights(obj.t)
    return _horizontal_speeds(model, curve_to_controls(model, obj), tol)


def action(model: ChartModel, obj, tol: float = 1e-6) -> float:
    """Sub-Riemannian action ``1/2 int g(dq, dq) dt`` of a horizontal curve."""
    speed, w = _horizontal_speeds(model, obj, tol)
    return 0.5 * float(np.sum(w * speed ** 2))


def length(model: ChartModel, obj, tol: float = 1e-6) -> float:
    speed, w = _horizontal_speeds(model, obj, tol)
    return float(np.sum(w * speed))


# ---------------------------------------------------------------------------
# multiplier


@dataclass(frozen=True, eq=False)
class MultiplierPath:
    t: np.ndarray
    values: np.ndarray
    max_jump: float


def recover_multiplier(model: ChartModel, traj: Trajectory) -> MultiplierPath:
    """``lambda(t) = -p(t) o [theta restricted to the complement]^{-1}`` at every node."""
    if traj.p is None:
        raise ValueError("trajectory carries no momentum")
    k, m = model.k, model.m
    lam = np.empty((len(traj.t), k))
    for j, (q, p) in enumerate(zip(traj.q, traj.p)):
        theta = annihilator_coframe(model, q)
        C = model.fields(q)[:, m:]
        lam[j] = -np.linalg.solve((theta @ C).T, p @ C)
    jump = float(np.max(np.abs(np.diff(lam, axis=0)), initial=0.0))
    return MultiplierPath(t=np.asarray(traj.t), values=lam, max_jump=jump)


def multiplier_velocity_defect(model: ChartModel, traj: Trajectory, mult: MultiplierPath) -> float:
    """Complement coefficients ``p(X_{m+j}) + lambda_j`` of dq/dt with the multiplier substituted."""
    m = model.m
    worst = 0.0
    for q, p, lam in zip(traj.q, traj.p, mult.values):
        C = model.fields(q)[:, m:]
        worst = max(worst, float(np.max(np.abs(p @ C + lam), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# shooting


@dataclass(frozen=True)
class ShootOptions:
    integrator: IntegratorOptions = RK4
    n_seeds: int = 32
    seed: int = 0
    tol: float = 1e-12
    accept: float = 1e-9
    max_iter: int = 50
    dedupe: float = 1e-4
    energy_tol: float = 1e-6
    threads: Optional[int] = None
    extra_seeds: tuple = ()


@dataclass(eq=False)
class BvpSolution:
    trajectory: Optional[Trajectory]
    q0: np.ndarray
    p0: np.ndarray
    boundary_residuals: dict
    multiplier: Optional[MultiplierPath]
    newton_iterations: int
    converged: bool
    action: float = float("nan")
    length: float = float("nan")
    transversality: Optional[dict] = None
    abnormal_verdict: Optional[str] = None

    @property
    def residual(self) -> float:
        return float(max(self.boundary_residuals.values(), default=0.0))

    def to_json(self) -> dict:
        return {"q0": self.q0.tolist(), "p0": self.p0.tolist(), "action": self.action,
                "length": self.length, "residual": self.residual,
                "boundary_residuals": {k: float(v) for k, v in self.boundary_residuals.items()},
                "converged": bool(self.converged), "newton_iterations": self.newton_iterations,
                "abnormal_verdict": self.abnormal_verdict, "transversality": self.transversality}


def _threads(opt) -> int:
    if opt is not None:
        return max(1, int(opt))
    return max(1, int(os.environ.get("SRKIT_THREADS", "1")))


def _newton(fun, x0, tol, max_iter, accept=None):
    """Damped Gauss-Newton with Armijo backtracking on the residual norm.

    A run that stalls (no Armijo step, or out of iterations) still counts as
    converged when its residual is below ``accept``; degenerate targets such as
    conjugate points have a discretization-level residual floor.
    """
    accept = tol if accept is None else max(tol, accept)
    x = np.asarray(x0, float).copy()
    try:
        r, J = fun(x)
    except (OutOfChart, FloatingPointError, np.linalg.LinAlgError):
        return x, np.inf, 0, False
    nr = np.linalg.norm(r)
    it = 0
    while it < max_iter and nr > tol:
        it += 1
        if not np.all(np.isfinite(J)):
            return x, nr, it, False
        d = -np.linalg.lstsq(J, r, rcond=1e-9)[0]
        step = 1.0
        while step >= 1e-6:
            xt = x + step * d
            try:
                rt, Jt = fun(xt)
            except (OutOfChart, FloatingPointError, np.linalg.LinAlgError):
                rt, Jt = None, None
            if rt is not None and np.all(np.isfinite(rt)) and \
                    np.linalg.norm(rt) <= (1 - 1e-4 * step) * nr:
                break
            step *= 0.5
        else:
            return x, nr, it, bool(nr <= accept)
        x, r, J, nr = xt, rt, Jt, np.linalg.norm(rt)
    return x, nr, it, bool(nr <= accept)


def _frame_covector(model, q, coeffs):
    """Covector ``p`` with ``p . X_i(q) = coeffs[i]`` for all n frame fields."""
    return np.linalg.solve(model.fields(q).T, coeffs)


def straight_seed(model: ChartModel, q0, q1, span) -> np.ndarray:
    """Covector whose horizontal part points along the chord from q0 to q1."""
    a, b = span
    F = model.fields(q0)
    c = np.zeros(model.n)
    c[: model.m] = np.linalg.lstsq(F[:, : model.m], (np.asarray(q1) - q0) / (b - a), rcond=None)[0]
    return _frame_covector(model, q0, c)


def random_seeds(model: ChartModel, q0, span, count: int, rng) -> list:
    """Covectors uniform on the unit sphere in frame coordinates, rescaled to H = 1/2."""
    a, b = span
    out = []
    while len(out) < count:
        xi = rng.standard_normal(model.n)
        xi /= np.linalg.norm(xi)
        hn = np.linalg.norm(xi[: model.m])
        if hn < 1e-3:
            continue
        out.append(_frame_covector(model, q0, xi / hn) / (b - a))
    return out


def _finalize(model, q0, p0, span, opts, residuals, iters, converged):
    try:
        traj = integrate_geodesic(model, q0, p0, span, opts.integrator)
    except OutOfChart as exc:
        traj = exc.partial
    mult = recover_multiplier(model, traj) if traj is not None and model.k else None
    act = action(model, traj) if traj is not None else float("nan")
    ln = length(model, traj) if traj is not None else float("nan")
    return BvpSolution(trajectory=traj, q0=np.asarray(q0, float), p0=np.asarray(p0, float),
                       boundary_residuals=residuals, multiplier=mult, newton_iterations=iters,
                       converged=converged, action=act, length=ln)


def _same_curve(s, k, radius):
    if s.trajectory is None or k.trajectory is None or len(s.trajectory) != len(k.trajectory):
        return False
    return float(np.max(np.abs(s.trajectory.q - k.trajectory.q))) <= radius


def _resolved(model, sols, tol):
    """Drop solutions whose Hamiltonian drifts by more than ``tol`` (relative).

    A fixed-step grid can hit the target with a lift that rotates too fast to
    be resolved; such a lift is not a geodesic of the continuous flow.
    """
    kept = []
    for s in sols:
        traj = s.trajectory
        H = hamiltonian_along(model, traj.q, traj.p)
        drift = float(np.max(np.abs(H - H[0]))) / max(1.0, float(H[0]))
        if drift <= tol:
            kept.append(s)
        else:
            log.debug("discarding unresolved solution: energy drift %.2e", drift)
    return kept


def _dedupe(sols, span, radius):
    """Merge solutions with close normalized ``p0`` or coinciding curves.

    Among duplicates the smallest ``|p0|`` is kept, so covector components
    that do not affect the curve are reported as zero where possible.
    """
    T = span[1] - span[0]
    kept = []
    for s in sorted(sols, key=lambda s: (s.action, s.residual)):
        for i, k in enumerate(kept):
            close_p = (np.linalg.norm((s.p0 - k.p0) * T) <= radius
                       and np.allclose(s.q0, k.q0, atol=radius))
            if close_p or _same_curve(s, k, radius):
                if np.linalg.norm(s.p0) < np.linalg.norm(k.p0):
                    kept[i] = s
                break
        else:
            kept.append(s)
    return sorted(kept, key=lambda s: s.action)


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def shoot_point_to_point(model: ChartModel, q0, q1, span=(0.0, 1.0),
                         opts: ShootOptions = ShootOptions()) -> list:
    """All distinct converged normal geodesics from ``q0`` to ``q1`` found by multistart Newton.

    Solutions are sorted by action. Raises :class:`NoConvergence` (with the
    best attempt in ``.best``) when no seed converges.
    """
    q0, q1 = model.check(q0), model.check(q1)
    span = (float(span[0]), float(span[1]))
    n = model.n

    def fun(p):
        qb, _, J = flow_with_jacobian(model, q0, p, span, opts.integrator)
        return qb - q1, J[:n, n:]

    rng = np.random.default_rng(opts.seed)
    seeds = [straight_seed(model, q0, q1, span)]
    seeds += [np.asarray(s, float) for s in opts.extra_seeds]
    seeds += random_seeds(model, q0, span, opts.n_seeds, rng)

    scale = max(1.0, np.linalg.norm(q1 - q0))

    def run(seed):
        return _newton(fun, seed, opts.tol * scale, opts.max_iter, opts.accept * scale)

    results = _map(run, seeds, _threads(opts.threads))
    sols, best = [], None
    if np.linalg.norm(q1 - q0) <= opts.tol:
        sols.append(_finalize(model, q0, np.zeros(n), span, opts, {"endpoint": 0.0}, 0, True))
    for p, nr, it, ok in results:
        if ok:
            sols.append(_finalize(model, q0, p, span, opts, {"endpoint": float(nr)}, it, True))
        elif np.isfinite(nr) and (best is None or nr < best[1]):
            best = (p, nr, it)
    sols = _resolved(model, sols, opts.energy_tol)
    if not sols:
        attempt = None
        if best is not None:
            attempt = _finalize(model, q0, best[0], span, opts, {"endpoint": float(best[1])},
                                best[2], False)
        raise NoConvergence("no shooting seed converged", best=attempt)
    return _dedupe(sols, span, opts.dedupe)


def _dJt_mu(S: SubmanifoldSpec, q, mu):
    """Derivative in q of ``dG(q)^T mu`` by central differences."""
    n = q.size
    h = 1e-6 * np.maximum(1.0, np.abs(q))
    out = np.empty((n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = h[b]
        out[:, b] = (S.jacobian(q + e).T @ mu - S.jacobian(q - e).T @ mu) / (2 * h[b])
    return out


def _covector_residual(S: SubmanifoldSpec, q, p) -> float:
    if S.is_point:
        return 0.0
    T = S.tangent_basis(q)
    return float(np.max(np.abs(p @ T), initial=0.0))


def shoot_to_submanifolds(model: ChartModel, P: SubmanifoldSpec, Q: SubmanifoldSpec, span=(0.0, 1.0),
                          opts: ShootOptions = ShootOptions()) -> list:
    """Normal geodesics from ``P`` to ``Q`` whose lift annihilates ``TP`` at the start and ``TQ`` at the end.

    Covector conditions are imposed as ``p = dG^T mu`` with multipliers ``mu``
    as extra unknowns; reported residuals use the SVD tangent basis.
    """
    if P.is_point and Q.is_point:
        return shoot_point_to_point(model, P.point, Q.point, span, opts)
    span = (float(span[0]), float(span[1]))
    n = model.n
    rP = 0 if P.is_point else P.codim
    rQ = 0 if Q.is_point else Q.codim

    q_start = P.point if P.is_point else P.project(P.anchor if P.anchor is not None else np.zeros(n))
    q_target = Q.point if Q.is_point else Q.project(Q.anchor if Q.anchor is not None else q_start)
    _precheck_transversal(model, P, Q, q_start, q_target)

    def split(z):
        i = 0
        if P.is_point:
            q0 = P.point
        else:
            q0, i = z[:n], n
        p0 = z[i:i + n]
        i += n
        muP = z[i:i + rP]
        muQ = z[i + rP:i + rP + rQ]
        return q0, p0, muP, muQ

    def fun(z):
        q0, p0, muP, muQ = split(z)
        qb, pb, J = flow_with_jacobian(model, q0, p0, span, opts.integrator)
        Jqq, Jqp, Jpq, Jpp = J[:n, :n], J[:n, n:], J[n:, :n], J[n:, n:]
        nz = len(z)
        rows, jac = [], []
        off_p = 0 if P.is_point else n
        off_mu = off_p + n
        if not P.is_point:
            JG = P.jacobian(q0)
            rows.append(P.value(q0))
            blk = np.zeros((rP, nz))
            blk[:, :n] = JG
            jac.append(blk)
            rows.append(p0 - JG.T @ muP)
            blk = np.zeros((n, nz))
            blk[:, :n] = -_dJt_mu(P, q0, muP)
            blk[:, off_p:off_p + n] = np.eye(n)
            blk[:, off_mu:off_mu + rP] = -JG.T
            jac.append(blk)
        if Q.is_point:
            rows.append(qb - Q.point)
            blk = np.zeros((n, nz))
            if not P.is_point:
                blk[:, :n] = Jqq
            blk[:, off_p:off_p + n] = Jqp
            jac.append(blk)
        else:
            JG = Q.jacobian(qb)
            rows.append(Q.value(qb))
            blk = np.zeros((rQ, nz))
            if not P.is_point:
                blk[:, :n] = JG @ Jqq
            blk[:, off_p:off_p + n] = JG @ Jqp
            jac.append(blk)
            D = _dJt_mu(Q, qb, muQ)
            rows.append(pb - JG.T @ muQ)
            blk = np.zeros((n, nz))
            if not P.is_point:
                blk[:, :n] = Jpq - D @ Jqq
            blk[:, off_p:off_p + n] = Jpp - D @ Jqp
            blk[:, off_mu + rP:off_mu + rP + rQ] = -JG.T
            jac.append(blk)
        return np.concatenate(rows), np.vstack(jac)

    def initial(p0):
        z = [] if P.is_point else [q_start]
        z.append(p0)
        if rP:
            z.append(np.linalg.lstsq(P.jacobian(q_start).T, p0, rcond=None)[0])
        if rQ:
            z.append(np.linalg.lstsq(Q.jacobian(q_target).T, p0, rcond=None)[0])
        return np.concatenate(z)

    rng = np.random.default_rng(opts.seed)
    seeds = [straight_seed(model, q_start, q_target, span)]
    seeds += [np.asarray(s, float) for s in opts.extra_seeds]
    seeds += random_seeds(model, q_start, span, opts.n_seeds, rng)

    def run(p0):
        return _newton(fun, initial(p0), opts.tol, opts.max_iter, opts.accept)

    results = _map(run, seeds, _threads(opts.threads))
    sols, best = [], None
    for z, nr, it, ok in results:
        q0, p0, _, _ = split(z)
        if ok:
            sols.append(_submanifold_solution(model, P, Q, q0, p0, span, opts, it, True))
        elif np.isfinite(nr) and (best is None or nr < best[1]):
            best = (z, nr, it)
    sols = _resolved(model, sols, opts.energy_tol)
    if not sols:
        attempt = None
        if best is not None:
            q0, p0, _, _ = split(best[0])
            attempt = _submanifold_solution(model, P, Q, q0, p0, span, opts, best[2], False,
                                            check=False)
        raise NoConvergence("no shooting seed converged", best=attempt)
    return _dedupe(sols, span, opts.dedupe)


def _precheck_transversal(model, P, Q, q_start, q_target):
    certs = []
    for S, q in ((Q, q_target), (P, q_start)):
        if not S.is_point:
            cert = S.transversality(model, q)
            if cert["transversal"]:
                return
            certs.append(cert)
    if certs:
        raise TransversalityFailure(
            f"boundary set not transversal to the distribution at {certs[0]['point']}",
            point=certs[0]["point"], certificate=certs[0])


def _submanifold_solution(model, P, Q, q0, p0, span, opts, it, converged, check=True):
    sol = _finalize(model, q0, p0, span, opts, {}, it, converged)
    traj = sol.trajectory
    qb, pb = traj.q[-1], traj.p[-1]
    res = {"start": float(np.linalg.norm(P.value(q0))), "end": float(np.linalg.norm(Q.value(qb))),
           "start_covector": _covector_residual(P, q0, p0),
           "end_covector": _covector_residual(Q, qb, pb)}
    sol.boundary_residuals = res
    cert = None
    for S, q in ((Q, qb), (P, q0)):
        if not S.is_point:
            cert = S.transversality(model, q)
            if cert["transversal"]:
                break
    sol.transversality = cert
    if check and cert is not None and not cert["transversal"]:
        raise TransversalityFailure(f"boundary set not transversal at {cert['point']}",
                                    point=cert["point"], certificate=cert)
    return sol


# ---------------------------------------------------------------------------
# direct minimization oracle


@dataclass(frozen=True)
class MinimizeOptions:
    span: tuple = (0.0, 1.0)
    n_starts: int = 4
    seed: int = 0
    penalties: Sequence[float] = (1e1, 1e3, 1e5, 1e7)
    maxiter: int = 2000
    start_set: Optional[SubmanifoldSpec] = None
    tol: float = 1e-10


@dataclass(eq=False)
class MinimizeResult:
    controls: ControlCurve
    action: float
    length: float
    endpoint_residual: float
    converged: bool
    starts: list = field(default_factory=list)


def _smooth_random_controls(rng, N, m, grid, scale):
    t = 0.5 * (grid[1:] + grid[:-1])
    t = (t - grid[0]) / (grid[-1] - grid[0])
    H = np.zeros((N, m))
    for k in range(1, 4):
        H += np.outer(np.sin(np.pi * k * t), rng.standard_normal(m)) / k
        H += np.outer(np.cos(np.pi * k * t), rng.standard_normal(m)) / k
    return scale * H


def _min_one(model, q0, q1, grid, H0, opts, N):
    n, m = model.n, model.m
    dt = np.diff(grid)
    S = opts.start_set
    free_start = S is not None and not S.is_point

    def unpack(x):
        u = x[: N * m].reshape(N, m)
        qs = x[N * m:] if free_start else q0
        h = np.zeros((N, n))
        h[:, :m] = u
        return u, h, qs

    def objective(x, mu):
        u, h, qs = unpack(x)
        Q, Phi, sens = kernels.control_flow(model, qs, h, dt, 1, want_phi=free_start, want_sens=True)
        r = Q[-1] - q1
        if not np.all(np.isfinite(r)):
            return np.inf, np.zeros_like(x)
        f = 0.5 * float(np.sum(dt[:, None] * u ** 2)) + 0.5 * mu * float(r @ r)
        g_u = dt[:, None] * u + mu * np.einsum("a,jab->jb", r, sens[:, :, :m])
        grad = [g_u.ravel()]
        if free_start:
            gS = S.value(qs)
            JG = S.jacobian(qs)
            f += 0.5 * mu * float(gS @ gS)
            grad.append(mu * (Phi[-1].T @ r + JG.T @ gS))
        return f, np.concatenate(grad)

    x = H0.ravel()
    if free_start:
        x = np.concatenate([x, q0])
    for mu in opts.penalties:
        res = scipy.optimize.minimize(objective, x, args=(mu,), jac=True, method="L-BFGS-B",
                                      options={"maxiter": opts.maxiter, "gtol": 1e-12, "ftol": 1e-15})
        x = res.x
    # project onto the endpoint (and start-set) constraints with minimum-norm updates
    for _ in range(30):
        u, h, qs = unpack(x)
        Q, Phi, sens = kernels.control_flow(model, qs, h, dt, 1, want_phi=free_start, want_sens=True)
        r = Q[-1] - q1
        B = [sens[:, :, :m].transpose(1, 0, 2).reshape(n, N * m)]
        rows = [r]
        if free_start:
            B[0] = np.hstack([B[0], Phi[-1]])
            gS = S.value(qs)
            JG = S.jacobian(qs)
            B.append(np.hstack([np.zeros((len(gS), N * m)), JG]))
            rows.append(gS)
        B = np.vstack(B)
        rr = np.concatenate(rows)
        if np.linalg.norm(rr) < opts.tol:
            break
        W = np.ones(len(x))
        W[: N * m] = np.repeat(dt, m)
        # weighted minimum-norm correction: min dx^T W dx s.t. B dx = -rr
        BW = B / W
        x = x - BW.T @ np.linalg.lstsq(BW @ B.T, rr, rcond=None)[0]
    u, h, qs = unpack(x)
    c = ControlCurve(grid=grid, h=h, q0=qs)
    Q = kernels.control_flow(model, qs, h, dt)[0]
    resid = float(np.linalg.norm(Q[-1] - q1))
    if free_start:
        resid = max(resid, float(np.linalg.norm(S.value(qs))))
    return MinimizeResult(controls=c, action=action(model, c), length=length(model, c),
                          endpoint_residual=resid, converged=resid < 1e-8)


def direct_minimize(model: ChartModel, q0, q1, N: int = 256,
                    opts: MinimizeOptions = MinimizeOptions()) -> MinimizeResult:
    """Minimize the discretized action over horizontal piecewise-constant controls.

    Penalty continuation with L-BFGS, followed by a minimum-norm projection onto
    the endpoint constraint; the best of ``n_starts`` starts is returned. With
    ``opts.start_set`` a level set, the start point is a free variable penalized
    onto that set.
    """
    q0, q1 = model.check(q0), model.check(q1)
    grid = np.linspace(opts.span[0], opts.span[1], N + 1)
    m = model.m
    if np.linalg.norm(q1 - q0) == 0.0 and (opts.start_set is None or opts.start_set.is_point):
        c = ControlCurve(grid=grid, h=np.zeros((N, model.n)), q0=q0)
        return MinimizeResult(controls=c, action=0.0, length=0.0, endpoint_residual=0.0,
                              converged=True)
    rng = np.random.default_rng(opts.seed)
    T = opts.span[1] - opts.span[0]
    chord = np.linalg.lstsq(model.fields(q0)[:, :m], (q1 - q0) / T, rcond=None)[0]
    scale = max(np.linalg.norm(q1 - q0) / T, 1e-3) ** 0.5
    starts = [np.tile(chord, (N, 1)) + _smooth_random_controls(rng, N, m, grid, 0.1 * scale)]
    for _ in range(opts.n_starts - 1):
        starts.append(_smooth_random_controls(rng, N, m, grid, scale))
    results = [_min_one(model, q0, q1, grid, H0, opts, N) for H0 in starts]
    ok = [r for r in results if r.converged] or results
    best = min(ok, key=lambda r: r.action)
    best.starts = [(r.action, r.endpoint_residual) for r in results]
    if not best.converged:
        raise NoConvergence("direct minimization did not satisfy the endpoint constraint", best=best)
    return best


def estimate_costate(model: ChartModel, c: ControlCurve):
    """Initial covector of a normal extremal matching horizontal controls ``c``.

    Least-squares fit of ``u_j = (d q_N / d h_j)^T nu / dt_j``; returns
    ``(p0, relative_fit_residual)`` with ``p0 = Phi_b^T nu``.
    """
    m = model.m
    Q, Phi, sens = kernels.control_flow(model, c.q0, c.h, c.dt, 1, want_phi=True, want_sens=True)
    A = (sens[:, :, :m] / c.dt[:, None, None]).transpose(0, 2, 1).reshape(-1, model.n)
    u = c.h[:, :m].ravel()
    nu = np.linalg.lstsq(A, u, rcond=None)[0]
    fit = float(np.linalg.norm(A @ nu - u) / max(np.linalg.norm(u), 1e-300))
    return Phi[-1].T @ nu, fit


# ---------------------------------------------------------------------------
# ball sampling


@dataclass(eq=False)
class BallSample:
    points: np.ndarray
    lengths: np.ndarray
    covectors: np.ndarray
    exited: int = 0


def ball_sample(model: ChartModel, q0, radius: float, num_rays: int, span=None, seed: int = 0,
                vertical_range: Optional[float] = None, steps: int = 200) -> BallSample:
    """Endpoints of unit-speed normal geodesics of length ``radius`` from ``q0``.

    This samples the normal-geodesic wavefront. Ray lengths bound the distance
    from above; abnormal minimizers are not represented. Covectors have unit
    horizontal part and complement coordinates uniform in
    ``[-vertical_range, vertical_range]`` (default ``2*pi/radius``).
    """
    q0 = model.check(q0)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0 or num_rays <= 0:
        return BallSample(points=q0[None].copy(), lengths=np.zeros(1), covectors=np.zeros((1, model.n)))
    a = 0.0 if span is None else float(span[0])
    vr = 2 * np.pi / radius if vertical_range is None else float(vertical_range)
    rng = np.random.default_rng(seed)
    m, k = model.m, model.k
    pts, lens, covs, exited = [], [], [], 0
    for _ in range(num_rays):
        xi = rng.standard_normal(m)
        coeffs = np.concatenate([xi / np.linalg.norm(xi), rng.uniform(-vr, vr, k)])
        p0 = _frame_covector(model, q0, coeffs)
        T, Q, _, _ = kernels.hamilton_flow(model, q0, p0, a, a + radius, steps)
        if len(outside_chart(model, Q)):
            try:
                integrate_geodesic(model, q0, p0, (a, a + radius),
                                   IntegratorOptions(method="rk4", steps=steps))
            except OutOfChart as exc:
                T, Q = exc.partial.t, exc.partial.q
                exited += 1
        pts.append(Q[-1])
        lens.append(T[-1] - a)
        covs.append(p0)
    return BallSample(points=np.array(pts), lengths=np.array(lens), covectors=np.array(covs),
                      exited=exited)
