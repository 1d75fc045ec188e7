"""Control chart, endpoint map, fundamental solutions and abnormal extremals.

A horizontal curve is represented by piecewise-constant frame coefficients
``h`` so that ``dq/dt = sum_i h_i X_i(q)``. Linearizing along the curve gives
the fundamental solution ``Phi_t``; the endpoint differential is
``dw -> Phi_b int Phi_s^{-1} w(s) ds`` and its image is read off the Gramian
``G = int A A^T ds`` with ``A(s) = Phi_s^{-1} [X_1 ... X_m](gamma(s))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateFrame, NonHorizontal, OutOfChart
from .hamflow import Trajectory
from .model import ChartModel

DEFAULT_N = 512


@dataclass(frozen=True, eq=False)
class ControlCurve:
    """Piecewise-constant controls ``h[j]`` on ``[grid[j], grid[j+1]]``.

    Grids built by :func:`uniform_controls` are uniform; reparameterized
    curves may carry a non-uniform (strictly increasing) grid.
    """

    grid: np.ndarray
    h: np.ndarray
    q0: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        h = np.atleast_2d(np.asarray(self.h, float))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "q0", np.asarray(self.q0, float))
        if grid.ndim != 1 or len(grid) != len(h) + 1:
            raise ValueError("grid must have one more node than there are control intervals")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def N(self) -> int:
        return len(self.h)

    @property
    def span(self):
        return float(self.grid[0]), float(self.grid[-1])

    def horizontal_defect(self, m: int) -> float:
        return float(np.max(np.abs(self.h[:, m:]), initial=0.0))

    def is_horizontal(self, m: int, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.h), initial=0.0)))
        return self.horizontal_defect(m) <= tol * scale


def uniform_controls(q0, h, span=(0.0, 1.0), N: int = DEFAULT_N) -> ControlCurve:
    """Sample ``h`` (a constant vector or a function of t) at interval midpoints."""
    grid = np.linspace(span[0], span[1], N + 1)
    if callable(h):
        mid = 0.5 * (grid[1:] + grid[:-1])
        H = np.array([np.asarray(h(t), float) for t in mid])
    else:
        H = np.tile(np.asarray(h, float), (N, 1))
    return ControlCurve(grid=grid, h=H, q0=np.asarray(q0, float))


@dataclass(frozen=True, eq=False)
class FundamentalSolution:
    t: np.ndarray
    q: np.ndarray
    phi: np.ndarray
    phi_inv: np.ndarray
    cond: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.phi[-1]


@dataclass(eq=False)
class AbnormalReport:
    gramian: np.ndarray
    singular_values: np.ndarray
    rank: int
    characteristic_seeds: list
    verdict: str
    violations: list = field(default_factory=list)
    image_basis: Optional[np.ndarray] = None
    horizontal_image_residual: float = 0.0
    rank_threshold: float = 0.0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "verdict": self.verdict,
            "characteristics": [{"eta_b": [float(x) for x in eta], "max_violation": float(v)}
                                for eta, v in zip(self.characteristic_seeds, self.violations)],
            "rank_threshold": float(self.rank_threshold),
            "horizontal_image_residual": float(self.horizontal_image_residual),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class CharacteristicResult:
    is_characteristic: bool
    max_violation: float
    trivial: bool


def _check_nodes(model, Q, c):
    bad = ~np.all(np.isfinite(Q), axis=1)
    if model.domain_box is not None:
        bad |= np.any((Q < model.domain_box[:, 0]) | (Q > model.domain_box[:, 1]), axis=1)
    idx = np.flatnonzero(bad)
    if len(idx):
        j = idx[0]
        partial = Trajectory(t=c.grid[:j], q=Q[:j], model=model.name, order="controls-rk4")
        raise OutOfChart(f"controlled curve left the chart near t={c.grid[j]:.6g}",
                         point=Q[j], partial=partial, exit_time=float(c.grid[j]))


def endpoint_map(model: ChartModel, c: ControlCurve, substeps: int = 1) -> np.ndarray:
    return controls_to_curve(model, c, substeps).q[-1]


def controls_to_curve(model: ChartModel, c: ControlCurve, substeps: int = 1) -> Trajectory:
    """Integrate the control system; the last node is the endpoint map."""
    q0 = model.check(c.q0)
    Q, _, _ = kernels.control_flow(model, q0, c.h, c.dt, substeps)
    _check_nodes(model, Q, c)
    return Trajectory(t=c.grid.copy(), q=Q, model=model.name, order="controls-rk4")


def curve_to_controls(model: ChartModel, traj: Trajectory) -> ControlCurve:
    """Invert the control chart: solve ``frame(q_mid) h = (q_{j+1} - q_j) / dt``."""
    t, Q = np.asarray(traj.t, float), np.asarray(traj.q, float)
    dt = np.diff(t)
    H = np.empty((len(dt), model.n))
    for j in range(len(dt)):
        mid = 0.5 * (Q[j] + Q[j + 1])
        F = model.fields(mid)
        s = np.linalg.svd(F, compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            raise DegenerateFrame(f"singular frame at {mid.tolist()}")
        H[j] = np.linalg.solve(F, (Q[j + 1] - Q[j]) / dt[j])
    return ControlCurve(grid=t, h=H, q0=Q[0])


def controls_from_lift(model: ChartModel, traj: Trajectory) -> ControlCurve:
    """Horizontal controls of a geodesic from its momentum, ``h_i = p . X_i``.

    Interval values average the two end nodes; complement controls are zero.
    """
    if traj.p is None:
        raise ValueError("trajectory carries no momentum")
    u = np.array([p @ model.fields(q)[:, : model.m] for q, p in zip(traj.q, traj.p)])
    H = np.zeros((len(traj.t) - 1, model.n))
    H[:, : model.m] = 0.5 * (u[1:] + u[:-1])
    return ControlCurve(grid=np.asarray(traj.t, float), h=H, q0=traj.q[0])


def fundamental_solution(model: ChartModel, c: ControlCurve, substeps: int = 1) -> FundamentalSolution:
    """Transition matrices of ``dv/dt = (sum_i h_i dX_i/dq) v`` at the grid nodes."""
    q0 = model.check(c.q0)
    Q, Phi, _ = kernels.control_flow(model, q0, c.h, c.dt, substeps, want_phi=True)
    _check_nodes(model, Q, c)
    inv = np.linalg.inv(Phi)
    cond = np.linalg.cond(Phi)
    return FundamentalSolution(t=c.grid.copy(), q=Q, phi=Phi, phi_inv=inv, cond=cond)


def trapezoid_weights(grid) -> np.ndarray:
    dt = np.diff(grid)
    w = np.zeros(len(grid))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def default_rank_rtol(n: int, N: int) -> float:
    return max(n, N) * np.finfo(float).eps * 1e3


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-14 * max(1.0, np.max(np.abs(v))))
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def endpoint_differential_gramian(model: ChartModel, c: ControlCurve, rank_rtol: Optional[float] = None,
                                  horizontal_tol: float = 1e-8, char_tol: float = 1e-10,
                                  substeps: int = 1) -> AbnormalReport:
    """Rank of the endpoint differential restricted to horizontal variations.

    Null vectors of the Gramian give characteristic seeds ``eta(b)``; the
    verdict is ``"regular"`` when the rank equals n and ``"abnormal"`` otherwise.
    """
    m, n = model.m, model.n
    if not c.is_horizontal(m, horizontal_tol):
        raise NonHorizontal(f"complement controls reach {c.horizontal_defect(m):.3e}")
    fs = fundamental_solution(model, c, substeps)
    A = np.array([fs.phi_inv[j] @ model.fields(fs.q[j])[:, :m] for j in range(len(fs.t))])
    w = trapezoid_weights(c.grid)
    G = np.einsum("j,jam,jbm->ab", w, A, A)
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    order = np.argsort(evals)[::-1]
    sv = np.clip(evals[order], 0.0, None)
    U = evecs[:, order]
    rtol = default_rank_rtol(n, c.N) if rank_rtol is None else rank_rtol
    thresh = rtol * sv[0] if sv[0] > 0 else 0.0
    rank = int(np.sum(sv > thresh)) if sv[0] > 0 else 0

    phi_b = fs.final
    seeds, violations = [], []
    for j in range(rank, n):
        eta_a = U[:, j]
        eta_b = np.linalg.solve(phi_b.T, eta_a)
        eta_b = _sign_fix(eta_b / np.linalg.norm(eta_b))
        res = _characteristic_from_fs(model, fs, np.linalg.solve(fs.phi_inv[-1].T, eta_b),
                                      char_tol)
        seeds.append(eta_b)
        violations.append(res.max_violation)

    image = phi_b @ U[:, :rank]
    basis, _ = np.linalg.qr(image) if rank else (np.zeros((n, 0)), None)
    Xb = model.fields(fs.q[-1])[:, :m]
    resid = Xb - basis @ (basis.T @ Xb)
    hres = float(np.max(np.linalg.norm(resid, axis=0) / np.linalg.norm(Xb, axis=0)))

    notes = []
    if np.all(c.h == 0):
        notes.append("constant curve")
    return AbnormalReport(gramian=G, singular_values=sv, rank=rank, characteristic_seeds=seeds,
                          verdict="regular" if rank == n else "abnormal", violations=violations,
                          image_basis=basis, horizontal_image_residual=hres,
                          rank_threshold=thresh, notes=notes)


def _transport(fs: FundamentalSolution, eta_a) -> np.ndarray:
    # eta(t) = (Phi_t^T)^{-1} eta(a) = (Phi_t^{-1})^T eta(a)
    return np.einsum("jba,b->ja", fs.phi_inv, np.asarray(eta_a, float))


def adjoint_integrate(model: ChartModel, c: ControlCurve, eta0, direction: str = "forward",
                      method: str = "transport", substeps: int = 1) -> np.ndarray:
    """Covector path solving ``d eta/dt = -(sum_i h_i dX_i/dq)^T eta`` at grid nodes.

    ``direction="forward"`` takes ``eta0`` at the start of the grid,
    ``"backward"`` at its end. ``method="transport"`` uses the inverse-transpose
    of the fundamental solution, ``"ode"`` integrates the adjoint system by RK4.
    """
    eta0 = np.asarray(eta0, float)
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    if method == "ode":
        return _adjoint_ode(model, c, eta0, direction, substeps)
    fs = fundamental_solution(model, c, substeps)
    eta_a = eta0 if direction == "forward" else fs.final.T @ eta0
    return _transport(fs, eta_a)


def _adjoint_ode(model, c, eta0, direction, substeps):
    n = model.n

    def rhs(q, eta, hc):
        J = model.jacobian(q)
        A = np.einsum("i,iab->ab", hc, J)
        return model.fields(q) @ hc, -A.T @ eta

    Q = controls_to_curve(model, c, substeps).q
    N = c.N
    out = np.empty((N + 1, n))
    if direction == "forward":
        order, eta = range(N), eta0.copy()
        out[0] = eta
    else:
        order, eta = range(N - 1, -1, -1), eta0.copy()
        out[N] = eta
    for j in order:
        sgn = 1.0 if direction == "forward" else -1.0
        q = Q[j] if direction == "forward" else Q[j + 1]
        s = sgn * c.dt[j] / substeps
        for _ in range(substeps):
            k1q, k1e = rhs(q, eta, c.h[j])
            k2q, k2e = rhs(q + 0.5 * s * k1q, eta + 0.5 * s * k1e, c.h[j])
            k3q, k3e = rhs(q + 0.5 * s * k2q, eta + 0.5 * s * k2e, c.h[j])
            k4q, k4e = rhs(q + s * k3q, eta + s * k3e, c.h[j])
            q = q + s / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
            eta = eta + s / 6 * (k1e + 2 * k2e + 2 * k3e + k4e)
        out[j + 1 if direction == "forward" else j] = eta
    return out


def _characteristic_from_fs(model, fs, eta_a, tol):
    eta_a = np.asarray(eta_a, float)
    scale = float(np.linalg.norm(eta_a))
    if scale == 0.0:
        return CharacteristicResult(True, 0.0, True)
    path = _transport(fs, eta_a)
    worst = max(float(np.max(np.abs(e @ model.fields(q)[:, : model.m])))
                for q, e in zip(fs.q, path))
    worst /= scale
    return CharacteristicResult(worst <= tol, worst, False)


def characteristic_test(model: ChartModel, c: ControlCurve, eta0, tol: float = 1e-10,
                        direction: str = "forward", substeps: int = 1) -> CharacteristicResult:
    """Does the adjoint solution through ``eta0`` stay in the annihilator of the distribution?

    The violation ``max_t max_i |eta(t) . X_i(gamma(t))|`` is reported relative
    to ``|eta0|``; ``eta0 = 0`` is the trivial characteristic.
    """
    fs = fundamental_solution(model, c, substeps)
    eta0 = np.asarray(eta0, float)
    eta_a = eta0 if direction == "forward" else fs.final.T @ eta0
    res = _characteristic_from_fs(model, fs, eta_a, tol)
    if direction == "backward" and not res.trivial:
        ratio = np.linalg.norm(eta_a) / np.linalg.norm(eta0)
        worst = res.max_violation * ratio
        res = CharacteristicResult(worst <= tol, worst, False)
    return res


def sampled_image_rank(model: ChartModel, c: ControlCurve, n_samples: int = 64, eps: float = 1e-6,
                       rtol: float = 1e-6, seed: int = 0, substeps: int = 1):
    """Brute-force rank of the endpoint differential from random horizontal perturbations.

    Each column is a central difference of the endpoint map along an i.i.d.
    Gaussian piecewise-constant horizontal perturbation. Independent of the
    fundamental solution. Returns ``(rank, singular_values)``.
    """
    rng = np.random.default_rng(seed)
    m = model.m
    cols = []
    for _ in range(n_samples):
        du = np.zeros_like(c.h)
        du[:, :m] = rng.standard_normal((c.N, m))
        plus = ControlCurve(c.grid, c.h + eps * du, c.q0)
        minus = ControlCurve(c.grid, c.h - eps * du, c.q0)
        cols.append((endpoint_map(model, plus, substeps) - endpoint_map(model, minus, substeps))
                    / (2 * eps))
    s = np.linalg.svd(np.array(cols).T, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    return rank, s
