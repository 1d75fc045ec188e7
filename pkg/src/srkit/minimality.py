"""Wavefront charts from a hypersurface, calibration checks and local minimality certificates.

From a hypersurface ``S`` with unit covector field ``lam`` annihilating ``TS``
(``sum_i (lam . X_i)^2 = 1``), the map ``F(t, u)`` sends ``(t, u)`` to the
time-``t`` point of the normal geodesic leaving ``x(u)`` with covector
``lam(x(u))``. Where ``F`` is invertible, ``tau = t o F^{-1}`` satisfies
``d tau = lam o F`` and has unit dual norm on the distribution, so every
chart-confined horizontal curve from ``S`` is at least as long as the value
of ``tau`` at its endpoint.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import NormalizationFailure, SingularJacobian
from .model import ChartModel
from .solver import BvpSolution, MinimizeOptions, SubmanifoldSpec, direct_minimize

_FD = 1e-6


def _int_steps(t: float, dt_max: float = 2.5e-3) -> int:
    return max(4, int(math.ceil(abs(t) / dt_max)))


def surface_parameterization(S: SubmanifoldSpec, base) -> Callable:
    """Local coordinates on a level set: tangent-plane offset then projection."""
    if S.param is not None:
        return S.param
    base = S.project(base)
    T = S.tangent_basis(base)

    def param(u):
        return S.project(base + T @ np.asarray(u, float))

    return param


@dataclass(eq=False)
class WavefrontChart:
    model: ChartModel
    param: Callable
    t: np.ndarray
    u: np.ndarray                 # (nu, n-1) sample coordinates
    u_shape: tuple
    spacing: float
    lam: np.ndarray               # (nu, n) covector on S
    F: np.ndarray                 # (nt, nu, n)
    P: np.ndarray                 # (nt, nu, n) covector transported to F
    dF: np.ndarray                # (nt, nu, n, n)
    seed: np.ndarray
    det: np.ndarray = field(init=False)
    cond: np.ndarray = field(init=False)

    def __post_init__(self):
        self.det = np.linalg.det(self.dF)
        self.cond = np.linalg.cond(self.dF)

    @property
    def min_abs_det(self) -> float:
        return float(np.min(np.abs(self.det)))

    def covector(self, u) -> np.ndarray:
        return _unit_normal(self.model, self.param, u, self.seed)[0]

    def flow(self, t: float, u, jac: bool = False):
        """``F(t, u)``, the transported covector and optionally ``dF``."""
        model, n = self.model, self.model.n
        u = np.asarray(u, float)
        x = self.param(u)
        lam = self.covector(u)
        _, Q, P, Phi = kernels.hamilton_flow(model, x, lam, 0.0, t, _int_steps(t), stm=jac)
        if not jac:
            return Q[-1], P[-1], None
        return Q[-1], P[-1], _dF(model, self, u, Q[-1], P[-1], Phi)

    def invert(self, y, guess, tol: float = 1e-13, max_iter: int = 30):
        """Solve ``F(t, u) = y`` by Newton from ``guess = (t, u)``."""
        z = np.concatenate([[guess[0]], np.asarray(guess[1], float)])
        y = np.asarray(y, float)
        for _ in range(max_iter):
            Fy, _, D = self.flow(z[0], z[1:], jac=True)
            r = Fy - y
            if np.linalg.norm(r) <= tol:
                return z[0], z[1:]
            z = z - np.linalg.solve(D, r)
        Fy, _, _ = self.flow(z[0], z[1:])
        if np.linalg.norm(Fy - y) > 1e3 * tol:
            raise SingularJacobian(f"chart inversion failed near {y.tolist()}")
        return z[0], z[1:]

    def nearest(self, y):
        d = np.linalg.norm(self.F - np.asarray(y, float), axis=-1)
        i, k = np.unravel_index(np.argmin(d), d.shape)
        return self.t[i], self.u[k]

    def tau(self, y) -> float:
        return float(self.invert(y, self.nearest(y))[0])

    def to_json(self) -> dict:
        return {"t": self.t.tolist(), "u_shape": list(self.u_shape), "spacing": self.spacing,
                "min_abs_det_dF": self.min_abs_det, "max_cond_dF": float(np.max(self.cond))}


def _unit_normal(model, param, u, seed):
    """Unit covector annihilating the tangent space of S at ``x(u)`` and its norm factor."""
    u = np.asarray(u, float)
    n = model.n
    x = param(u)
    T = np.empty((n, n - 1))
    for j in range(n - 1):
        e = np.zeros(n - 1)
        e[j] = _FD
        T[:, j] = (param(u + e) - param(u - e)) / (2 * _FD)
    _, _, Vt = np.linalg.svd(T.T)
    nu = Vt[-1]
    s = float(np.linalg.norm(nu @ model.fields(x)[:, : model.m]))
    if s <= 1e-10:
        return None, s
    lam = nu / s
    if lam @ seed < 0:
        lam = -lam
    return lam, s


def _surface_derivs(chart, u):
    """Columns ``dx/du_j`` and ``dlam/du_j`` by central differences."""
    n = chart.model.n
    dx = np.empty((n, n - 1))
    dl = np.empty((n, n - 1))
    for j in range(n - 1):
        e = np.zeros(n - 1)
        e[j] = _FD
        dx[:, j] = (chart.param(u + e) - chart.param(u - e)) / (2 * _FD)
        dl[:, j] = (chart.covector(u + e) - chart.covector(u - e)) / (2 * _FD)
    return dx, dl


def _dF(model, chart, u, qt, pt, Phi, derivs=None):
    n = model.n
    dx, dl = _surface_derivs(chart, u) if derivs is None else derivs
    dq, _ = kernels.hamilton_rhs(model, qt, pt)
    D = np.empty((n, n))
    D[:, 0] = dq
    D[:, 1:] = Phi[:n, :n] @ dx + Phi[:n, n:] @ dl
    return D


def build_wavefront(model: ChartModel, S: SubmanifoldSpec, seed_covector, t_range, u_box,
                    spacing: float, base=None) -> WavefrontChart:
    """Sample ``F(t, u)`` and ``dF`` on a regular grid of spacing ``spacing``.

    ``u_box`` lists ``[lo, hi]`` per surface coordinate; ``t_range`` is
    ``(t0, t1)`` with grid nodes at ``t0 + k * spacing``.
    """
    n = model.n
    seed = np.asarray(seed_covector, float)
    param = surface_parameterization(S, base if base is not None else (
        S.anchor if S.anchor is not None else np.zeros(n)))
    axes = []
    for lo, hi in u_box:
        cnt = int(round((hi - lo) / spacing))
        axes.append(np.linspace(lo, lo + cnt * spacing, cnt + 1))
    U = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, n - 1)
    u_shape = tuple(len(a) for a in axes)
    t0, t1 = float(t_range[0]), float(t_range[1])
    nt = int(round((t1 - t0) / spacing)) + 1
    T = t0 + spacing * np.arange(nt)

    lam = np.empty((len(U), n))
    bad = []
    for k, u in enumerate(U):
        val, _ = _unit_normal(model, param, u, seed)
        if val is None:
            bad.append(u.tolist())
        else:
            lam[k] = val
    if bad:
        raise NormalizationFailure(
            f"surface tangent to the distribution at {len(bad)} sample(s)", samples=bad)

    origin = np.zeros(n - 1)
    x0 = param(origin)
    T0 = np.column_stack([(param(origin + _FD * e) - param(origin - _FD * e)) / (2 * _FD)
                          for e in np.eye(n - 1)])
    if np.max(np.abs(seed @ T0)) > 1e-8 * max(1.0, np.linalg.norm(seed)):
        raise ValueError("seed covector does not annihilate the surface tangent space")
    if abs(float(np.sum((seed @ model.fields(x0)[:, : model.m]) ** 2)) - 1.0) > 1e-8:
        raise ValueError("seed covector is not normalized to unit horizontal norm")

    Fs = np.empty((nt, len(U), n))
    Ps = np.empty((nt, len(U), n))
    dFs = np.empty((nt, len(U), n, n))
    chart = WavefrontChart.__new__(WavefrontChart)
    chart.model, chart.param, chart.seed = model, param, seed
    sub = max(1, int(math.ceil(spacing / 2.5e-3)))
    for k, u in enumerate(U):
        x = param(u)
        derivs = _surface_derivs(chart, u)
        _, Q, P, Phi = kernels.hamilton_flow(model, x, lam[k], 0.0, t0, _int_steps(t0), stm=True)
        q, p = Q[-1], P[-1]
        for i in range(nt):
            if i > 0:
                _, Q, P, step = kernels.hamilton_flow(model, q, p, T[i - 1], T[i], sub, stm=True)
                q, p, Phi = Q[-1], P[-1], step @ Phi
            Fs[i, k], Ps[i, k] = q, p
            dFs[i, k] = _dF(model, chart, u, q, p, Phi, derivs)
    return WavefrontChart(model=model, param=param, t=T, u=U, u_shape=u_shape, spacing=spacing,
                          lam=lam, F=Fs, P=Ps, dF=dFs, seed=seed)


@dataclass
class CalibrationReport:
    covector_residual: float
    norm_residual: float
    samples: int
    step: float
    min_abs_det_dF: float

    @property
    def residual(self) -> float:
        return max(self.covector_residual, self.norm_residual)

    def to_json(self) -> dict:
        return {"calibration_residual": self.residual, "covector_residual": self.covector_residual,
                "norm_residual": self.norm_residual, "samples": self.samples, "step": self.step,
                "min_abs_det_dF": self.min_abs_det_dF}


def default_probes(chart: WavefrontChart, max_samples: int = 64) -> list:
    """Interior grid samples, strided down to at most ``max_samples`` points."""
    nt = len(chart.t)
    grid_idx = np.array(list(itertools.product(*[range(s) for s in chart.u_shape])))
    interior_u = [k for k, idx in enumerate(grid_idx)
                  if all(0 < i < s - 1 for i, s in zip(idx, chart.u_shape))]
    interior_t = list(range(1, nt - 1))
    pairs = [(i, k) for i in interior_t for k in interior_u]
    if len(pairs) > max_samples:
        stride = int(math.ceil(len(pairs) / max_samples))
        pairs = pairs[::stride]
    return [(float(chart.t[i]), chart.u[k].copy()) for i, k in pairs]


def calibration_check(chart: WavefrontChart, probes: Optional[Sequence] = None,
                      step: Optional[float] = None, max_cond: float = 1e6) -> CalibrationReport:
    """Compare the finite-difference differential of ``tau`` with the transported covector.

    ``tau`` is evaluated by inverting ``F`` at ``y +- step * e_a`` around each
    probe ``y = F(t, u)``; ``step`` defaults to the chart spacing. Samples
    with ``cond(dF) > max_cond`` count as singular; the surface derivatives
    are finite differences, so an exact zero determinant is never observed.
    """
    singular = [(float(chart.t[i]), chart.u[k].tolist())
                for i, k in zip(*np.nonzero(~(chart.cond <= max_cond)))]
    if singular:
        raise SingularJacobian(f"dF singular at {len(singular)} sample(s)", samples=singular)
    model, n = chart.model, chart.model.n
    h = chart.spacing if step is None else step
    probes = default_probes(chart) if probes is None else probes
    cov_res, norm_res = 0.0, 0.0
    for t, u in probes:
        y, p, D = chart.flow(t, u, jac=True)
        if not np.linalg.cond(D) <= max_cond:
            raise SingularJacobian("dF singular at a probe", samples=[(t, np.asarray(u).tolist())])
        dtau = np.empty(n)
        for a in range(n):
            e = np.zeros(n)
            e[a] = h
            tp = chart.invert(y + e, (t, u))[0]
            tm = chart.invert(y - e, (t, u))[0]
            dtau[a] = (tp - tm) / (2 * h)
        cov_res = max(cov_res, float(np.max(np.abs(dtau - p))))
        unit = float(np.sum((dtau @ model.fields(y)[:, : model.m]) ** 2))
        norm_res = max(norm_res, abs(unit - 1.0))
    return CalibrationReport(covector_residual=cov_res, norm_residual=norm_res,
                             samples=len(probes), step=h, min_abs_det_dF=chart.min_abs_det)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CertificateOptions:
    calibration_tol: float = 1e-3
    oracle_tol: float = 1e-4
    oracle_N: int = 256
    oracle_starts: int = 4
    seed: int = 0
    chart_cells: int = 8


@dataclass
class Certificate:
    verdict: str
    epsilon: float
    min_abs_det_dF: Optional[float]
    calibration_residual: Optional[float]
    oracle_gap: float
    geodesic_length: float
    oracle_length: float
    thresholds: dict
    notes: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "min_abs_det_dF": self.min_abs_det_dF,
                "calibration_residual": self.calibration_residual, "oracle_gap": self.oracle_gap,
                "epsilon": self.epsilon, "geodesic_length": self.geodesic_length,
                "oracle_length": self.oracle_length, "thresholds": self.thresholds,
                "notes": self.notes}


def minimality_certificate(model: ChartModel, P: SubmanifoldSpec, geodesic: BvpSolution,
                           epsilon: float, opts: CertificateOptions = CertificateOptions()) -> Certificate:
    """Empirical evidence that the first ``epsilon`` of arclength minimizes length from ``P``.

    Checks a wavefront chart (nonsingular ``dF``), the calibration residual,
    and runs the direct-minimization oracle from ``P`` to the segment's end.
    Point sources skip the chart checks and rely on the oracle alone. The
    verdict is ``"certified"`` or ``"inconclusive"``; never a proof.
    """
    q0 = np.asarray(geodesic.q0, float)
    p0 = np.asarray(geodesic.p0, float)
    u0 = p0 @ model.fields(q0)[:, : model.m]
    speed = float(np.linalg.norm(u0))
    if speed == 0.0:
        raise ValueError("geodesic has zero speed")
    p_unit = p0 / speed
    notes = []
    if not P.is_point:
        T = P.tangent_basis(q0)
        if np.max(np.abs(p0 @ T), initial=0.0) > 1e-8 * max(1.0, np.linalg.norm(p0)):
            raise ValueError("geodesic covector does not annihilate the tangent space of P")
    _, Q, _, _ = kernels.hamilton_flow(model, q0, p_unit, 0.0, epsilon, _int_steps(epsilon))
    target = Q[-1]

    det_min, calib = None, None
    chart_ok = True
    if P.is_point or P.codim != 1:
        notes.append("point or higher-codimension source: wavefront checks skipped, oracle only")
    else:
        h = epsilon / opts.chart_cells
        half = 0.5 * epsilon
        try:
            chart = build_wavefront(model, P, p_unit, (0.0, epsilon), [(-half, half)] * (model.n - 1),
                                    h, base=q0)
            det_min = chart.min_abs_det
            calib = calibration_check(chart).residual
            chart_ok = calib <= opts.calibration_tol
        except (NormalizationFailure, SingularJacobian) as exc:
            notes.append(f"wavefront chart failed: {exc}")
            chart_ok = False

    mopts = MinimizeOptions(span=(0.0, 1.0), n_starts=opts.oracle_starts, seed=opts.seed,
                            start_set=None if P.is_point else P)
    oracle = direct_minimize(model, q0, target, opts.oracle_N, mopts)
    gap = (epsilon - oracle.length) / epsilon
    ok = chart_ok and gap <= opts.oracle_tol
    return Certificate(verdict="certified" if ok else "inconclusive", epsilon=float(epsilon),
                       min_abs_det_dF=det_min, calibration_residual=calib, oracle_gap=float(gap),
                       geodesic_length=float(epsilon), oracle_length=float(oracle.length),
                       thresholds={"calibration": opts.calibration_tol, "oracle_gap": opts.oracle_tol},
                       notes=notes)


def largest_certified_epsilon(model: ChartModel, P: SubmanifoldSpec, geodesic: BvpSolution,
                              epsilons: Sequence[float],
                              opts: CertificateOptions = CertificateOptions()):
    """Largest tested ``epsilon`` whose certificate passes, with all certificates."""
    certs = [minimality_certificate(model, P, geodesic, e, opts) for e in sorted(epsilons)]
    passing = [c.epsilon for c in certs if c.certified]
    return (max(passing) if passing else None), certs
