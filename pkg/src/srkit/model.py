"""Sub-Riemannian structures in a single coordinate chart.

A :class:`ChartModel` carries an orthonormal horizontal frame X_1..X_m, a
complement frame X_{m+1}..X_n, and (optionally) analytic first and second
derivatives of all n fields. Arrays follow one convention throughout:

* ``fields(q)`` is ``(n, n)`` with column ``i`` equal to X_i(q);
* ``jacobian(q)[i, a, b]`` is dX_i^a / dq_b;
* ``hessian(q)[i, a, b, c]`` is d^2 X_i^a / dq_b dq_c.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError, DegenerateFrame, OutOfChart
from .expr import compile_vector

REGISTRY_VERSION = "1"
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ChartModel:
    name: str
    n: int
    m: int
    frame_fn: Callable[[np.ndarray], np.ndarray]
    complement_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain_box: Optional[np.ndarray] = None
    fd_step: Optional[float] = None
    builtin_code: Optional[int] = None
    metric_mode: str = "frame-orthonormal"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.m <= self.n):
            raise ConfigError(f"need 0 < m <= n, got n={self.n}, m={self.m}")
        if self.domain_box is not None:
            box = np.asarray(self.domain_box, dtype=float)
            if box.shape != (self.n, 2) or np.any(box[:, 0] >= box[:, 1]):
                raise ConfigError("domain_box must be n rows of [lo, hi] with lo < hi")
            object.__setattr__(self, "domain_box", box)

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def jacobian_source(self) -> str:
        return "analytic" if self.jacobian_fn is not None else "finite-difference"

    def contains(self, q) -> bool:
        if self.domain_box is None:
            return bool(np.all(np.isfinite(q)))
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.domain_box[:, 0]) and np.all(q <= self.domain_box[:, 1]))

    def check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ValueError(f"expected a {self.n}-vector, got shape {q.shape}")
        if not self.contains(q):
            raise OutOfChart(f"point {q.tolist()} outside chart of model {self.name!r}", point=q)
        return q

    # Unchecked evaluators; the optional time argument is accepted and ignored.

    def fields(self, q, t=None) -> np.ndarray:
        F = np.empty((self.n, self.n))
        F[:, : self.m] = self.frame_fn(q)
        if self.k:
            F[:, self.m:] = self.complement_fn(q)
        return F

    def jacobian(self, q, t=None, step=None) -> np.ndarray:
        if self.jacobian_fn is not None and step is None:
            return np.asarray(self.jacobian_fn(q), dtype=float)
        return fd_jacobian(self.fields, q, step if step is not None else self.fd_step)

    def hessian(self, q, t=None) -> np.ndarray:
        if self.hessian_fn is not None:
            return np.asarray(self.hessian_fn(q), dtype=float)
        return fd_hessian(self.fields, q)


def _fd_steps(q, step):
    if step is None:
        return np.maximum(1e-6 * np.abs(q), 1e-8)
    return np.full(q.shape, float(step))


def fd_jacobian(fields, q, step=None) -> np.ndarray:
    """Central-difference derivative of all frame fields."""
    q = np.asarray(q, dtype=float)
    n = q.size
    steps = _fd_steps(q, step)
    out = np.empty((n, n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = steps[b]
        out[:, :, b] = ((fields(q + e) - fields(q - e)) / (2 * steps[b])).T
    return out


def fd_hessian(fields, q, step=1e-4) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = q.size
    h = step * np.maximum(1.0, np.abs(q))
    out = np.empty((n, n, n, n))
    f0 = fields(q)
    for b in range(n):
        eb = np.zeros(n)
        eb[b] = h[b]
        out[:, :, b, b] = ((fields(q + eb) - 2 * f0 + fields(q - eb)) / h[b] ** 2).T
        for c in range(b + 1, n):
            ec = np.zeros(n)
            ec[c] = h[c]
            d = (fields(q + eb + ec) - fields(q + eb - ec)
                 - fields(q - eb + ec) + fields(q - eb - ec)) / (4 * h[b] * h[c])
            out[:, :, b, c] = d.T
            out[:, :, c, b] = d.T
    return out


# ---------------------------------------------------------------------------
# public evaluator surface


def eval_frame(model: ChartModel, q, t=None) -> np.ndarray:
    """Full frame matrix at ``q``: horizontal columns first, then complement."""
    q = model.check(q)
    F = model.fields(q, t)
    s = np.linalg.svd(F, compute_uv=False)
    if not np.all(np.isfinite(s)) or s[-1] <= RANK_RTOL * s[0]:
        raise DegenerateFrame(f"frame of {model.name!r} is singular at {q.tolist()}")
    return F


def frame_jacobian(model: ChartModel, q, t=None, step=None) -> np.ndarray:
    """Stacked ``(m, n, n)`` derivatives dX_i/dq of the horizontal fields."""
    q = model.check(q)
    return model.jacobian(q, t, step=step)[: model.m]


def dual_metric(F: np.ndarray) -> np.ndarray:
    """Matrix of the dual metric on covectors when the full frame is orthonormal."""
    return F @ F.T


def annihilator_coframe(model: ChartModel, q, t=None) -> np.ndarray:
    """``(k, n)`` coframe annihilating the horizontal distribution.

    Rows are orthonormal for the dual of the metric that makes the full frame
    orthonormal and are oriented so that theta_j(X_{m+j}) > 0.
    """
    F = eval_frame(model, q, t)
    m, k = model.m, model.k
    if k == 0:
        return np.zeros((0, model.n))
    # rows of F^{-1} past m vanish on X_1..X_m
    basis = np.linalg.solve(F.T, np.eye(model.n)[:, m:]).T
    G = dual_metric(F)
    rows = []
    for v in basis:
        w = v.copy()
        for r in rows:
            w -= (w @ G @ r) * r
        norm = np.sqrt(w @ G @ w)
        if norm <= RANK_RTOL * max(1.0, np.linalg.norm(v)):
            raise DegenerateFrame(f"annihilator basis collapsed at {np.asarray(q).tolist()}")
        rows.append(w / norm)
    theta = np.array(rows)
    for j in range(k):
        if theta[j] @ F[:, m + j] < 0:
            theta[j] = -theta[j]
    return theta


# ---------------------------------------------------------------------------
# builtin models


def _flat_frame(q):
    return np.eye(3)[:, :2]


def _flat_complement(q):
    return np.array([[0.0], [0.0], [1.0]])


def _zero_jac(q):
    return np.zeros((3, 3, 3))


def _zero_hess(q):
    return np.zeros((3, 3, 3, 3))


def _heis_frame(q):
    x, y = q[0], q[1]
    return np.array([[1.0, 0.0], [0.0, 1.0], [-0.5 * y, 0.5 * x]])


def _heis_jac(q):
    J = np.zeros((3, 3, 3))
    J[0, 2, 1] = -0.5
    J[1, 2, 0] = 0.5
    return J


def _mart_frame(q):
    x = q[0]
    return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.5 * x * x]])


def _mart_jac(q):
    J = np.zeros((3, 3, 3))
    J[1, 2, 0] = q[0]
    return J


def _mart_hess(q):
    H = np.zeros((3, 3, 3, 3))
    H[1, 2, 0, 0] = 1.0
    return H


BUILTIN_CODES = {"flat": 0, "heisenberg": 1, "martinet": 2}


def builtin_model(name: str, domain_box=None) -> ChartModel:
    """Return one of the registered models: ``flat``, ``heisenberg``, ``martinet``."""
    try:
        code = BUILTIN_CODES[name]
    except KeyError:
        raise ConfigError(
            f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_CODES)}") from None
    frame, jac, hess = {
        0: (_flat_frame, _zero_jac, _zero_hess),
        1: (_heis_frame, _heis_jac, _zero_hess),
        2: (_mart_frame, _mart_jac, _mart_hess),
    }[code]
    return ChartModel(name=name, n=3, m=2, frame_fn=frame, complement_fn=_flat_complement,
                      jacobian_fn=jac, hessian_fn=hess, domain_box=domain_box,
                      builtin_code=code, meta={"registry_version": REGISTRY_VERSION})


def auto_complement(frame: np.ndarray) -> np.ndarray:
    """Coordinate axes completing ``frame`` (n, m) to a basis.

    Axes are chosen by column-pivoted QR on the annihilator, so the choice is
    deterministic for a given reference frame.
    """
    n, m = frame.shape
    null = scipy.linalg.null_space(frame.T)
    if null.shape[1] != n - m:
        raise DegenerateFrame("horizontal frame is rank deficient at the reference point")
    _, _, piv = scipy.linalg.qr(null.T, pivoting=True)
    axes = np.sort(piv[: n - m])
    return np.eye(n)[:, axes]


def model_from_dict(spec: dict) -> ChartModel:
    """Build a model from the JSON model-file schema."""
    if "name" in spec and spec["name"] in BUILTIN_CODES and "frame" not in spec:
        return builtin_model(spec["name"], spec.get("domain_box"))
    try:
        name = str(spec.get("name", "custom"))
        n, m = int(spec["n"]), int(spec["m"])
        frame_src = spec["frame"]
    except KeyError as exc:
        raise ConfigError(f"model file missing key {exc.args[0]!r}") from None
    variables = [f"q{i + 1}" for i in range(n)]
    if len(frame_src) != m or any(len(col) != n for col in frame_src):
        raise ConfigError("'frame' must list m fields of n component expressions")
    frame_vecs = [compile_vector(col, variables) for col in frame_src]

    def frame_fn(q):
        return np.array([f(*q) for f in frame_vecs], dtype=float).T

    box = spec.get("domain_box")
    comp_src = spec.get("complement")
    if comp_src is None:
        ref = np.zeros(n) if box is None else np.mean(np.asarray(box, float), axis=1)
        fixed = auto_complement(frame_fn(ref))

        def complement_fn(q):
            return fixed
    else:
        if len(comp_src) != n - m or any(len(col) != n for col in comp_src):
            raise ConfigError("'complement' must list n-m fields of n component expressions")
        comp_vecs = [compile_vector(col, variables) for col in comp_src]

        def complement_fn(q):
            return np.array([f(*q) for f in comp_vecs], dtype=float).reshape(n - m, n).T

    return ChartModel(name=name, n=n, m=m, frame_fn=frame_fn, complement_fn=complement_fn,
                      domain_box=box, fd_step=spec.get("fd_step"),
                      meta={"source": "file", "auto_complement": comp_src is None})


def load_model(ref: str) -> ChartModel:
    """Resolve a builtin name or a path to a JSON model file."""
    if ref in BUILTIN_CODES:
        return builtin_model(ref)
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"model {ref!r} is neither a builtin nor an existing file")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {ref}: {exc}") from None
    return model_from_dict(spec)
