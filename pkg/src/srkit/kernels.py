"""Backend selection for the RK4 kernels.

The compiled extension serves builtin models without a domain box; every
other case falls back to :mod:`srkit._pykernels`. Set ``SRKIT_BACKEND=python``
(or call :func:`set_backend`) to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_backend = os.environ.get("SRKIT_BACKEND", "auto")


def compiled_available() -> bool:
    return _ckernels is not None


def set_backend(name: str) -> None:
    global _backend
    if name not in ("auto", "python", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _ckernels is None:
        raise RuntimeError("compiled kernels are not built")
    _backend = name


def get_backend() -> str:
    return _backend


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def _use_c(model) -> bool:
    return (_backend != "python" and _ckernels is not None
            and model.builtin_code is not None and model.domain_box is None)


def backend_for(model) -> str:
    return "compiled" if _use_c(model) else "python"


def hamilton_rhs(model, q, p):
    if _use_c(model):
        return _ckernels.hamilton_rhs(model.builtin_code, np.ascontiguousarray(q, float),
                                      np.ascontiguousarray(p, float))
    return _pykernels.hamilton_rhs(model, np.asarray(q, float), np.asarray(p, float))


def hamilton_linear(model, q, p):
    if _use_c(model):
        return _ckernels.hamilton_linear(model.builtin_code, np.ascontiguousarray(q, float),
                                         np.ascontiguousarray(p, float))
    return _pykernels.hamilton_linear(model, np.asarray(q, float), np.asarray(p, float))


def state_rhs(model):
    """Return ``f(t, y)`` for the (q, p) system, as used by adaptive solvers."""
    if _use_c(model):
        code, fn = model.builtin_code, _ckernels.hamilton_state_rhs
        return lambda t, y: fn(code, y)
    return lambda t, y: _pykernels.hamilton_state_rhs(model, y)


def aug_rhs(model):
    """Return ``f(t, y)`` for the (q, p) system with its flattened variational matrix."""
    if _use_c(model):
        code, fn = model.builtin_code, _ckernels.hamilton_aug_rhs
        return lambda t, y: fn(code, y)
    return lambda t, y: _pykernels.hamilton_aug_rhs(model, y)


def hamilton_flow(model, q0, p0, t0, t1, nsteps, stm=False):
    if _use_c(model):
        return _ckernels.hamilton_flow(model.builtin_code, _c(q0), _c(p0), float(t0), float(t1),
                                       int(nsteps), bool(stm))
    return _pykernels.hamilton_flow(model, q0, p0, t0, t1, nsteps, stm)


def control_flow(model, q0, h, dt, substeps=1, want_phi=False, want_sens=False):
    if _use_c(model):
        return _ckernels.control_flow(model.builtin_code, _c(q0), _c(h), _c(dt), int(substeps),
                                      bool(want_phi), bool(want_sens))
    return _pykernels.control_flow(model, q0, h, np.asarray(dt, float), substeps,
                                   want_phi, want_sens)
