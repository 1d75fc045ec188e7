"""Arc-length profiles and unit-speed reparameterization of horizontal curves.

For piecewise-constant controls the arc-length profile is piecewise linear,
so its monotone inverse is exact. The unit-speed curve keeps each original
interval's direction ``h_j / |h_j|`` over the arc-length interval it covers;
intervals of zero speed are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .endpoint import ControlCurve
from .errors import NonHorizontal, ZeroLength
from .model import ChartModel

PLATEAU_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ArclengthProfile:
    t: np.ndarray
    sigma: np.ndarray

    @property
    def total(self) -> float:
        return float(self.sigma[-1])

    def inverse(self, s) -> np.ndarray:
        """Smallest parameter ``t`` with ``sigma(t) = s`` (plateaus collapse to their start)."""
        s = np.asarray(s, float)
        idx = np.searchsorted(self.sigma, s, side="left")
        idx = np.clip(idx, 1, len(self.t) - 1)
        s0, s1 = self.sigma[idx - 1], self.sigma[idx]
        t0, t1 = self.t[idx - 1], self.t[idx]
        frac = np.where(s1 > s0, (s - s0) / np.where(s1 > s0, s1 - s0, 1.0), 0.0)
        return t0 + frac * (t1 - t0)


def _check_horizontal(model, c, tol):
    scale = max(1.0, float(np.max(np.abs(c.h), initial=0.0)))
    if c.horizontal_defect(model.m) > tol * scale:
        raise NonHorizontal(f"complement controls reach {c.horizontal_defect(model.m):.3e}")


def arclength_profile(model: ChartModel, c: ControlCurve, tol: float = 1e-10) -> ArclengthProfile:
    """``sigma(t)``: length of the curve restricted to ``[a, t]`` at every grid node."""
    _check_horizontal(model, c, tol)
    speed = np.linalg.norm(c.h[:, : model.m], axis=1)
    sigma = np.concatenate([[0.0], np.cumsum(speed * c.dt)])
    return ArclengthProfile(t=c.grid.copy(), sigma=sigma)


def unit_speed_reparam(model: ChartModel, c: ControlCurve, samples: Optional[int] = None,
                       tol: float = 1e-10) -> ControlCurve:
    """Reparameterize ``c`` by arc length on ``[0, L]``.

    The output grid is the set of arc-length breakpoints of ``c``, merged with
    ``samples + 1`` equispaced values of arc length when ``samples`` is given.
    Every output interval lies inside one input interval and carries a unit
    control, so applying the map twice with the same ``samples`` changes
    nothing.
    """
    prof = arclength_profile(model, c, tol)
    L = prof.total
    if L <= 1e-14:
        raise ZeroLength("curve has zero length")
    m = model.m
    speed = np.linalg.norm(c.h[:, :m], axis=1)
    keep = speed >= PLATEAU_TOL
    breaks = prof.sigma[1:][keep]
    dirs = c.h[keep] / speed[keep, None]
    merged = np.concatenate([[0.0], breaks])
    if samples is not None:
        merged = np.union1d(np.linspace(0.0, L, int(samples) + 1), merged)
    merged = merged[merged <= L]
    gap = 1e-12 * L
    grid = [merged[0]]
    for s in merged[1:]:
        if s - grid[-1] > gap:
            grid.append(s)
    grid[-1] = L
    grid = np.array(grid)
    mid = 0.5 * (grid[1:] + grid[:-1])
    owner = np.clip(np.searchsorted(breaks, mid, side="left"), 0, len(breaks) - 1)
    H = dirs[owner]
    return ControlCurve(grid=grid, h=H, q0=c.q0.copy())
