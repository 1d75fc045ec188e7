"""Independent constructions used by several test modules."""

import numpy as np

from srkit import kernels
from srkit.endpoint import ControlCurve


def horizontal_curve_to(model, q_start, target, rng, N=64, noise=1.0, iters=20):
    """A random horizontal control curve from ``q_start`` ending exactly at ``target``.

    Smooth random controls around the chord are corrected by minimum-norm
    Newton steps on the endpoint map until the endpoint matches.
    """
    m, n = model.m, model.n
    grid = np.linspace(0.0, 1.0, N + 1)
    dt = np.diff(grid)
    t = 0.5 * (grid[1:] + grid[:-1])
    chord = np.linalg.lstsq(model.fields(q_start)[:, :m], target - q_start, rcond=None)[0]
    u = np.tile(chord, (N, 1))
    scale = noise * max(np.linalg.norm(chord), 1e-3)
    for k in range(1, 4):
        u += scale * np.outer(np.sin(np.pi * k * t), rng.standard_normal(m)) / k
    h = np.zeros((N, n))
    for _ in range(iters):
        h[:, :m] = u
        Q, _, sens = kernels.control_flow(model, q_start, h, dt, 1, want_sens=True)
        r = Q[-1] - target
        if np.linalg.norm(r) < 1e-13:
            break
        B = sens[:, :, :m].transpose(1, 0, 2).reshape(n, N * m)
        u = u - (B.T @ np.linalg.solve(B @ B.T, r)).reshape(N, m)
    h[:, :m] = u
    return ControlCurve(grid, h, np.asarray(q_start, float))
