from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srkit.errors import OutOfChart
from srkit.hamflow import (RK4, IntegratorOptions, flow_linearization, hamilton_rhs, hamiltonian,
                           hamiltonian_along, integrate_geodesic, lift_residual)
from srkit.model import annihilator_coframe, builtin_model

# z(1) for p0=(0,1,c) at unit horizontal speed: (c - sin c) / (2 c^2); at c = 2*pi this is 1/(4*pi)
Z_FULL_LOOP = 1.0 / (4.0 * np.pi)
TIGHT = IntegratorOptions(rtol=1e-12, atol=1e-14)


def test_hamiltonian_examples(model, heis):
    assert hamiltonian(model, [0.1, 0.2, 0.3], [0, 0, 0]) == 0.0
    assert hamiltonian(heis, [0, 0, 0], [1, 0, 0]) == 0.5
    assert hamiltonian(heis, [0, 0, 0], [0, 0, 1]) == 0.0


def test_rhs_examples(model, flat, heis):
    dq, dp = hamilton_rhs(model, [0.3, 0.1, -0.2], np.zeros(3))
    assert np.all(dq == 0) and np.all(dp == 0)
    dq, dp = hamilton_rhs(flat, [0, 0, 0], [2.0, -3.0, 5.0])
    np.testing.assert_array_equal(dq, [2, -3, 0])
    np.testing.assert_array_equal(dp, [0, 0, 0])
    dq, dp = hamilton_rhs(heis, [0, 0, 0], [1, 0, 1])
    np.testing.assert_allclose(dq, [1, 0, 0])
    np.testing.assert_allclose(dp, [0, 0.5, 0])


def test_rhs_is_horizontal(model, rng):
    for _ in range(50):
        q, p = rng.uniform(-1, 1, 3), rng.normal(size=3)
        dq, _ = hamilton_rhs(model, q, p)
        th = annihilator_coframe(model, q)
        assert np.max(np.abs(th @ dq)) <= 1e-12 * max(1.0, np.linalg.norm(dq))


@pytest.mark.parametrize("opts", [IntegratorOptions(), RK4], ids=["rk45", "rk4"])
def test_heisenberg_straight_line(heis, opts):
    tr = integrate_geodesic(heis, [0, 0, 0], [1, 0, 0], (0, 1), opts)
    np.testing.assert_allclose(tr.q[-1], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(tr.p, np.tile([1, 0, 0], (len(tr.t), 1)), atol=1e-12)


def test_zero_covector_constant(model):
    tr = integrate_geodesic(model, [0.1, 0.2, 0.3], [0, 0, 0], (0, 1))
    assert np.all(tr.q == [0.1, 0.2, 0.3])
    assert tr.info["H0"] == 0.0


@pytest.mark.parametrize("opts", [TIGHT, IntegratorOptions(method="rk4", steps=2000)],
                         ids=["rk45", "rk4"])
def test_heisenberg_full_loop(heis, opts):
    tr = integrate_geodesic(heis, [0, 0, 0], [0, 1, 2 * np.pi], (0, 1), opts)
    np.testing.assert_allclose(tr.q[-1], [0, 0, Z_FULL_LOOP], atol=1e-10)


def test_heisenberg_z_closed_form(heis):
    for c in (0.5, 1.0, 3.0, -2.0):
        tr = integrate_geodesic(heis, [0, 0, 0], [0, 1, c], (0, 1), TIGHT)
        assert abs(tr.q[-1, 2] - (c - np.sin(c)) / (2 * c * c)) <= 1e-10


def test_rk4_bitwise_reproducible(heis):
    a = integrate_geodesic(heis, [0.1, 0, 0], [0.3, 1, 4], (0, 1), RK4)
    b = integrate_geodesic(heis, [0.1, 0, 0], [0.3, 1, 4], (0, 1), RK4)
    assert a.q.tobytes() == b.q.tobytes() and a.p.tobytes() == b.p.tobytes()


def test_energy_conservation_sample(model, rng):
    for _ in range(10):
        q0, p0 = rng.uniform(-1, 1, 3), rng.normal(size=3)
        tr = integrate_geodesic(model, q0, p0, (0, 1))
        H = hamiltonian_along(model, tr.q, tr.p)
        assert np.max(np.abs(H - H[0])) <= 1e-8 * max(1.0, H[0])


def test_time_reversal(model, rng):
    for _ in range(5):
        q0, p0 = rng.uniform(-1, 1, 3), rng.normal(size=3)
        fw = integrate_geodesic(model, q0, p0, (0, 1))
        bw = integrate_geodesic(model, fw.q[-1], fw.p[-1], (1, 0))
        np.testing.assert_allclose(bw.q[-1], q0, atol=1e-7)
        np.testing.assert_allclose(bw.p[-1], p0, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.25, 4.0), st.integers(0, 10_000))
def test_affine_reparameterization(c, seed):
    model = builtin_model("heisenberg")
    r = np.random.default_rng(seed)
    q0, p0 = r.uniform(-1, 1, 3), r.normal(size=3)
    a = integrate_geodesic(model, q0, p0, (0, 1), TIGHT)
    b = integrate_geodesic(model, q0, c * p0, (0, 1 / c), TIGHT)
    np.testing.assert_allclose(b.q[-1], a.q[-1], atol=1e-8)


def test_linearization_flat_zero_covector(flat):
    J = flow_linearization(flat, [0, 0, 0], [0, 0, 0], (0, 2))
    np.testing.assert_allclose(J[:3, :3], np.eye(3))
    np.testing.assert_allclose(J[:3, 3:], 2 * np.diag([1, 1, 0]))


def test_linearization_zero_span(model):
    assert np.array_equal(flow_linearization(model, [0.2, 0, 0], [1, 2, 3], (0.5, 0.5)), np.eye(6))


@pytest.mark.parametrize("opts", [RK4, TIGHT], ids=["rk4", "rk45"])
def test_linearization_vs_central_differences(heis, opts):
    q0, p0 = np.zeros(3), np.array([1.0, 0, 0])
    J = flow_linearization(heis, q0, p0, (0, 1), opts)
    eps = 1e-6
    for b in range(6):
        e = np.zeros(6)
        e[b] = eps
        plus = integrate_geodesic(heis, q0 + e[:3], p0 + e[3:], (0, 1), opts)
        minus = integrate_geodesic(heis, q0 - e[:3], p0 - e[3:], (0, 1), opts)
        col = np.concatenate([plus.q[-1] - minus.q[-1], plus.p[-1] - minus.p[-1]]) / (2 * eps)
        np.testing.assert_allclose(J[:, b], col, atol=1e-5)


def test_lift_residual(heis):
    tr = integrate_geodesic(heis, [0, 0, 0], [0.4, 1, 3], (0, 1), TIGHT)
    assert lift_residual(heis, tr) <= 1e-9
    doubled = replace(tr, p=2 * tr.p)
    expected = np.max(np.abs(np.einsum("ja,jam->jm", tr.p, np.array(
        [heis.fields(q)[:, :2] for q in tr.q]))))
    assert lift_residual(heis, doubled) == pytest.approx(expected, rel=1e-9)
    still = integrate_geodesic(heis, [0, 0, 0], [0, 0, 0], (0, 1))
    assert lift_residual(heis, still) == 0.0


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_exit_returns_partial(method):
    model = builtin_model("heisenberg", domain_box=[[-0.5, 0.5]] * 3)
    with pytest.raises(OutOfChart) as info:
        integrate_geodesic(model, [0, 0, 0], [1, 0, 0], (0, 1), IntegratorOptions(method=method))
    exc = info.value
    assert exc.exit_time == pytest.approx(0.5, abs=1e-9)
    assert exc.partial.exit_event["t"] == exc.exit_time
    assert exc.partial.q[-1, 0] == pytest.approx(0.5, abs=1e-9)


def test_rk4_converges_fourth_order(heis):
    ref = Z_FULL_LOOP
    errs = [abs(integrate_geodesic(heis, [0, 0, 0], [0, 1, 2 * np.pi], (0, 1),
                                   IntegratorOptions(method="rk4", steps=s)).q[-1, 2] - ref)
            for s in (50, 100)]
    assert 12 < errs[0] / errs[1] < 20
