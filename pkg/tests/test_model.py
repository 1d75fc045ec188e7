import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srkit.errors import ConfigError, DegenerateFrame, OutOfChart
from srkit.expr import compile_expression
from srkit.model import (BUILTIN_CODES, REGISTRY_VERSION, annihilator_coframe, auto_complement,
                         builtin_model, dual_metric, eval_frame, fd_jacobian, frame_jacobian,
                         load_model, model_from_dict)

HEIS_DICT = {"name": "heis-file", "n": 3, "m": 2,
             "frame": [["1", "0", "-q2/2"], ["0", "1", "q1/2"]],
             "complement": [["0", "0", "1"]]}

coords = st.floats(-2.0, 2.0, allow_nan=False)


def test_flat_frame_is_identity(flat):
    assert np.array_equal(eval_frame(flat, [0, 0, 0]), np.eye(3))


def test_heisenberg_frame_columns(heis):
    F = eval_frame(heis, [1, 2, 0])
    np.testing.assert_allclose(F[:, 0], [1, 0, -1])
    np.testing.assert_allclose(F[:, 1], [0, 1, 0.5])
    np.testing.assert_allclose(F[:, 2], [0, 0, 1])


def test_martinet_frame_columns(martinet):
    F = eval_frame(martinet, [2, 0, 0])
    np.testing.assert_allclose(F, np.column_stack([[1, 0, 0], [0, 1, 2], [0, 0, 1]]))


def test_flat_jacobian_zero(flat, rng):
    assert np.all(frame_jacobian(flat, rng.normal(size=3)) == 0)


def test_heisenberg_x1_jacobian(heis, rng):
    J = frame_jacobian(heis, rng.normal(size=3))[0]
    expected = np.zeros((3, 3))
    expected[2, 1] = -0.5
    np.testing.assert_array_equal(J, expected)


def test_martinet_x2_jacobian(martinet):
    J = frame_jacobian(martinet, [1, 0, 0])[1]
    expected = np.zeros((3, 3))
    expected[2, 0] = 1.0
    np.testing.assert_allclose(J, expected)


def test_coframe_examples(flat, heis):
    np.testing.assert_allclose(annihilator_coframe(flat, [0.3, -1, 2]), [[0, 0, 1]])
    np.testing.assert_allclose(annihilator_coframe(heis, [0, 0, 0]), [[0, 0, 1]], atol=1e-15)
    th = annihilator_coframe(heis, [1, 2, 0])[0]
    ref = np.array([1.0, -0.5, 1.0])
    np.testing.assert_allclose(th / np.linalg.norm(th), ref / np.linalg.norm(ref), atol=1e-14)


def test_coframe_unit_in_dual_metric(martinet):
    q = np.array([0.7, -0.2, 0.4])
    th = annihilator_coframe(martinet, q)
    G = dual_metric(eval_frame(martinet, q))
    np.testing.assert_allclose(th @ G @ th.T, np.eye(1), atol=1e-14)
    assert th[0] @ martinet.fields(q)[:, 2] > 0


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(BUILTIN_CODES)), coords, coords, coords)
def test_coframe_annihilates_horizontal_frame(name, x, y, z):
    model = builtin_model(name)
    q = np.array([x, y, z])
    F = eval_frame(model, q)
    th = annihilator_coframe(model, q)
    scale = np.linalg.norm(th) * np.linalg.norm(F[:, : model.m])
    assert np.max(np.abs(th @ F[:, : model.m])) <= 1e-12 * scale
    # invertible on the complement
    assert abs(np.linalg.det(th @ F[:, model.m:])) > 1e-8


def test_analytic_vs_fd_jacobians(model, rng):
    for q in rng.uniform(-2, 2, size=(100, 3)):
        A = model.jacobian(q)
        D = fd_jacobian(model.fields, q, step=1e-5)
        assert np.max(np.abs(A - D)) <= 1e-6


def test_registry():
    assert set(BUILTIN_CODES) == {"flat", "heisenberg", "martinet"}
    assert REGISTRY_VERSION
    for name in BUILTIN_CODES:
        assert builtin_model(name).jacobian_source == "analytic"


def test_model_file_matches_builtin(tmp_path, heis, rng):
    path = tmp_path / "heis.json"
    path.write_text(json.dumps(HEIS_DICT))
    fm = load_model(str(path))
    assert fm.jacobian_source == "finite-difference"
    for q in rng.uniform(-1, 1, size=(10, 3)):
        np.testing.assert_allclose(fm.fields(q), heis.fields(q), atol=1e-15)
        np.testing.assert_allclose(fm.jacobian(q), heis.jacobian(q), atol=1e-7)


def test_auto_complement_completes_frame():
    spec = dict(HEIS_DICT)
    spec.pop("complement")
    m = model_from_dict(spec)
    assert np.linalg.matrix_rank(m.fields(np.zeros(3))) == 3
    C = auto_complement(np.eye(3)[:, :2])
    assert C.shape == (3, 1) and abs(C[2, 0]) == 1.0


def test_domain_box_out_of_chart():
    m = builtin_model("heisenberg", domain_box=[[-1, 1]] * 3)
    with pytest.raises(OutOfChart):
        eval_frame(m, [2, 0, 0])


def test_degenerate_frame():
    spec = {"n": 3, "m": 2, "frame": [["1", "0", "0"], ["2", "0", "0"]],
            "complement": [["0", "0", "1"]]}
    with pytest.raises(DegenerateFrame):
        eval_frame(model_from_dict(spec), [0, 0, 0])


@pytest.mark.parametrize("bad", ["__import__('os')", "q1.real", "abs(q1)", "q9", "1 +"])
def test_expression_grammar_rejects(bad):
    with pytest.raises(ConfigError):
        compile_expression(bad, ["q1", "q2"])


def test_expression_power_operator():
    f = compile_expression("q1^2/2 - -q2", ["q1", "q2"])
    assert f(3.0, 1.0) == 5.5


def test_unknown_model_reference():
    with pytest.raises(ConfigError):
        load_model("no-such-model")
