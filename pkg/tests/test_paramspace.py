import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taco.paramspace import (
    CompositionalMatrix,
    CompositionalVector,
    MaskoutPolicy,
    NoValidTasksError,
    ParameterSet,
    compose,
    compose_all,
    grad_phi,
    grad_w,
    load_checkpoint,
    mask_losses,
    reset_w,
    save_checkpoint,
)
from oracles import central_diff, rel_err

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_compose_hand_example():
    phi = ParameterSet([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(compose(phi, CompositionalVector(0, [0.5, 0.5])), [1.5, 3.5])


def test_compose_one_hot_and_k1():
    rng = np.random.default_rng(0)
    phi = ParameterSet(rng.normal(size=(7, 3)))
    for i in range(3):
        assert np.array_equal(compose(phi, np.eye(3)[i]), phi.data[:, i])
    phi1 = ParameterSet(rng.normal(size=(7, 1)))
    assert np.array_equal(compose(phi1, [1.0]), phi1.data[:, 0])


def test_compose_rejects_mismatch():
    with pytest.raises(ValueError):
        compose(ParameterSet(np.ones((3, 2))), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        ParameterSet(np.array([[np.nan]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite),
       arrays(np.float64, 3, elements=finite), finite, finite)
def test_compose_linear(phi, w1, w2, a, b):
    lhs = compose(phi, a * w1 + b * w2)
    rhs = a * compose(phi, w1) + b * compose(phi, w2)
    scale = 1.0 + np.abs(phi).sum() * (abs(a) * np.abs(w1).max() + abs(b) * np.abs(w2).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_compose_all_columns():
    rng = np.random.default_rng(1)
    phi = ParameterSet(rng.normal(size=(5, 3)))
    W = CompositionalMatrix(rng.normal(size=(3, 2)))
    theta = compose_all(phi, W)
    for t in range(2):
        np.testing.assert_allclose(theta[:, t], compose(phi, W.column(t)), rtol=0, atol=1e-15)
    assert np.array_equal(compose_all(phi, CompositionalMatrix(np.eye(3))), phi.data)


def _loss(theta, c):
    # a smooth non-quadratic scalar loss of the composed parameters
    return float(np.sum(np.sin(c * theta)) + 0.5 * np.sum(theta ** 2 * c))


@pytest.mark.parametrize("seed", range(10))
def test_routed_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    n, K = int(rng.integers(3, 20)), int(rng.integers(1, 5))
    phi, w, c = rng.normal(size=(n, K)), rng.normal(size=K), rng.normal(size=n)
    theta = phi @ w
    g_theta = c * np.cos(c * theta) + c * theta
    fd_phi = central_diff(lambda p: _loss(p.reshape(n, K) @ w, c), phi.ravel()).reshape(n, K)
    fd_w = central_diff(lambda v: _loss(phi @ v, c), w)
    assert rel_err(grad_phi(g_theta, w), fd_phi) < 1e-4
    assert rel_err(grad_w(g_theta, phi), fd_w) < 1e-4


def test_gradient_special_cases():
    rng = np.random.default_rng(2)
    g = rng.normal(size=6)
    gp = grad_phi(g, np.eye(3)[1])
    assert np.array_equal(gp[:, 1], g) and not gp[:, [0, 2]].any()
    assert not grad_phi(np.zeros(6), rng.normal(size=3)).any()
    q, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    out = grad_w(q[:, 2], q)
    np.testing.assert_allclose(out, [0, 0, 1.0], atol=1e-12)
    assert not grad_w(np.zeros(6), q).any()
    with pytest.raises(ValueError):
        grad_phi([np.inf, 0.0], [1.0])


def test_mask_losses_threshold_example():
    masked, invalid, valid = mask_losses([10.0, 4e3], MaskoutPolicy(3e3))
    assert masked.tolist() == [10.0, 0.0] and invalid == [1] and valid == [0]


def test_mask_losses_edge_cases():
    pol = MaskoutPolicy(3e3)
    masked, invalid, valid = mask_losses([1.0, 3e3, 2.0], pol)
    assert masked.tolist() == [1.0, 3e3, 2.0] and invalid == [] and valid == [0, 1, 2]
    masked, invalid, valid = mask_losses([5e3, np.inf, np.nan], pol)
    assert masked.tolist() == [0, 0, 0] and invalid == [0, 1, 2] and valid == []
    with pytest.raises(ValueError):
        MaskoutPolicy(0.0)


def test_reset_single_valid_is_exact_copy():
    W = CompositionalMatrix(np.random.default_rng(0).normal(size=(4, 3)))
    w = reset_w(W, [2], np.random.default_rng(1))
    assert np.array_equal(w, W.data[:, 2])


def test_reset_requires_valid_tasks():
    with pytest.raises(NoValidTasksError):
        reset_w(CompositionalMatrix(np.ones((2, 2))), [], np.random.default_rng(0))


def test_reset_in_convex_hull():
    rng = np.random.default_rng(3)
    W = CompositionalMatrix(rng.normal(size=(5, 4)))
    for _ in range(200):
        w, beta = reset_w(W, [0, 1, 3], rng, return_beta=True)
        assert np.all(beta >= 0) and abs(beta.sum() - 1) <= 1e-9
        np.testing.assert_allclose(W.data[:, [0, 1, 3]] @ beta, w, atol=1e-12)


def test_reset_beta_uniform_simplex_moments():
    rng = np.random.default_rng(4)
    W = CompositionalMatrix(np.eye(3))
    draws = np.array([reset_w(W, [0, 1, 2], rng) for _ in range(10_000)])
    k = 3
    se = np.sqrt((k - 1) / (k * k * (k + 1)) / len(draws))
    assert np.all(np.abs(draws.mean(0) - 1 / k) < 3 * se)


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(5)
    phi = ParameterSet(rng.normal(size=(17, 4)))
    W = CompositionalMatrix(rng.normal(size=(4, 3)), [0, 1, 2])
    p = save_checkpoint(tmp_path / "ck.npz", phi, W, "abc123", extra={"log_alpha": rng.normal(size=3)},
                        meta={"env_step": 10})
    ck = load_checkpoint(p)
    assert np.array_equal(ck.phi.data, phi.data) and ck.phi.data.tobytes() == phi.data.tobytes()
    assert np.array_equal(ck.W.data, W.data) and ck.W.task_ids == [0, 1, 2]
    assert ck.layout_hash == "abc123" and ck.meta["env_step"] == 10
    assert ck.extra["log_alpha"].shape == (3,)
