import numpy as np
import pytest

from taco import _mlp_py, kernels
from taco import neurals as nn
from taco.trainer import (
    Batch,
    actor_loss_and_grad,
    alpha_loss_and_grad,
    critic_loss_and_grad,
)
from oracles import central_diff, naive_mlp, rel_err


def small_layout(rng):
    return nn.NetworkLayout(int(rng.integers(2, 7)), int(rng.integers(1, 3)), (8, 8))


def test_layout_slots_disjoint_and_cover():
    lay = nn.NetworkLayout(8, 2, (64, 64))
    spans = sorted(lay.slots.values())
    assert spans[0][0] == 0 and spans[-1][1] == lay.n
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        assert a1 == b0
    assert lay.q_slice.stop - lay.q_slice.start == lay.q_size
    assert lay.layout_hash == nn.NetworkLayout(8, 2, (64, 64)).layout_hash
    assert lay.layout_hash != nn.NetworkLayout(8, 2, (64, 32)).layout_hash


def test_flatten_unflatten_roundtrip():
    lay = nn.NetworkLayout(5, 2, (8, 8))
    theta = np.arange(lay.n, dtype=float)
    parts = [theta[lay.slot(k)] for k in ("policy", "q1", "q2")]
    assert np.array_equal(np.concatenate(parts), theta)


def test_zero_theta_gives_zero_outputs():
    lay = nn.NetworkLayout(4, 2, (8, 8))
    theta = np.zeros(lay.n)
    out = nn.policy_forward(theta, lay, np.ones(4))
    assert np.array_equal(out.mean, np.zeros(2))
    assert nn.q_forward(theta, lay, np.ones(4), np.zeros(2)) == (0.0, 0.0)


def test_policy_forward_deterministic_and_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lay = small_layout(rng)
        theta = rng.normal(size=lay.n)
        s = rng.normal(size=(5, lay.state_dim))
        a = nn.policy_forward(theta, lay, s)
        b = nn.policy_forward(theta, lay, s)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.log_std, b.log_std)
        ref = naive_mlp(theta[lay.policy_slice], lay.policy_sizes, s)
        np.testing.assert_allclose(a.mean, ref[:, :lay.action_dim], atol=1e-12, rtol=0)
        np.testing.assert_allclose(a.log_std, np.clip(ref[:, lay.action_dim:], -20, 2), atol=1e-12, rtol=0)


def test_q_forward_matches_naive_and_swaps():
    rng = np.random.default_rng(4)
    lay = nn.NetworkLayout(3, 2, (8, 8))
    theta = rng.normal(size=lay.n)
    s, a = rng.normal(size=(6, 3)), rng.uniform(-1, 1, size=(6, 2))
    q1, q2 = nn.q_forward(theta, lay, s, a)
    x = np.concatenate([s, a], 1)
    np.testing.assert_allclose(q1, naive_mlp(theta[lay.slot("q1")], lay.q_sizes, x)[:, 0], atol=1e-12, rtol=0)
    np.testing.assert_allclose(q2, naive_mlp(theta[lay.slot("q2")], lay.q_sizes, x)[:, 0], atol=1e-12, rtol=0)
    swapped = theta.copy()
    swapped[lay.slot("q1")], swapped[lay.slot("q2")] = theta[lay.slot("q2")], theta[lay.slot("q1")]
    r1, r2 = nn.q_forward(swapped, lay, s, a)
    assert np.array_equal(r1, q2) and np.array_equal(r2, q1)


def test_dimension_mismatch_rejected():
    lay = nn.NetworkLayout(4, 2, (8,))
    with pytest.raises(ValueError):
        nn.policy_forward(np.zeros(lay.n), lay, np.zeros(5))
    with pytest.raises(ValueError):
        nn.policy_forward(np.zeros(lay.n + 1), lay, np.zeros(4))


def test_vanishing_noise_gives_tanh_mean():
    out = nn.PolicyOutput(np.array([0.3, -1.2]), np.array([-20.0, -20.0]))
    a, _ = nn.sample_action(out, np.random.default_rng(0))
    assert np.max(np.abs(a - np.tanh(out.mean))) < 1e-6
    d, _ = nn.sample_action(out, deterministic=True)
    assert np.array_equal(d, np.tanh(out.mean))


def test_sample_action_reproducible():
    out = nn.PolicyOutput(np.array([0.1, 0.2]), np.array([-0.5, 0.0]))
    a1, l1 = nn.sample_action(out, np.random.default_rng(7))
    a2, l2 = nn.sample_action(out, np.random.default_rng(7))
    assert np.array_equal(a1, a2) and l1 == l2
    assert np.all(np.abs(a1) < 1)


@pytest.mark.parametrize("seed", range(20))
def test_log_prob_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    out = nn.PolicyOutput(np.array([rng.uniform(-1, 1)]), np.array([rng.uniform(-1.0, 0.5)]))
    # grid dense near the edges: a = tanh(u) with a uniform grid in u
    u = np.linspace(-12, 12, 200001)
    a = np.tanh(u)
    dens = np.exp(nn.action_log_prob(out, a[:, None]))
    total = np.trapezoid(dens, a)
    assert abs(total - 1.0) < 1e-3


def test_soft_update():
    rng = np.random.default_rng(0)
    t, o = rng.normal(size=10), rng.normal(size=10)
    expected = 0.995 * t + 0.005 * o
    np.testing.assert_allclose(nn.soft_update(t.copy(), o, 0.005), expected, rtol=0, atol=1e-15)
    assert np.array_equal(nn.soft_update(t.copy(), o, 1.0), o)
    with pytest.raises(ValueError):
        nn.soft_update(t, o, 0.0)


def _rand_batch(rng, lay, B=4):
    return Batch(rng.normal(size=(B, lay.state_dim)), rng.uniform(-0.9, 0.9, size=(B, lay.action_dim)),
                 rng.normal(size=B), rng.normal(size=(B, lay.state_dim)), (rng.random(B) < 0.3).astype(float))


@pytest.mark.parametrize("seed", range(10))
def test_q_output_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    lay = small_layout(rng)
    theta = nn.init_theta(lay, rng)
    s, a = rng.normal(size=(3, lay.state_dim)), rng.uniform(-1, 1, size=(3, lay.action_dim))
    c1, c2 = rng.normal(size=3), rng.normal(size=3)

    def f(th):
        q1, q2 = nn.q_forward(th, lay, s, a)
        return float(c1 @ q1 + c2 @ q2)

    qp = theta[lay.q_slice]
    qo = nn.q_forward_cached(qp, lay, s, a)
    g, da = nn.q_backward(qp, lay, qo, c1, c2, want_action=True)
    fd = central_diff(f, theta)
    assert rel_err(g, fd[lay.q_slice]) < 1e-4
    assert np.all(fd[lay.policy_slice] == 0)

    def fa(act):
        q1, q2 = nn.q_forward(theta, lay, s, act.reshape(a.shape))
        return float(c1 @ q1 + c2 @ q2)

    assert rel_err(da, central_diff(fa, a.ravel()).reshape(a.shape)) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_log_prob_gradient_matches_fd(seed):
    rng = np.random.default_rng(100 + seed)
    lay = small_layout(rng)
    theta = nn.init_theta(lay, rng)
    s = rng.normal(size=(4, lay.state_dim))
    z = rng.standard_normal((4, lay.action_dim))

    def f(th):
        out = nn.policy_forward(th, lay, s)
        return float(np.sum(nn.sample_action(out, noise=z)[1]))

    out = nn.policy_forward(theta, lay, s)
    a, _ = nn.sample_action(out, noise=z)
    dm, dls = nn.squash_grads(out, z, a, np.ones(4), np.zeros_like(a))
    g = nn.policy_backward(theta, lay, out, dm, dls)
    assert rel_err(g, central_diff(f, theta)) < 1e-4


def test_constant_loss_zero_gradient():
    lay = nn.NetworkLayout(3, 1, (8, 8))
    theta = nn.init_theta(lay, np.random.default_rng(0))
    out = nn.policy_forward(theta, lay, np.ones((2, 3)))
    g = nn.policy_backward(theta, lay, out, np.zeros((2, 1)), np.zeros((2, 1)))
    assert not g.any()


@pytest.mark.parametrize("seed", range(8))
def test_sac_loss_gradients_match_fd(seed):
    rng = np.random.default_rng(200 + seed)
    lay = small_layout(rng)
    theta = nn.init_theta(lay, rng)
    b = _rand_batch(rng, lay)
    y = rng.normal(size=len(b))
    lq, gq = critic_loss_and_grad(theta, lay, b.s, b.a, y)
    assert rel_err(gq, central_diff(lambda th: critic_loss_and_grad(th, lay, b.s, b.a, y)[0], theta)) < 1e-4

    z = rng.standard_normal((len(b), lay.action_dim))
    alpha = 0.3
    _, gpi, logp = actor_loss_and_grad(theta, lay, b.s, z, alpha)
    fd = central_diff(lambda th: actor_loss_and_grad(th, lay, b.s, z, alpha)[0], theta)
    ps = lay.policy_slice
    assert rel_err(gpi[ps], fd[ps]) < 1e-4
    assert not gpi[lay.q_slice].any()

    la, gla = alpha_loss_and_grad(-0.7, logp, -2.0)
    fd_a = central_diff(lambda v: alpha_loss_and_grad(float(v[0]), logp, -2.0)[0], np.array([-0.7]))
    assert rel_err(gla, fd_a) < 1e-4


def test_backends_agree():
    rng = np.random.default_rng(0)
    sizes = (6, 16, 16, 3)
    p = rng.normal(size=_mlp_py.n_params(sizes))
    x = rng.normal(size=(7, 6))
    o1, c1 = _mlp_py.mlp_forward(p, sizes, x)
    o2, c2 = kernels.mlp_forward(p, sizes, x)
    np.testing.assert_allclose(o1, o2, rtol=1e-12, atol=1e-12)
    d = rng.normal(size=o1.shape)
    g1, dx1 = _mlp_py.mlp_backward(p, sizes, c1, d, True, True)
    g2, dx2 = kernels.mlp_backward(p, sizes, c2, d, True, True)
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dx1, dx2, rtol=1e-12, atol=1e-12)


def test_backend_selection_env_override():
    import subprocess
    import sys

    code = "import taco; print(taco.BACKEND)"
    env = dict(__import__("os").environ, TACO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("compiled", "python")
