import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ergodic_rl.nn import (
    AdamState,
    InvalidConfigurationError,
    Mlp,
    NumericError,
    ParamGrads,
    ShapeError,
    adam_step,
    grad_check,
    mlp_backward,
    mlp_forward,
    mlp_init,
    smooth_l1,
    stack_mlps,
    unstack_mlp,
)

from oracles import dense_forward, numeric_grad


def test_init_is_deterministic():
    a = mlp_init((1, 16, 2), 7)
    b = mlp_init((1, 16, 2), 7)
    for x, y in zip(a.params(), b.params()):
        assert np.array_equal(x, y)


def test_init_shapes():
    m = mlp_init((1, 16, 2), 0)
    assert [w.shape for w in m.weights] == [(16, 1), (2, 16)]
    assert [b.shape for b in m.biases] == [(16,), (2,)]
    assert m.layer_dims == (1, 16, 2)


def test_init_bound_and_zero_bias():
    m = mlp_init((2, 32, 2), 1)
    for w in m.weights:
        assert np.all(np.abs(w) <= 1 / np.sqrt(w.shape[1]))
    assert all(np.all(b == 0) for b in m.biases)


@pytest.mark.parametrize("dims", [(), (3,), (1, 0, 2), (1, -2)])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(InvalidConfigurationError):
        mlp_init(dims, 0)


def test_zero_network_gives_zero():
    m = Mlp([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    out, _ = mlp_forward(m, [1.0, -2.0, 3.0])
    assert np.array_equal(out, np.zeros(2))


def test_affine_identity():
    m = Mlp([np.array([[2.0]])], [np.array([1.0])])
    out, _ = mlp_forward(m, [3.0])
    assert out[0] == 7.0


def test_forward_is_pure():
    m = mlp_init((3, 8, 2), 4)
    x = np.array([0.3, -1.0, 2.0])
    a, _ = mlp_forward(m, x)
    b, _ = mlp_forward(m, x)
    assert np.array_equal(a, b)


def test_forward_matches_reference():
    m = mlp_init((3, 8, 5, 2), 11)
    x = np.array([0.3, -1.0, 2.0])
    out, cache = mlp_forward(m, x)
    assert np.allclose(out, dense_forward(m.weights, m.biases, x), rtol=0, atol=1e-14)
    assert len(cache.pre_activations) == m.n_layers


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        mlp_forward(mlp_init((2, 4, 1), 0), [1.0, 2.0, 3.0])


def test_population_matches_individual_networks():
    nets = [mlp_init((2, 6, 3), s) for s in range(5)]
    pop = stack_mlps(nets)
    x = np.random.default_rng(0).normal(size=(5, 7, 2))
    out, cache = mlp_forward(pop, x)
    g_out = np.random.default_rng(1).normal(size=out.shape)
    grads = mlp_backward(pop, cache, g_out)
    for i, net in enumerate(nets):
        o, c = mlp_forward(net, x[i])
        assert np.array_equal(o, out[i])
        gi = mlp_backward(net, c, g_out[i])
        for a, b in zip(gi.params(), grads.params()):
            assert np.allclose(a, b[i], rtol=0, atol=1e-13)
    assert unstack_mlp(pop, 2).layer_dims == (2, 6, 3)


def test_backward_zero_output_grad():
    m = mlp_init((1, 16, 2), 3)
    _, cache = mlp_forward(m, [0.7])
    g = mlp_backward(m, cache, np.zeros(2))
    assert all(np.all(x == 0) for x in g.params())


def test_backward_scalar_chain_rule():
    m = Mlp([np.array([[1.5]])], [np.array([0.0])])
    _, cache = mlp_forward(m, [4.0])
    g = mlp_backward(m, cache, np.array([1.0]))
    assert g.weights[0][0, 0] == 4.0
    assert g.biases[0][0] == 1.0


def test_backward_relu_at_zero_is_zero():
    # hidden pre-activation exactly 0 must block the gradient
    m = Mlp([np.array([[0.0]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])
    _, cache = mlp_forward(m, [1.0])
    g = mlp_backward(m, cache, np.array([1.0]))
    assert g.weights[0][0, 0] == 0.0 and g.biases[0][0] == 0.0


def test_backward_cache_mismatch():
    a = mlp_init((1, 4, 2), 0)
    b = mlp_init((1, 4, 4, 2), 0)
    _, cache = mlp_forward(a, [1.0])
    with pytest.raises(ShapeError):
        mlp_backward(b, cache, np.ones(2))


def test_backward_against_independent_finite_differences():
    m = mlp_init((1, 16, 2), 5)
    x = np.array([0.8])
    out, cache = mlp_forward(m, x)
    w = np.array([0.3, -1.2])
    g = mlp_backward(m, cache, w)
    for p, ga in zip(m.params(), g.params()):
        gn = numeric_grad(lambda: float(dense_forward(m.weights, m.biases, x) @ w), p)
        assert np.allclose(ga, gn, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize(
    "pred,target,loss,grad",
    [(1.3, 1.3, 0.0, 0.0), (2.0, 0.0, 1.5, 1.0), (0.5, 0.0, 0.125, 0.5), (-3.0, 0.0, 2.5, -1.0)],
)
def test_smooth_l1_branches(pred, target, loss, grad):
    assert smooth_l1(pred, target) == (loss, grad)


def test_smooth_l1_continuous_at_one():
    below = smooth_l1(1 - 1e-12, 0.0)
    at = smooth_l1(1.0, 0.0)
    assert at == (0.5, 1.0)
    assert below[0] == pytest.approx(0.5, abs=1e-11)
    assert below[1] == pytest.approx(1.0, abs=1e-11)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_smooth_l1_rejects_non_finite(bad):
    with pytest.raises(NumericError):
        smooth_l1(bad, 0.0)


def test_adam_zero_grad_fresh_state_is_identity():
    m = mlp_init((1, 4, 2), 0)
    st_ = AdamState.zeros_like(m, 0.1)
    g = mlp_backward(m, mlp_forward(m, [1.0])[1], np.zeros(2))
    new, state = adam_step(m, g, st_)
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), new.params()))
    assert state.step_count == 1 and st_.step_count == 0


def test_adam_first_step_by_hand():
    # t=1: m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
    m = Mlp([np.array([[0.5, -0.25]])], [np.array([1.0])])
    grads = ParamGrads([np.array([[2.0, -0.5]])], [np.array([0.0])])
    lr = 0.01
    new, state = adam_step(m, grads, AdamState.zeros_like(m, lr))
    eps = 1e-8
    g = np.array([[2.0, -0.5]])
    m1 = (1 - 0.9) * g
    v1 = (1 - 0.999) * g * g
    expected = np.array([[0.5, -0.25]]) - lr * (m1 / (1 - 0.9)) / (np.sqrt(v1 / (1 - 0.999)) + eps)
    assert np.array_equal(new.weights[0], expected)
    # bias correction makes the first step a unit step against the gradient sign
    assert np.allclose(new.weights[0] - m.weights[0], -lr * np.sign(g), rtol=0, atol=1e-8)
    assert np.array_equal(new.biases[0], np.array([1.0]))
    assert np.array_equal(state.first_moment[0], m1)
    assert np.array_equal(state.second_moment[0], v1)


def test_adam_is_deterministic_and_pure():
    m = mlp_init((2, 5, 1), 2)
    _, cache = mlp_forward(m, [0.1, 0.2])
    g = mlp_backward(m, cache, np.ones(1))
    s = AdamState.zeros_like(m, 0.01)
    a, sa = adam_step(m, g, s)
    b, sb = adam_step(m, g, s)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert sa.step_count == sb.step_count == 1


def test_adam_shape_mismatch():
    m = mlp_init((1, 4, 2), 0)
    other = mlp_init((1, 3, 2), 0)
    g = mlp_backward(other, mlp_forward(other, [1.0])[1], np.ones(2))
    with pytest.raises(ShapeError):
        adam_step(m, g, AdamState.zeros_like(m, 0.1))


def test_adam_converges_on_quadratic():
    m = Mlp([np.array([[0.0]])], [np.array([0.0])])
    state = AdamState.zeros_like(m, 0.01)
    for _ in range(5000):
        w = m.weights[0][0, 0]
        g = ParamGrads([np.array([[2 * (w - 3)]])], [np.array([0.0])])
        m, state = adam_step(m, g, state)
    assert abs(m.weights[0][0, 0] - 3) < 0.01
    assert state.step_count == 5000


def _huber_head(target):
    def loss_fn(out):
        loss, grad = smooth_l1(out, target)
        return float(np.sum(loss)), grad
    return loss_fn


def test_grad_check_dqn_shape_with_smooth_l1():
    m = mlp_init((1, 16, 2), 9)
    assert grad_check(m, [0.6], _huber_head(np.array([0.3, 2.5]))) < 1e-4


def test_grad_check_zero_network():
    m = Mlp([np.zeros((4, 1)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    assert grad_check(m, [0.0]) == 0.0


def test_grad_check_critic_shape():
    m = mlp_init((2, 32, 1), 3)
    assert grad_check(m, [0.4, -0.9]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    hidden=st.integers(1, 12),
    n_in=st.integers(1, 3),
    n_out=st.integers(1, 3),
    x=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_grad_check_property(seed, hidden, n_in, n_out, x):
    m = mlp_init((n_in, hidden, n_out), seed)
    xs = np.array(x[:n_in])
    # a weight on an input like 1e-10 has a gradient below the finite-difference
    # roundoff floor (about eps / h); exact zeros are fine since both sides give 0
    assume(np.all((xs == 0) | (np.abs(xs) > 1e-6)))
    # central differences are meaningless within h of a ReLU kink
    _, cache = mlp_forward(m, xs)
    assume(np.all(np.abs(cache.pre_activations[0]) > 1e-3))
    assert grad_check(m, xs) < 1e-4
