import numpy as np
import pytest

from lmte import neural
from lmte.neural import (
    AdamState,
    Layer,
    Mlp,
    adam_step,
    backward,
    forward,
    gradient_penalty,
    input_gradient,
    mlp_init,
)


class TestInit:
    def test_deterministic(self):
        a = mlp_init([3, 5, 1], ["relu", "linear"], seed=42)
        b = mlp_init([3, 5, 1], ["relu", "linear"], seed=42)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weight, lb.weight)
            assert np.array_equal(la.bias, lb.bias)

    def test_parameter_count_single_layer(self):
        m = mlp_init([2, 1], ["linear"], seed=0)
        assert sum(p.size for p in m.parameters()) == 3

    def test_glorot_bound(self):
        m = mlp_init([64, 64], ["relu"], seed=1)
        a = np.sqrt(6.0 / 128)
        assert np.abs(m.layers[0].weight).max() <= a
        assert np.all(m.layers[0].bias == 0)

    def test_bad_dims(self):
        with pytest.raises(neural.NeuralError):
            mlp_init([3, 0], ["linear"], seed=0)


class TestForward:
    def test_zero_net_relu(self):
        m = Mlp([Layer(np.zeros((3, 2)), np.zeros(2), "relu")])
        out, _ = forward(m, np.ones((4, 3)))
        assert np.all(out == 0)

    def test_identity_linear(self):
        m = Mlp([Layer(np.eye(3), np.zeros(3), "linear")])
        x = np.random.default_rng(0).normal(size=(5, 3))
        out, _ = forward(m, x)
        assert np.array_equal(out, x)

    def test_matches_independent_arithmetic(self):
        m = mlp_init([4, 6, 5, 2], ["tanh", "relu", "linear"], seed=3)
        x = np.random.default_rng(4).normal(size=(7, 4))
        out, _ = forward(m, x)

        h = x
        for layer in m.layers:
            z = np.array([[sum(h[i, k] * layer.weight[k, j] for k in range(h.shape[1]))
                           + layer.bias[j] for j in range(layer.weight.shape[1])]
                          for i in range(h.shape[0])])
            if layer.activation == "tanh":
                h = np.tanh(z)
            elif layer.activation == "relu":
                h = np.where(z > 0, z, 0.0)
            else:
                h = z
        assert np.allclose(out, h, atol=1e-12)

    def test_softmax_segments_row_stochastic(self):
        m = mlp_init([3, 7], ["softmax_block"], seed=5, segments=[(0, 3), (4, 3)])
        x = np.random.default_rng(6).normal(size=(9, 3)) * 4
        out, _ = forward(m, x)
        assert np.all(np.abs(out[:, 0:3].sum(axis=1) - 1) < 1e-12)
        assert np.all(np.abs(out[:, 4:7].sum(axis=1) - 1) < 1e-12)

    def test_width_mismatch(self):
        m = mlp_init([3, 2], ["linear"], seed=0)
        with pytest.raises(neural.NeuralError):
            forward(m, np.ones((2, 4)))


def scalar_loss_grads(mlp, x, weight_matrix):
    """loss = sum(output * weight_matrix); analytic grads via backward."""
    out, cache = forward(mlp, x)
    grads, gin = backward(mlp, cache, weight_matrix)
    return float((out * weight_matrix).sum()), grads, gin


def fd_param_grads(mlp, x, weight_matrix, h=1e-5):
    grads = []
    for layer in mlp.layers:
        for arr in (layer.weight, layer.bias):
            g = np.zeros_like(arr)
            flat = arr.ravel()
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up, _ = forward(mlp, x)
                flat[i] = old - h
                dn, _ = forward(mlp, x)
                flat[i] = old
                g.ravel()[i] = ((up - dn) * weight_matrix).sum() / (2 * h)
            grads.append(g)
    return grads


class TestBackward:
    def test_matches_finite_differences(self):
        m = mlp_init([3, 5, 4, 2], ["tanh", "tanh", "linear"], seed=7)
        rng = np.random.default_rng(8)
        x = rng.normal(size=(6, 3))
        wm = rng.normal(size=(6, 2))
        _, grads, _ = scalar_loss_grads(m, x, wm)
        fd = fd_param_grads(m, x, wm)
        flate = [g for pair in grads for g in pair]
        for a, b in zip(flate, fd):
            assert np.allclose(a, b, rtol=1e-4, atol=1e-7)

    def test_input_grad_matches_finite_differences(self):
        m = mlp_init([4, 6, 1], ["tanh", "linear"], seed=9)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 4))
        wm = np.ones((3, 1))
        _, _, gin = scalar_loss_grads(m, x, wm)
        h = 1e-5
        fd = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                fd[i, j] = (forward(m, xp)[0].sum() - forward(m, xm)[0].sum()) / (2 * h)
        assert np.allclose(gin, fd, rtol=1e-4, atol=1e-7)

    def test_zero_output_grad(self):
        m = mlp_init([3, 4, 2], ["relu", "linear"], seed=11)
        x = np.random.default_rng(12).normal(size=(5, 3))
        _, cache = forward(m, x)
        grads, gin = backward(m, cache, np.zeros((5, 2)))
        assert all(np.all(g == 0) for pair in grads for g in pair)
        assert np.all(gin == 0)

    def test_single_linear_layer_closed_form(self):
        m = mlp_init([3, 2], ["linear"], seed=13)
        rng = np.random.default_rng(14)
        x = rng.normal(size=(5, 3))
        og = rng.normal(size=(5, 2))
        _, cache = forward(m, x)
        grads, _ = backward(m, cache, og)
        assert np.allclose(grads[0][0], x.T @ og, atol=1e-12)
        assert np.allclose(grads[0][1], og.sum(axis=0), atol=1e-12)

    def test_softmax_block_backward_fd(self):
        m = mlp_init([3, 6], ["softmax_block"], seed=15, segments=[(0, 4), (4, 2)])
        rng = np.random.default_rng(16)
        x = rng.normal(size=(4, 3))
        wm = rng.normal(size=(4, 6))
        _, grads, _ = scalar_loss_grads(m, x, wm)
        fd = fd_param_grads(m, x, wm)
        flate = [g for pair in grads for g in pair]
        for a, b in zip(flate, fd):
            assert np.allclose(a, b, rtol=1e-4, atol=1e-7)


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = [np.array([1.0, 2.0])]
        st = AdamState.for_params(p)
        adam_step(st, p, [np.zeros(2)])
        assert np.array_equal(p[0], [1.0, 2.0])

    def test_first_step_magnitude(self):
        p = [np.array([5.0, -3.0])]
        st = AdamState.for_params(p, lr=2e-4)
        g = np.array([0.7, -0.2])
        adam_step(st, p, [g])
        delta = np.array([5.0, -3.0]) - p[0]
        assert np.allclose(np.abs(delta), 2e-4, rtol=1e-6)
        assert np.all(np.sign(delta) == np.sign(g))

    def test_convex_descent(self):
        w = [np.array([1.0, 1.0])]
        st = AdamState.for_params(w, lr=2e-3)
        losses = []
        for _ in range(100):
            losses.append(float(w[0] @ w[0]))
            adam_step(st, w, [2 * w[0]])
        losses.append(float(w[0] @ w[0]))
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestGradientPenalty:
    def test_unit_norm_linear_critic(self):
        w = np.array([[0.6], [0.8]])  # norm 1
        critic = Mlp([Layer(w, np.zeros(1), "linear")])
        rng = np.random.default_rng(17)
        real = rng.normal(size=(8, 2))
        fake = rng.normal(size=(8, 2))
        pen, grads = gradient_penalty(critic, real, fake, rng)
        assert pen == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(grads[0][0], 0, atol=1e-12)

    def test_scale_two_critic(self):
        critic = Mlp([Layer(np.array([[2.0]]), np.zeros(1), "linear")])
        rng = np.random.default_rng(18)
        pen, grads = gradient_penalty(critic, rng.normal(size=(5, 1)),
                                      rng.normal(size=(5, 1)), rng)
        assert pen == pytest.approx(1.0)
        # d/dw (w-1)^2 = 2(w-1) = 2
        assert grads[0][0][0, 0] == pytest.approx(2.0)

    @pytest.mark.parametrize("acts", [["tanh", "linear"], ["relu", "relu", "linear"]])
    def test_matches_finite_differences(self, acts):
        dims = [3] + [5] * (len(acts) - 1) + [1]
        critic = mlp_init(dims, acts, seed=19)
        rng = np.random.default_rng(20)
        real = rng.normal(size=(6, 3))
        fake = rng.normal(size=(6, 3))

        def penalty_at():
            return gradient_penalty(critic, real, fake, np.random.default_rng(99))

        pen, grads = penalty_at()
        flat_grads = [g for pair in grads for g in pair]
        h = 1e-6
        k = 0
        for layer in critic.layers:
            for arr in (layer.weight, layer.bias):
                fd = np.zeros_like(arr)
                flat = arr.ravel()
                for i in range(flat.size):
                    old = flat[i]
                    flat[i] = old + h
                    up = penalty_at()[0]
                    flat[i] = old - h
                    dn = penalty_at()[0]
                    flat[i] = old
                    fd.ravel()[i] = (up - dn) / (2 * h)
                assert np.allclose(flat_grads[k], fd, rtol=1e-3, atol=1e-6), \
                    f"param {k} mismatch"
                k += 1

    def test_input_gradient_helper(self):
        critic = mlp_init([2, 4, 1], ["tanh", "linear"], seed=21)
        x = np.random.default_rng(22).normal(size=(3, 2))
        g = input_gradient(critic, x)
        h = 1e-6
        for i in range(3):
            for j in range(2):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                fd = (forward(critic, xp)[0][i, 0] - forward(critic, xm)[0][i, 0]) / (2 * h)
                assert g[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-8)
