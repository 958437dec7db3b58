"""Network tests: forward algebra, finite-difference gradient oracle, SGD
updates, and snapshot round-trips."""

import numpy as np
import pytest

from boosthdp.mlp import Mlp, MlpFormatError, MlpGradients, NonFiniteUpdateError


def loss_given_upstream(net, x, dldy):
    """Scalar loss L = dldy . y(x); its exact gradients are what backprop returns."""
    y, _ = net.forward(x)
    return float(dldy @ y)


def fd_weight_grads(net, x, dldy, h=1e-5):
    grads = []
    for w in net.weights:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            keep = w[idx]
            w[idx] = keep + h
            lp = loss_given_upstream(net, x, dldy)
            w[idx] = keep - h
            lm = loss_given_upstream(net, x, dldy)
            w[idx] = keep
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    for b in net.biases:
        g = np.zeros_like(b)
        for idx in np.ndindex(b.shape):
            keep = b[idx]
            b[idx] = keep + h
            lp = loss_given_upstream(net, x, dldy)
            b[idx] = keep - h
            lm = loss_given_upstream(net, x, dldy)
            b[idx] = keep
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def fd_input_grad(net, x, dldy, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        g[i] = (loss_given_upstream(net, xp, dldy) - loss_given_upstream(net, xm, dldy)) / (2 * h)
    return g


class TestInit:
    def test_same_seed_bit_identical(self):
        a = Mlp.init([5, 5, 5, 1], "linear", seed=3)
        b = Mlp.init([5, 5, 5, 1], "linear", seed=3)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert a.dumps() == b.dumps()

    def test_critic_topology_shapes(self):
        net = Mlp.init([5, 5, 5, 1], "linear", seed=0)
        assert [w.shape for w in net.weights] == [(5, 5), (5, 5), (1, 5)]
        assert all(np.all(b == 0.0) for b in net.biases)

    def test_action_topology_shapes(self):
        net = Mlp.init([4, 5, 5, 1], "sigmoid", seed=0)
        assert [w.shape for w in net.weights] == [(5, 4), (5, 5), (1, 5)]

    def test_weight_bound_respects_fan_in(self):
        net = Mlp.init([16, 8, 1], "linear", seed=1)
        assert np.max(np.abs(net.weights[0])) <= 1.0 / 4.0
        assert np.max(np.abs(net.weights[1])) <= 1.0 / np.sqrt(8.0)

    def test_rejects_bad_sizes(self):
        for sizes in ([], [3], [3, 0, 1]):
            with pytest.raises(ValueError):
                Mlp.init(sizes, "linear", seed=0)
        with pytest.raises(ValueError):
            Mlp.init([2, 1], "relu", seed=0)


class TestForward:
    def test_zero_net_linear_outputs_zero(self):
        net = Mlp.init([3, 4, 2], "linear", seed=0)
        net.weights = [np.zeros_like(w) for w in net.weights]
        y, _ = net.forward([1.0, -2.0, 3.0])
        assert np.all(y == 0.0)

    def test_zero_net_sigmoid_outputs_half(self):
        net = Mlp.init([3, 4, 2], "sigmoid", seed=0)
        net.weights = [np.zeros_like(w) for w in net.weights]
        y, _ = net.forward([5.0, 5.0, 5.0])
        assert np.allclose(y, 0.5)

    def test_single_linear_layer_is_affine(self):
        net = Mlp.init([1, 1], "linear", seed=0)
        net.weights = [np.array([[2.5]])]
        net.biases = [np.array([0.0])]
        y, _ = net.forward([3.0])
        assert y[0] == pytest.approx(7.5)

    def test_rejects_dimension_mismatch(self):
        net = Mlp.init([3, 2], "linear", seed=0)
        with pytest.raises(ValueError):
            net.forward([1.0, 2.0])

    def test_sigmoid_output_bounded(self):
        net = Mlp.init([2, 5, 1], "sigmoid", seed=9)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.uniform(-1e6, 1e6, size=2)
            y, _ = net.forward(x)
            assert 0.0 < y[0] < 1.0


class TestGradients:
    def test_zero_upstream_gives_zero_grads(self):
        net = Mlp.init([4, 5, 1], "linear", seed=2)
        x = np.array([0.3, -0.1, 0.7, 0.2])
        _, cache = net.forward(x)
        grads = net.grad_weights(cache, [0.0])
        assert all(np.all(g == 0.0) for g in grads.d_weights + grads.d_biases)
        assert np.all(net.grad_input(cache, [0.0]) == 0.0)

    def test_hand_computed_chain_rule(self):
        # two stacked affine maps: composite gradient must follow the product rule
        w1 = np.array([[1.0, 2.0], [3.0, -1.0]])
        w2 = np.array([[0.5, -2.0], [1.0, 4.0]])
        first = Mlp([2, 2], [w1.copy()], [np.zeros(2)], "linear")
        second = Mlp([2, 2], [w2.copy()], [np.zeros(2)], "linear")
        x = np.array([1.0, -1.0])
        dldy = np.array([1.0, 2.0])
        h, cache1 = first.forward(x)
        _, cache2 = second.forward(h)
        dldh = second.grad_input(cache2, dldy)
        assert np.allclose(dldh, w2.T @ dldy)
        grads1 = first.grad_weights(cache1, dldh)
        assert np.allclose(grads1.d_weights[0], np.outer(w2.T @ dldy, x))
        assert np.allclose(first.grad_input(cache1, dldh), w1.T @ w2.T @ dldy)

    def test_single_layer_input_grad_is_w_transpose(self):
        net = Mlp.init([3, 1], "linear", seed=4)
        x = np.array([0.1, 0.2, 0.3])
        _, cache = net.forward(x)
        g = net.grad_input(cache, [2.0])
        assert np.allclose(g, net.weights[0].T @ np.array([2.0]))

    def test_matches_finite_differences_on_random_nets(self):
        # the acceptance-grade oracle: 100 random (net, input, upstream) triples
        rng = np.random.default_rng(7)
        worst = 0.0
        for trial in range(100):
            depth = rng.integers(1, 4)
            sizes = [5] + [int(rng.integers(2, 7)) for _ in range(depth)] + [
                int(rng.integers(1, 4))
            ]
            act = "sigmoid" if trial % 3 == 0 else "linear"
            net = Mlp.init(sizes, act, seed=int(rng.integers(0, 2**31)))
            net.weights = [w * 2.0 for w in net.weights]
            net.biases = [rng.normal(0, 0.3, size=b.shape) for b in net.biases]
            x = rng.normal(0, 1.0, size=sizes[0])
            dldy = rng.normal(0, 1.0, size=sizes[-1])
            _, cache = net.forward(x)
            grads = net.grad_weights(cache, dldy)
            analytic = grads.d_weights + grads.d_biases
            numeric = fd_weight_grads(net, x, dldy)
            scale = max(max(np.max(np.abs(a)) for a in analytic), 1e-6)
            for a, n in zip(analytic, numeric):
                worst = max(worst, float(np.max(np.abs(a - n)) / scale))
            gi = net.grad_input(cache, dldy)
            ni = fd_input_grad(net, x, dldy)
            iscale = max(np.max(np.abs(gi)), 1e-6)
            worst = max(worst, float(np.max(np.abs(gi - ni)) / iscale))
        print(f"worst gradient deviation vs finite differences: {worst:.3e}")
        assert worst < 1e-6

    def test_rejects_foreign_cache(self):
        net = Mlp.init([3, 4, 1], "linear", seed=0)
        other = Mlp.init([3, 5, 1], "linear", seed=0)
        _, cache = other.forward([1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            net.grad_weights(cache, [1.0])


class TestApplyUpdate:
    def test_zero_learning_rate_is_identity(self):
        net = Mlp.init([2, 3, 1], "linear", seed=5)
        x = np.array([0.4, -0.6])
        _, cache = net.forward(x)
        grads = net.grad_weights(cache, [1.0])
        before = net.dumps()
        net.apply_update(grads, 0.0)
        assert net.dumps() == before

    def test_quadratic_hand_arithmetic(self):
        # scalar net y = w*x at x=1; loss y^2 from w=1 with lr=0.1 -> w=0.8
        net = Mlp.init([1, 1], "linear", seed=0)
        net.weights = [np.array([[1.0]])]
        y, cache = net.forward([1.0])
        grads = net.grad_weights(cache, [2.0 * y[0]])
        net.apply_update(grads, 0.1)
        assert net.weights[0][0, 0] == pytest.approx(0.8)

    def test_quadratic_converges_monotonically(self):
        # loss (y - 3)^2 with y = w*x + b, x=2: curvature on y is 2(x^2+1) = 10,
        # lr=0.05 contracts the error by exactly 1/2 per step
        net = Mlp.init([1, 1], "linear", seed=0)
        net.weights = [np.array([[0.0]])]
        errs = []
        for _ in range(40):
            y, cache = net.forward([2.0])
            errs.append(abs(y[0] - 3.0))
            grads = net.grad_weights(cache, [2.0 * (y[0] - 3.0)])
            net.apply_update(grads, 0.05)
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-6

    def test_refuses_non_finite_update(self):
        net = Mlp.init([2, 2, 1], "linear", seed=6)
        _, cache = net.forward([1.0, 1.0])
        grads = net.grad_weights(cache, [1.0])
        grads.d_weights[0][0, 0] = np.inf
        before = net.dumps()
        with pytest.raises(NonFiniteUpdateError):
            net.apply_update(grads, 0.01)
        assert net.dumps() == before


class TestSnapshot:
    def test_round_trip_identity(self, tmp_path):
        net = Mlp.init([4, 5, 5, 1], "sigmoid", seed=7)
        net.biases = [b + 0.123456789123456789 for b in net.biases]
        path = tmp_path / "net.mlp"
        net.save(path)
        back = Mlp.load(path)
        assert back.layer_sizes == net.layer_sizes
        assert back.output_activation == net.output_activation
        for w1, w2 in zip(net.weights, back.weights):
            assert np.array_equal(w1, w2)
        for b1, b2 in zip(net.biases, back.biases):
            assert np.array_equal(b1, b2)
        assert back.dumps() == net.dumps()

    def test_load_save_matches_fresh_init(self, tmp_path):
        path = tmp_path / "net.mlp"
        Mlp.init([5, 5, 5, 1], "linear", seed=7).save(path)
        assert Mlp.load(path).dumps() == Mlp.init([5, 5, 5, 1], "linear", seed=7).dumps()

    def test_truncated_file_rejected(self, tmp_path):
        net = Mlp.init([3, 4, 1], "linear", seed=1)
        text = net.dumps()
        lines = text.splitlines()
        path = tmp_path / "broken.mlp"
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(MlpFormatError, match="parameter rows"):
            Mlp.load(path)

    def test_bad_header_and_values_rejected(self):
        with pytest.raises(MlpFormatError, match="line 1"):
            Mlp.loads("nope\n")
        net = Mlp.init([2, 1], "linear", seed=0)
        text = net.dumps().replace(repr(float(net.weights[0][0, 0])), "bogus", 1)
        with pytest.raises(MlpFormatError, match="line 4"):
            Mlp.loads(text)

    def test_wrong_row_length_rejected(self):
        net = Mlp.init([2, 1], "linear", seed=0)
        lines = net.dumps().splitlines()
        lines[3] = lines[3] + " 0.5"
        with pytest.raises(MlpFormatError, match="expected 3 values"):
            Mlp.loads("\n".join(lines) + "\n")


class TestDeterminism:
    def test_outputs_and_grads_reproducible(self):
        results = []
        for _ in range(2):
            net = Mlp.init([5, 5, 5, 1], "linear", seed=11)
            x = np.linspace(-1.0, 1.0, 5)
            y, cache = net.forward(x)
            grads = net.grad_weights(cache, [1.0])
            results.append((y.tobytes(), grads.d_weights[0].tobytes(), net.dumps()))
        assert results[0] == results[1]
