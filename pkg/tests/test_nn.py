import math

import numpy as np
import pytest

from fgsmlab import autodiff as ad
from fgsmlab.autodiff import Tensor, fd_grad, grad, leaf
from fgsmlab.nn import (PARAM_SHAPES, Cnn5Params, _dimension_chain, cnn5_forward, conv2d,
                        cross_entropy, init_params, linear, maxpool2)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def var(a):
    a = np.asarray(a, dtype=np.float64)
    return leaf(a.shape, a, requires_grad=True)


def zero_params(dtype=np.float64):
    return Cnn5Params.from_arrays({n: np.zeros(s) for n, s in PARAM_SHAPES.items()}, dtype)


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    out = np.zeros((n, co, h - k + 1, wd - k + 1))
    for i in range(h - k + 1):
        for j in range(wd - k + 1):
            patch = x[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


class TestConv:
    def test_cifar_shape(self):
        p = init_params(0, np.float64)
        x = Tensor(np.zeros((1, 3, 32, 32)))
        assert conv2d(x, p.conv1_w, p.conv1_b).shape == (1, 6, 28, 28)

    def test_zero_weights(self):
        x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 8, 8)))
        out = conv2d(x, Tensor(np.zeros((4, 3, 5, 5))), Tensor(np.zeros(4)))
        assert not out.data.any()

    def test_all_ones(self):
        out = conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 5, 5))), Tensor(np.zeros(1)))
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 25.0

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.normal(size=(2, 3, 9, 7)), rng.normal(size=(4, 3, 5, 5)), rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, naive_conv(x, w, b), rtol=1e-12, atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((1, 3, 5, 5))), Tensor(np.zeros(1)))
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((1, 3, 5, 5))), Tensor(np.zeros(1)))


class TestMaxpool:
    def test_single_window(self):
        out = maxpool2(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        assert out.data.item() == 4.0

    def test_constant_input_routes_to_first(self):
        x = var(np.full((1, 1, 4, 4), 7.0))
        out = maxpool2(x)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 7.0))
        (g,) = grad(ad.sum(out), [x])
        expected = np.zeros((4, 4))
        expected[::2, ::2] = 1
        np.testing.assert_array_equal(g.data[0, 0], expected)

    def test_cifar_shape(self):
        assert maxpool2(Tensor(np.zeros((1, 6, 28, 28)))).shape == (1, 6, 14, 14)

    def test_odd_dims(self):
        with pytest.raises(ValueError):
            maxpool2(Tensor(np.zeros((1, 1, 5, 4))))


class TestLinear:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        out = linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_small(self):
        out = linear(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0, 4.0]])), Tensor(np.array([5.0])))
        assert out.data.item() == 16.0

    def test_fc1_shape(self):
        p = init_params(0, np.float64)
        assert linear(Tensor(np.zeros((5, 400))), p.fc1_w, p.fc1_b).shape == (5, 120)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


class TestCnn5:
    def test_dimension_chain(self):
        assert _dimension_chain() == [32, 28, 14, 10, 5]
        assert 16 * 5 * 5 == PARAM_SHAPES["fc1_w"][1]

    def test_output_shape(self):
        out = cnn5_forward(init_params(0), Tensor(np.zeros((4, 3, 32, 32), dtype=np.float32)))
        assert out.shape == (4, 10)

    def test_zero_params(self):
        x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 32, 32)))
        assert not cnn5_forward(zero_params(), x).data.any()

    def test_wrong_input(self):
        with pytest.raises(ValueError):
            cnn5_forward(init_params(0), Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))

    def test_param_shape_validation(self):
        arrays = init_params(0).arrays()
        arrays["fc2_w"] = np.zeros((84, 121))
        with pytest.raises(ValueError):
            Cnn5Params(**{n: Tensor(a) for n, a in arrays.items()})

    @pytest.mark.parametrize("name", ["conv1_w", "conv2_b", "fc1_w", "fc3_b"])
    def test_gradcheck_weight_slice(self, name):
        rng = np.random.default_rng(7)
        p = init_params(3, np.float64)
        x = Tensor(rng.uniform(size=(2, 3, 32, 32)))
        y = np.array([2, 7])

        def loss_with(w):
            return cross_entropy(cnn5_forward(Cnn5Params(**{**dict(p.items()), name: w}), x), y)

        (g,) = grad(loss_with(getattr(p, name)), [getattr(p, name)])
        w0 = getattr(p, name).data
        h = 1e-6
        for i in rng.choice(w0.size, size=min(12, w0.size), replace=False):
            wp, wm = w0.copy().reshape(-1), w0.copy().reshape(-1)
            wp[i] += h
            wm[i] -= h
            fd = (loss_with(Tensor(wp.reshape(w0.shape))).item()
                  - loss_with(Tensor(wm.reshape(w0.shape))).item()) / (2 * h)
            assert abs(g.data.reshape(-1)[i] - fd) <= 1e-6 * max(abs(fd), np.abs(g.data).max())

    def test_init_deterministic(self):
        a, b = init_params(5).arrays(), init_params(5).arrays()
        assert all(a[n].tobytes() == b[n].tobytes() for n in a)

    def test_init_differs_by_seed(self):
        assert not np.array_equal(init_params(1).fc1_w.data, init_params(2).fc1_w.data)

    def test_init_shapes_and_bounds(self):
        p = init_params(0)
        for name, t in p.items():
            assert t.shape == PARAM_SHAPES[name]
            fan_in = np.prod(PARAM_SHAPES[name.replace("_b", "_w")][1:])
            assert np.abs(t.data).max() <= 1 / math.sqrt(fan_in)


class TestCrossEntropy:
    def test_uniform_logits(self):
        out = cross_entropy(Tensor(np.full((3, 10), 0.7)), [0, 4, 9])
        assert out.item() == pytest.approx(math.log(10), abs=1e-12)

    def test_large_gap(self):
        logits = np.zeros((1, 10))
        logits[0, 3] = 100.0
        assert cross_entropy(Tensor(logits), [3]).item() < 1e-40

    def test_monotone_in_hot_logit(self):
        vals = []
        for gap in (0.0, 1.0, 5.0, 20.0):
            logits = np.zeros((1, 10))
            logits[0, 2] = gap
            vals.append(cross_entropy(Tensor(logits), [2]).item())
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            logits = rng.normal(scale=3, size=(6, 10))
            y = rng.integers(0, 10, size=6)
            direct = np.mean([-math.log(math.exp(l[t]) / sum(math.exp(v) for v in l))
                              for l, t in zip(logits, y)])
            assert abs(cross_entropy(Tensor(logits), y).item() - direct) < 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        assert cross_entropy(Tensor(rng.normal(size=(8, 10))), rng.integers(0, 10, 8)).item() >= 0

    def test_bad_label(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 10))), [10])

    def test_gradcheck(self):
        rng = np.random.default_rng(6)
        logits0 = rng.normal(size=(4, 10))
        y = rng.integers(0, 10, 4)
        z = var(logits0)
        (g,) = grad(cross_entropy(z, y), [z])
        assert rel_err(g.data, fd_grad(lambda t: cross_entropy(t, y), logits0, 1e-6)) < 1e-6
