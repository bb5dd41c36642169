import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmpt import tensor as T
from gmpt.checks import PRIMITIVES, grad_case
from gmpt.tensor import Adam, AdamState, ShapeError, Tensor, adam_step, backward, grad_check


def leaf(v):
    return Tensor(np.asarray(v, dtype=float), requires_grad=True)


class TestPrimitiveValues:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_bce_at_zero(self):
        assert T.bce_with_logits(Tensor([0.0]), [1.0]).data[0] == pytest.approx(0.693147, abs=1e-6)

    def test_bce_large_logits_finite(self):
        out = T.bce_with_logits(Tensor([800.0, -800.0]), [0.0, 1.0]).data
        np.testing.assert_allclose(out, [800.0, 800.0])

    def test_mse(self):
        assert T.mse(Tensor(1.0), Tensor(0.5)).item() == pytest.approx(0.25)

    def test_cosine_self(self, rng):
        v = rng.normal(size=5)
        assert T.cosine_similarity(Tensor(v), Tensor(v)).item() == pytest.approx(1.0)

    def test_cosine_zero_vector(self):
        with pytest.raises(ValueError, match="degenerate cosine"):
            T.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_logsumexp_stable(self):
        assert T.logsumexp(Tensor([1000.0, 1000.0])).item() == pytest.approx(1000.0 + math.log(2))

    def test_segment_softmax_matches_per_segment(self, rng):
        a = rng.normal(size=(3, 7))
        out = T.segment_softmax(Tensor(a), np.array([0, 3, 4])).data
        for lo, hi in [(0, 3), (3, 4), (4, 7)]:
            np.testing.assert_allclose(out[:, lo:hi], T.softmax(Tensor(a[:, lo:hi])).data, atol=1e-15)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


class TestSoftmaxProperties:
    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, a, c):
        s = T.softmax(Tensor(a)).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(T.softmax(Tensor(a + c)).data, s, atol=1e-6)


class TestBackward:
    def test_square(self):
        x = leaf(3.0)
        backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_sum_gives_ones(self):
        x = leaf(np.arange(4.0))
        backward(T.sum_(x))
        np.testing.assert_array_equal(x.grad, np.ones(4))

    def test_bce_gradient(self):
        x = leaf([0.0])
        backward(T.sum_(T.bce_with_logits(x, [1.0])))
        assert x.grad[0] == pytest.approx(-0.5)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(leaf([1.0, 2.0]) * 2.0)

    def test_accumulates_across_calls(self):
        x = leaf(2.0)
        backward(x * x)
        backward(x * x)
        assert x.grad == pytest.approx(8.0)

    def test_reused_node_gradients_add(self):
        x = leaf([1.0, 2.0])
        y = x * 3.0
        backward(T.sum_(y * y + y))
        np.testing.assert_allclose(x.grad, 18 * x.data + 3)

    def test_no_grad_records_nothing(self):
        x = leaf(1.0)
        with T.no_grad():
            _ = x * x
        assert len(T.active_tape()) == 0

    def test_deterministic(self, rng):
        W = leaf(rng.normal(size=(4, 3)))
        x = Tensor(rng.normal(size=(5, 4)))
        grads = []
        for _ in range(2):
            W.grad = None
            backward(T.sum_(T.softmax(x @ W) * T.relu(x @ W)))
            grads.append(W.grad.copy())
        assert np.array_equal(grads[0].view(np.int64), grads[1].view(np.int64))

    def test_tape_cleared_and_callbacks_fired(self):
        fired = []
        x = leaf(1.0)
        y = x * 2.0
        T.active_tape().on_release(lambda: fired.append(True))
        backward(y)
        assert fired == [True] and len(T.active_tape()) == 0


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        x = leaf(rng.normal(size=6))
        assert grad_check(lambda t: T.sum_(t * t), x, 1e-3) < 1e-6

    def test_softmax_then_squares(self, rng):
        x = leaf(rng.normal(size=(2, 4)))
        assert grad_check(lambda t: T.sum_(T.softmax(t) * T.softmax(t)), x, 1e-3) < 1e-4

    def test_constant(self):
        x = leaf([1.0, 2.0])
        assert grad_check(lambda t: T.sum_(Tensor([3.0, 4.0])), x) == 0.0

    def test_restores_state(self):
        x = Tensor([1.0, 2.0])
        grad_check(lambda t: T.sum_(t * t), x)
        assert x.grad is None and not x.requires_grad

    def test_kink_crossing_detected(self):
        x = leaf([1e-4, 1.0])
        rep = T.grad_check_report(lambda t: T.sum_(T.relu(t)), x, 1e-3)
        assert rep.kink_crossings == 1

    @pytest.mark.parametrize("name,build", PRIMITIVES, ids=[n for n, _ in PRIMITIVES])
    def test_primitive(self, name, build):
        res = grad_case(name, build, instances=10, seed=11)
        assert res.max_rel_error < 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": leaf([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_first_step_by_hand(self):
        p = {"w": leaf([0.5])}
        adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.1))
        # m_hat = 1, v_hat = 1, step = lr * 1 / (1 + 1e-8)
        assert p["w"].data[0] == pytest.approx(0.5 - 0.1 / (1.0 + 1e-8), abs=1e-15)

    def test_second_step_by_hand(self):
        p = {"w": leaf([0.0])}
        s = AdamState(lr=0.01)
        adam_step(p, {"w": np.array([1.0])}, s)
        adam_step(p, {"w": np.array([-2.0])}, s)
        m = 0.9 * 0.1 + 0.1 * -2.0
        v = 0.999 * 0.001 + 0.001 * 4.0
        m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999**2)
        expect = -0.01 / (1 + 1e-8) - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert p["w"].data[0] == pytest.approx(expect, abs=1e-15)

    def test_identical_sets_identical_updates(self, rng):
        v, g = rng.normal(size=3), rng.normal(size=3)
        a, b = {"w": leaf(v.copy())}, {"w": leaf(v.copy())}
        adam_step(a, {"w": g}, AdamState())
        adam_step(b, {"w": g}, AdamState())
        np.testing.assert_array_equal(a["w"].data, b["w"].data)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": leaf([1.0])}, {"w": np.ones(2)}, AdamState())

    def test_optimizer_skips_missing_grads(self):
        p = {"a": leaf([1.0]), "b": leaf([1.0])}
        opt = Adam(p, lr=0.1)
        backward(T.sum_(p["a"] * 2.0))
        opt.step()
        assert p["a"].data[0] < 1.0 and p["b"].data[0] == 1.0

    def test_minimizes_quadratic(self):
        x = leaf([3.0, -2.0])
        opt = Adam({"x": x}, lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            backward(T.sum_(x * x))
            opt.step()
        assert np.abs(x.data).max() < 1e-2


class TestSpmm:
    def test_gradient_is_transpose_product(self, rng):
        m = sp.random(4, 3, density=0.5, random_state=0, format="csr")
        x = leaf(rng.normal(size=(3, 2)))
        w = rng.normal(size=(4, 2))
        backward(T.sum_(T.spmm(m, x) * Tensor(w)))
        np.testing.assert_allclose(x.grad, m.T @ w)
