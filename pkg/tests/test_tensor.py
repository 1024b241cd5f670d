import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxv import ops, oracles
from cxv.errors import DataError, DimensionError, ParameterError, UsageError
from cxv.gradcheck import grad_check
from cxv.selftest import _primitive_cases
from cxv.tensor import Tensor, backward, get_dtype, is_grad_enabled, no_grad, precision


class TestTensor:
    def test_shape_and_dtype(self):
        t = Tensor(np.arange(6).reshape(2, 3))
        assert t.shape == (2, 3) and t.size == 6 and t.dtype == np.float32

    def test_precision_context(self):
        with precision("f64"):
            assert get_dtype() is np.float64
            assert Tensor([1.0]).dtype == np.float64
        assert get_dtype() is np.float32

    def test_unknown_precision(self):
        with pytest.raises(UsageError):
            with precision("f16"):
                pass

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * x
        assert y.tape_id is None and not y.requires_grad

    def test_grad_shape_matches_data(self, f64, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        ((x + b) * (x + b)).sum().backward()
        assert x.grad.shape == x.shape and b.grad.shape == b.shape


class TestBackward:
    def test_sum_gives_ones(self, f64):
        x = Tensor(np.arange(5.0), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_gives_two_x(self, f64, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_reused_input_accumulates(self, f64):
        x = Tensor([3.0], requires_grad=True)
        (x * x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [27.0])

    def test_every_reachable_leaf_gets_grad(self, f64, rng):
        a, b, c = (Tensor(rng.normal(size=3), requires_grad=True) for _ in range(3))
        ((a * b) + ops.exp(c)).sum().backward()
        assert all(t.grad is not None for t in (a, b, c))

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            backward(x * x)

    def test_loss_not_on_tape_rejected(self):
        with pytest.raises(UsageError):
            backward(Tensor(1.0))

    def test_grads_accumulate_across_calls(self, f64):
        x = Tensor([2.0], requires_grad=True)
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])
        x.zero_grad()
        assert x.grad is None or not np.any(x.grad)


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_hand_case(self):
        assert ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.item() == 11.0

    def test_loop_oracle(self, f64, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
        np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, oracles.matmul_loops(a, b),
                                   rtol=0, atol=1e-12)

    def test_dimension_error_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
    def test_loop_oracle_property(self, m, k, n, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(m, k)), r.normal(size=(k, n))
        with precision("f64"):
            got = ops.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, oracles.matmul_loops(a, b), atol=1e-12)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_overlap_count(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 1)
        assert out.data[0, 0, 1, 1] == 9.0 and out.data[0, 0, 0, 0] == 4.0

    def test_loop_oracle(self, f64, rng):
        x, w, b = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1).data
        np.testing.assert_allclose(got, oracles.conv2d_loops(x, w, b, 1, 1), atol=1e-10)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2)])
    def test_loop_oracle_strided(self, f64, rng, stride, pad):
        x, w = rng.normal(size=(1, 2, 7, 6)), rng.normal(size=(3, 2, 3, 3))
        got = ops.conv2d(Tensor(x), Tensor(w), None, stride, pad).data
        np.testing.assert_allclose(got, oracles.conv2d_loops(x, w, None, stride, pad), atol=1e-10)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = ops.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_unit_row_unchanged(self, f64):
        out = ops.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]])

    def test_row_statistics(self, f64, rng):
        out = ops.layer_norm(Tensor(rng.normal(3, 5, size=(4, 16))), Tensor(np.ones(16)), Tensor(np.zeros(16)))
        assert np.abs(out.data.mean(axis=1)).max() < 1e-6
        assert np.abs(out.data.var(axis=1) - 1).max() < 1e-4


class TestActivations:
    def test_elu_plus_one_at_zero(self):
        assert ops.elu_plus_one(Tensor([0.0])).data.item() == 1.0

    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])

    def test_dropout_eval_identity(self, rng):
        x = Tensor(rng.normal(size=(5, 5)))
        assert ops.dropout(x, 0.5, train=False) is x or np.array_equal(ops.dropout(x, 0.5, train=False).data, x.data)

    def test_dropout_train_scales_survivors(self, rng):
        x = Tensor(np.ones((200, 50)))
        out = ops.dropout(x, 0.5, train=True, rng=rng).data
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.05

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_dropout_bad_p(self, p):
        with pytest.raises(ParameterError):
            ops.dropout(Tensor([1.0]), p, train=True)

    def test_gelu_matches_erf_form(self, f64, rng):
        x = rng.normal(size=20)
        want = 0.5 * x * (1 + np.array([math.erf(v / math.sqrt(2)) for v in x]))
        np.testing.assert_allclose(ops.gelu(Tensor(x)).data, want, atol=1e-14)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax_lastdim(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = ops.softmax_lastdim(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out)) and out[0] > 0.999999

    def test_rows_sum_to_one(self, f64, rng):
        out = ops.softmax_lastdim(Tensor(rng.normal(size=(3, 11)))).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


class TestPoolAndLoss:
    def test_pool_constant(self):
        out = ops.global_avg_pool(Tensor(np.full((1, 2, 3, 3), 4.0))).data
        np.testing.assert_array_equal(out, [[4.0, 4.0]])

    def test_pool_mean(self):
        assert ops.global_avg_pool(Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))).data.item() == 2.5

    def test_pool_backward(self, f64):
        x = Tensor(np.zeros((1, 1, 2, 3)), requires_grad=True)
        (ops.global_avg_pool(x) * 6.0).sum().backward()
        np.testing.assert_allclose(x.grad, np.ones((1, 1, 2, 3)))

    def test_ce_uniform(self):
        assert abs(ops.cross_entropy(Tensor([[0.0, 0.0]]), [0]).data.item() - math.log(2)) < 1e-6

    def test_ce_confident(self):
        assert ops.cross_entropy(Tensor([[100.0, 0.0]]), [0]).data.item() < 1e-6

    def test_ce_direct_formula(self, f64, rng):
        logits, labels = rng.normal(size=(6, 5)), rng.integers(0, 5, 6)
        p = oracles.softmax_rows(logits)
        want = -np.mean(np.log(p[np.arange(6), labels]))
        assert abs(ops.cross_entropy(Tensor(logits), labels).data.item() - want) < 1e-10

    def test_ce_label_out_of_range(self):
        with pytest.raises(DataError):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


class TestGradCheck:
    def test_linear_functional_exact(self, f64, rng):
        assert grad_check(lambda t: t.sum(), Tensor(rng.normal(size=(3, 4)))) < 1e-10

    @pytest.mark.parametrize("name", sorted(_primitive_cases(np.random.default_rng(0))))
    def test_primitive(self, name):
        with precision("f64"):
            f, x = _primitive_cases(np.random.default_rng(7))[name]
            assert grad_check(f, Tensor(x)) < 1e-6

    def test_broadcast_add_mul(self, f64, rng):
        b = Tensor(rng.normal(size=(1, 4)))
        assert grad_check(lambda t: ((t + b) * (t * b)).sum(), Tensor(rng.normal(size=(3, 4)))) < 1e-6
        a = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda t: ((a + t) * (a * t)).sum(), Tensor(rng.normal(size=(1, 4)))) < 1e-6
