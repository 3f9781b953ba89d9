import math

import numpy as np
import pytest
import torch
from torch.optim.lr_scheduler import MultiStepLR

from jerseyid import numkit
from jerseyid.numkit import AdamState, NonFiniteError, ShapeError


class TestValues:
    def test_matmul_identity_and_projector(self):
        b = numkit.tensor([[1.0, 2.0], [3.0, 4.0]])
        torch.testing.assert_close(numkit.matmul(numkit.tensor(np.eye(2)), b), b)
        out = numkit.matmul(numkit.tensor([[1.0, 0.0], [0.0, 0.0]]), numkit.tensor([[5.0, 6.0], [7.0, 8.0]]))
        torch.testing.assert_close(out, numkit.tensor([[5.0, 6.0], [0.0, 0.0]]))

    def test_softmax_analytic(self):
        torch.testing.assert_close(numkit.softmax(numkit.tensor([0.0, 0.0])), numkit.tensor([0.5, 0.5]))
        torch.testing.assert_close(numkit.softmax(numkit.tensor([math.log(2.0), 0.0])), numkit.tensor([2 / 3, 1 / 3]))

    def test_softmax_shift_invariant(self):
        x = numkit.tensor(np.random.default_rng(3).uniform(-2, 2, size=9))
        torch.testing.assert_close(numkit.softmax(x), numkit.softmax(x + 17.0), rtol=0, atol=1e-13)

    def test_layer_norm_examples(self):
        one, zero = numkit.tensor([1.0, 1.0]), numkit.tensor([0.0, 0.0])
        out = numkit.layer_norm(numkit.tensor([1.0, -1.0]), one, zero)
        np.testing.assert_allclose(out.numpy(), np.array([1.0, -1.0]) / math.sqrt(1 + 1e-5), rtol=1e-12)
        constant = numkit.layer_norm(numkit.tensor([5.0, 5.0, 5.0]), numkit.tensor([1.0] * 3), numkit.tensor([0.0] * 3))
        np.testing.assert_allclose(constant.numpy(), 0.0)
        affine = numkit.layer_norm(numkit.tensor([3.0, -8.0, 1.0]), numkit.tensor([0.0] * 3), numkit.tensor([7.0] * 3))
        np.testing.assert_allclose(affine.numpy(), 7.0)

    @pytest.mark.parametrize("k", [86, 11])
    def test_uniform_cross_entropy(self, k):
        p = numkit.tensor(np.full(k, 1.0 / k))
        assert numkit.cross_entropy(p, numkit.one_hot(3, k)).item() == pytest.approx(math.log(k), abs=1e-12)

    def test_perfect_prediction_has_zero_loss(self):
        y = numkit.one_hot(2, 5)
        assert numkit.cross_entropy(y.clone(), y).item() == 0.0

    def test_shared_subexpression_accumulates(self):
        x = numkit.tensor([0.3, -1.2], requires_grad=True)
        y = (x * x + x).sum()
        y.backward()
        np.testing.assert_allclose(x.grad.numpy(), 2 * np.array([0.3, -1.2]) + 1, rtol=1e-12)


class TestShapes:
    def test_matmul_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            numkit.matmul(torch.zeros(2, 3), torch.zeros(4, 5))

    def test_matmul_batch_mismatch(self):
        with pytest.raises(ShapeError):
            numkit.matmul(torch.zeros(2, 3, 4), torch.zeros(5, 4, 2))

    def test_layer_norm_affine_shape(self):
        with pytest.raises(ShapeError):
            numkit.layer_norm(torch.zeros(2, 4), torch.ones(3), torch.zeros(3))


class TestStability:
    def test_softmax_rows_sum_to_one(self):
        x = numkit.tensor(np.random.default_rng(0).normal(size=(5, 7)) * 30)
        torch.testing.assert_close(numkit.softmax(x).sum(-1), torch.ones(5, dtype=torch.float64))

    def test_softmax_large_inputs_finite(self):
        p = numkit.softmax(numkit.tensor([1000.0, 1001.0]))
        assert torch.isfinite(p).all()
        assert p[1].item() == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), rel=1e-12)

    def test_softmax_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            numkit.softmax(numkit.tensor([0.0, float("nan")]))

    def test_layer_norm_zero_variance_maps_to_bias(self):
        x = numkit.tensor(np.full((3, 6), 2.5))
        bias = numkit.tensor(np.arange(6.0))
        out = numkit.layer_norm(x, numkit.tensor(np.full(6, 4.0)), bias)
        assert torch.isfinite(out).all()
        torch.testing.assert_close(out, bias.expand(3, 6))

    def test_cross_entropy_floors_log(self):
        p = numkit.tensor([0.0, 1.0])
        y = numkit.one_hot(0, 2)
        assert numkit.cross_entropy(p, y).item() == pytest.approx(-math.log(1e-12))


class TestGradients:
    def test_gradient_check_composite(self):
        rng = np.random.default_rng(1)
        x = numkit.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = numkit.tensor(rng.normal(size=(5, 4)), requires_grad=True)
        g = numkit.tensor(rng.normal(size=5), requires_grad=True)
        b = numkit.tensor(rng.normal(size=5), requires_grad=True)

        def fn(x, w, g, b):
            return numkit.softmax(numkit.layer_norm(numkit.linear(x, w), g, b))

        assert numkit.gradient_check(fn, [x, w, g, b])

    def test_creation_record_is_kept(self):
        a = numkit.tensor([1.0, 2.0], requires_grad=True)
        out = (numkit.softmax(a) * 3).sum()
        assert out.grad_fn is not None
        out.backward()
        assert a.grad is not None


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = torch.nn.Parameter(numkit.tensor([1.0, -1.0]))
        state = AdamState([("p", p)], lr=1e-3)
        numkit.adam_step(state, grads=[numkit.tensor([0.5, -2.0])])
        # bias-corrected first step is lr * g / (|g| + eps)
        np.testing.assert_allclose(p.detach().numpy(), [1.0 - 1e-3, -1.0 + 1e-3], atol=1e-9)
        assert state.step_count == 1

    def test_non_finite_gradient_names_parameter(self):
        p = torch.nn.Parameter(numkit.tensor([1.0]))
        state = AdamState([("encoder.w", p)])
        with pytest.raises(NonFiniteError, match="encoder.w"):
            numkit.adam_step(state, grads=[numkit.tensor([float("inf")])])
        assert state.step_count == 0

    def test_rejected_gradient_is_not_attached(self):
        p = torch.nn.Parameter(numkit.tensor([1.0, 2.0]))
        state = AdamState([("p", p)])
        with pytest.raises(NonFiniteError):
            numkit.adam_step(state, grads=[numkit.tensor([0.5, float("nan")])])
        assert p.grad is None
        np.testing.assert_array_equal(p.detach().numpy(), [1.0, 2.0])

    def test_zero_gradient_leaves_params(self):
        p = torch.nn.Parameter(numkit.tensor([1.5, -0.5]))
        state = AdamState([("p", p)], lr=0.1)
        numkit.adam_step(state, grads=[numkit.tensor([0.0, 0.0])])
        np.testing.assert_array_equal(p.detach().numpy(), [1.5, -0.5])

    def test_two_step_trace(self):
        lr, b1, b2, eps, g = 0.1, 0.9, 0.999, 1e-8, np.array([0.5, -0.25])
        expected, m, v = np.array([1.0, 2.0]), np.zeros(2), np.zeros(2)
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            expected = expected - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

        p = torch.nn.Parameter(numkit.tensor([1.0, 2.0]))
        state = AdamState([("p", p)], lr=lr, beta1=b1, beta2=b2, eps=eps)
        for _ in range(2):
            numkit.adam_step(state, grads=[numkit.tensor(g)])
        np.testing.assert_allclose(p.detach().numpy(), expected, rtol=1e-12)
        assert state.step_count == 2

    def test_gradient_count_must_match(self):
        p = torch.nn.Parameter(numkit.tensor([1.0]))
        with pytest.raises(ShapeError):
            numkit.adam_step(AdamState([("p", p)]), grads=[])


class TestSchedule:
    @pytest.mark.parametrize("iteration, expected", [(1, 1e-4), (2500, 1e-4), (2501, 2e-5), (5000, 2e-5), (5001, 4e-6)])
    def test_milestone_lr(self, iteration, expected):
        assert numkit.milestone_lr(1e-4, [2500, 5000], 0.2, iteration) == pytest.approx(expected, rel=1e-12)

    def test_multistep_scheduler_agrees(self):
        p = torch.nn.Parameter(numkit.tensor([0.0]))
        state = AdamState([("p", p)], lr=1e-4)
        scheduler = MultiStepLR(state.optimizer, milestones=[2500, 5000], gamma=0.2)
        for iteration in range(1, 5002):
            assert state.lr == pytest.approx(numkit.milestone_lr(1e-4, [2500, 5000], 0.2, iteration), rel=1e-9)
            state.optimizer.step()
            scheduler.step()
