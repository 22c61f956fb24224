"""Tests for reverse-mode differentiable arrays."""

import numpy as np
import pytest

from sxextract.core.errors import ShapeError
from sxextract.nn import value as F
from sxextract.nn.gradcheck import grad_check
from sxextract.nn.value import Value, no_grad


def _param(rng: np.random.Generator, *shape: int) -> Value:
    return Value(rng.normal(size=shape), requires_grad=True)


class TestForward:
    """Forward values of the primitive operations."""

    def test_arithmetic_broadcasts(self) -> None:
        """Elementwise ops follow numpy broadcasting."""
        a = Value([[1.0, 2.0], [3.0, 4.0]])
        b = Value([10.0, 20.0])
        np.testing.assert_allclose((a + b).data, [[11.0, 22.0], [13.0, 24.0]])
        np.testing.assert_allclose((a * 2).data, [[2.0, 4.0], [6.0, 8.0]])
        np.testing.assert_allclose((1 - a).data, [[0.0, -1.0], [-2.0, -3.0]])

    def test_logsumexp_is_overflow_safe(self) -> None:
        """Large inputs do not overflow."""
        out = F.logsumexp(Value([1000.0, 1000.0]), axis=0)
        assert out.item() == pytest.approx(1000.0 + np.log(2.0))

    def test_softmax_rows_sum_to_one(self) -> None:
        """Softmax normalizes along the last axis."""
        out = F.softmax(Value(np.arange(6.0).reshape(2, 3)))
        np.testing.assert_allclose(out.data.sum(axis=-1), [1.0, 1.0])

    def test_embedding_gathers_rows(self) -> None:
        """Embedding returns one row per id."""
        table = Value(np.arange(12.0).reshape(4, 3))
        np.testing.assert_allclose(F.embedding(table, [2, 0]).data, [[6.0, 7.0, 8.0], [0.0, 1.0, 2.0]])

    def test_float32_is_preserved(self) -> None:
        """float32 inputs stay float32."""
        a = Value(np.ones(3, dtype=np.float32))
        assert (a * 2.0).data.dtype == np.float32


class TestShapeErrors:
    """Incompatible operands fail loudly."""

    def test_matmul_mismatch(self) -> None:
        """matmul names both shapes."""
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            F.matmul(Value(np.ones((2, 3))), Value(np.ones((4, 2))))

    def test_broadcast_mismatch(self) -> None:
        """Elementwise ops reject non-broadcastable shapes."""
        with pytest.raises(ShapeError, match="add"):
            Value(np.ones(3)) + Value(np.ones(4))

    def test_embedding_out_of_range(self) -> None:
        """Ids outside the table are rejected."""
        with pytest.raises(ShapeError, match="embedding"):
            F.embedding(Value(np.ones((2, 3))), [5])

    def test_implicit_backward_needs_scalar(self) -> None:
        """backward without a seed gradient requires a scalar."""
        with pytest.raises(ShapeError, match="backward"):
            (Value(np.ones(3), requires_grad=True) * 2).backward()


class TestBackward:
    """Gradients against hand derivations and finite differences."""

    def test_product_rule(self) -> None:
        """d(x*y)/dx = y and d(x*y)/dy = x."""
        x = Value(3.0, requires_grad=True)
        y = Value(4.0, requires_grad=True)
        (x * y).backward()
        assert x.grad == pytest.approx(4.0)
        assert y.grad == pytest.approx(3.0)

    def test_reused_input_accumulates(self) -> None:
        """A value used twice receives both contributions."""
        x = Value(2.0, requires_grad=True)
        (x * x + x).backward()
        assert x.grad == pytest.approx(5.0)

    def test_repeated_gather_accumulates(self) -> None:
        """Repeated indices in take add their gradients."""
        table = Value(np.zeros((3, 2)), requires_grad=True)
        F.sum(F.embedding(table, [1, 1, 2])).backward()
        np.testing.assert_allclose(table.grad, [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])

    def test_no_grad_records_nothing(self) -> None:
        """Under no_grad results do not require gradients."""
        x = Value(2.0, requires_grad=True)
        with no_grad():
            y = x * 3
        assert not y.requires_grad
        assert y.creator == ("leaf", ())

    def test_tape_released_after_backward(self) -> None:
        """The graph is dropped unless retain_graph is set."""
        x = Value(2.0, requires_grad=True)
        y = x * 3
        y.backward(retain_graph=True)
        assert y.creator[0] == "mul"
        y.backward()
        assert y.creator == ("mul", ())

    @pytest.mark.parametrize("seed", range(3))
    def test_composite_gradients(self, seed: int) -> None:
        """A composite of every op passes the finite-difference check."""
        rng = np.random.default_rng(seed)
        a = _param(rng, 3, 4)
        b = _param(rng, 4)
        table = _param(rng, 5, 4)
        weights = rng.normal(size=3)

        def loss() -> Value:
            rows = F.embedding(table, [0, 3, 3])
            mixed = F.tanh(F.matmul(a, b)) + F.sigmoid(F.sum(rows, axis=1)) * F.exp(a[:, 0] * 0.1)
            stacked = F.concat([F.log_softmax(mixed, axis=0), F.softmax(mixed, axis=0)])
            return F.sum(stacked * np.concatenate([weights, weights])) + F.logsumexp(F.mean(a, axis=0), axis=0)

        report = grad_check(loss, {"a": a, "b": b, "table": table}, tolerance=1e-4, seed=seed)
        assert report.passed, report.failures
        assert report.checked > 0


class TestDropout:
    """Inverted dropout."""

    @pytest.mark.parametrize("rate", [0.1, 0.4, 0.7])
    def test_keep_fraction_and_mean(self, rate: float) -> None:
        """A fraction 1 - rate of units survives and the scaled output keeps the input mean."""
        x = Value(np.ones(200_000))
        out = F.dropout(x, rate, np.random.default_rng(0), training=True)
        kept = out.data != 0.0
        assert kept.mean() == pytest.approx(1.0 - rate, abs=0.01)
        np.testing.assert_allclose(out.data[kept], 1.0 / (1.0 - rate))
        assert out.data.mean() == pytest.approx(1.0, abs=0.02)

    def test_identity_outside_training(self) -> None:
        """Evaluation mode and a zero rate leave the input untouched."""
        x = Value(np.arange(4.0))
        rng = np.random.default_rng(0)
        assert F.dropout(x, 0.5, rng, training=False) is x
        assert F.dropout(x, 0.0, rng, training=True) is x

    def test_gradient_follows_mask(self) -> None:
        """Dropped units get zero gradient and kept units get the scale."""
        x = Value(np.ones(1000), requires_grad=True)
        out = F.dropout(x, 0.5, np.random.default_rng(1), training=True)
        F.sum(out).backward()
        np.testing.assert_allclose(x.grad, out.data)
