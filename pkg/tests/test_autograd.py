# tests/test_autograd.py
"""
Unit tests for the gradient tape, backward pass and parameter sets.
"""
import numpy as np
import pytest

from src.tensor import ops
from src.tensor.tape import Tape, active_tape, backward, no_grad
from src.tensor.tensor import Parameter, ParameterSet, Tensor
from src.utils.errors import GradientError, ShapeMismatchError


class TestTape:
    """Tests for recording on the active tape."""

    @pytest.mark.unit
    def test_ops_record_only_inside_tape(self):
        """Nothing is recorded without an active tape."""
        x = Parameter([1.0, 2.0], name="x")
        out = ops.sum(ops.mul(x, x))

        assert active_tape() is None
        assert not out.requires_grad

        with Tape() as tape:
            ops.sum(ops.mul(x, x))
        assert len(tape) == 2
        assert active_tape() is None

    @pytest.mark.unit
    def test_constants_are_not_recorded(self):
        """Ops whose inputs need no gradient stay off the tape."""
        with Tape() as tape:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    @pytest.mark.unit
    def test_no_grad_suspends_recording(self):
        """no_grad hides the tape and restores it afterwards."""
        x = Parameter([1.0], name="x")
        with Tape() as tape:
            with no_grad():
                ops.scale(x, 2.0)
                assert active_tape() is None
            assert active_tape() is tape
        assert len(tape) == 0

    @pytest.mark.unit
    def test_entries_in_execution_order(self):
        """Every entry's inputs precede it on the tape."""
        x = Parameter([1.0, -1.0], name="x")
        with Tape() as tape:
            ops.sum(ops.relu(ops.scale(x, 3.0)))

        assert [entry.op for entry in tape.entries] == ["scale", "relu", "sum"]
        produced = set()
        for entry in tape.entries:
            for tensor in entry.inputs:
                assert tensor is x or id(tensor) in produced
            produced.add(id(entry.output))


class TestBackward:
    """Tests for backward()."""

    @pytest.mark.unit
    def test_sum_gives_all_ones(self, rng):
        """d sum(x) / dx = 1 everywhere."""
        x = Parameter(rng.standard_normal((2, 3, 4)), name="x")
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape)

        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    @pytest.mark.unit
    def test_zero_scaling_gives_zero_grad(self, rng):
        """0·f(x) has an all-zero gradient."""
        x = Parameter(rng.standard_normal(5), name="x")
        with Tape() as tape:
            loss = ops.scale(ops.sum(ops.mul(x, x)), 0.0)
        backward(loss, tape)

        np.testing.assert_array_equal(x.grad, np.zeros(5))

    @pytest.mark.unit
    def test_reused_input_accumulates(self):
        """x·x differentiates to 2x."""
        x = Parameter([1.5, -2.0], name="x")
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss, tape)

        np.testing.assert_allclose(x.grad, [3.0, -4.0])

    @pytest.mark.unit
    def test_broadcast_gradient_is_reduced(self):
        """A broadcast bias receives the sum over the batch."""
        x = Tensor(np.ones((4, 3)))
        b = Parameter(np.zeros(3), name="b")
        with Tape() as tape:
            loss = ops.sum(ops.add(x, b))
        backward(loss, tape)

        np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])

    @pytest.mark.unit
    def test_max_pool_routes_gradient_to_winner(self):
        """Only the maximum of each window receives gradient."""
        x = Parameter(np.arange(16.0).reshape(1, 1, 4, 4), name="x")
        with Tape() as tape:
            loss = ops.sum(ops.max_pool2d(x))
        backward(loss, tape)

        expected = np.zeros((4, 4))
        expected[1, 1] = expected[1, 3] = expected[3, 1] = expected[3, 3] = 1.0
        np.testing.assert_array_equal(x.grad[0, 0], expected)

    @pytest.mark.unit
    def test_non_participating_params_get_zero(self, rng):
        """Parameters outside the graph end with zeros when params is given."""
        used = Parameter(rng.standard_normal(3), name="used")
        unused = Parameter(rng.standard_normal(3), name="unused")
        unused.grad = np.full(3, 7.0)
        params = ParameterSet([used, unused])

        with Tape() as tape:
            loss = ops.sum(used)
        backward(loss, tape, params)

        np.testing.assert_array_equal(unused.grad, np.zeros(3))
        np.testing.assert_array_equal(used.grad, np.ones(3))

    @pytest.mark.unit
    def test_params_grads_reset_between_steps(self):
        """Passing params zeroes stale gradients before accumulating."""
        x = Parameter([2.0], name="x")
        params = ParameterSet([x])
        for _ in range(2):
            with Tape() as tape:
                loss = ops.sum(ops.scale(x, 3.0))
            backward(loss, tape, params)

        np.testing.assert_array_equal(x.grad, [3.0])

    @pytest.mark.unit
    def test_non_scalar_loss_raises(self):
        """backward needs a scalar loss."""
        x = Parameter([1.0, 2.0], name="x")
        with Tape() as tape:
            out = ops.scale(x, 2.0)
        with pytest.raises(GradientError, match="scalar"):
            backward(out, tape)

    @pytest.mark.unit
    def test_double_backward_raises(self):
        """A consumed tape must be reset before another backward."""
        x = Parameter([1.0], name="x")
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape)

        with pytest.raises(GradientError, match="double backward"):
            backward(loss, tape)

    @pytest.mark.unit
    def test_consumed_tape_refuses_recording(self):
        """Recording on a consumed tape fails until reset()."""
        x = Parameter([1.0], name="x")
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape)

        with tape:
            with pytest.raises(GradientError):
                ops.sum(x)
        tape.reset()
        with tape:
            ops.sum(x)
        assert len(tape) == 1

    @pytest.mark.unit
    def test_empty_tape_raises(self):
        """A tape with no entries has nothing to differentiate."""
        with pytest.raises(GradientError, match="empty"):
            backward(Tensor(1.0), Tape())

    @pytest.mark.unit
    def test_foreign_loss_raises(self):
        """The loss must come from an op recorded on the given tape."""
        x = Parameter([1.0], name="x")
        with Tape() as tape:
            ops.sum(x)
        with pytest.raises(GradientError, match="not produced"):
            backward(Tensor(0.0), tape)


class TestParameterSet:
    """Tests for ParameterSet."""

    @pytest.mark.unit
    def test_duplicate_names_rejected(self):
        """Names must be unique."""
        params = ParameterSet([Parameter([1.0], name="w")])
        with pytest.raises(ValueError, match="duplicate"):
            params.add("w", [2.0], depth=0)

    @pytest.mark.unit
    def test_negative_depth_rejected(self):
        """Depth is a non-negative layer index."""
        with pytest.raises(ValueError):
            Parameter([1.0], name="w", depth=-1)

    @pytest.mark.unit
    def test_merge_and_subset(self):
        """merge unions disjoint sets, subset selects by name."""
        a = ParameterSet([Parameter([1.0], name="a", depth=1)])
        b = ParameterSet([Parameter(np.zeros((2, 2)), name="b", depth=3)])
        merged = ParameterSet.merge(a, b)

        assert list(merged) == ["a", "b"]
        assert merged.num_scalars() == 5
        assert merged.max_depth == 3
        assert list(merged.subset(["b"])) == ["b"]

    @pytest.mark.unit
    def test_snapshot_is_a_copy(self):
        """Mutating parameters does not alter an earlier snapshot."""
        params = ParameterSet([Parameter([1.0, 2.0], name="w")])
        snap = params.snapshot()
        params["w"].data[0] = 9.0

        assert snap["w"][0] == 1.0
        params.load_snapshot(snap)
        assert params["w"].data[0] == 1.0

    @pytest.mark.unit
    def test_load_snapshot_checks_names_and_shapes(self):
        """Incompatible snapshots raise a shape error."""
        params = ParameterSet([Parameter([1.0, 2.0], name="w")])

        with pytest.raises(ShapeMismatchError, match="missing"):
            params.load_snapshot({"v": np.zeros(2)})
        with pytest.raises(ShapeMismatchError, match="shape"):
            params.load_snapshot({"w": np.zeros(3)})
