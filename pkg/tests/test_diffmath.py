import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgshade import diffmath as dm
from sgshade.diffmath import DiffValue, DomainError, Tape

from conftest import central_difference, rel_err


def grad_of(build, x0, seed=None):
    """Single-parameter gradient helper: build(param_dv) -> output dv."""
    tape = Tape()
    p = tape.lift(x0, trainable=True)
    out = build(p)
    return dm.backward(tape, out, seed)[0]


class TestLeaves:
    def test_identity_gradient_is_one(self):
        tape = Tape()
        x = tape.lift(0.5, trainable=True)
        (g,) = dm.backward(tape, x)
        assert g == 1.0

    def test_constant_lift_gets_no_slot(self):
        tape = Tape()
        tape.lift(3.0)
        assert tape.num_parameters == 0

    def test_sum_of_two_parameters(self):
        tape = Tape()
        a = tape.lift(1.0, trainable=True)
        b = tape.lift(2.0, trainable=True)
        ga, gb = dm.backward(tape, a + b)
        assert ga == 1.0 and gb == 1.0

    def test_lift_rejects_non_finite(self):
        with pytest.raises(DomainError):
            Tape().lift(np.nan)


class TestElementwiseGradients:
    def test_exp_at_one(self):
        g = grad_of(dm.exp, 1.0)
        assert np.isclose(g, np.e, rtol=1e-12)

    def test_clamp_outside_active_range_is_zero(self):
        assert grad_of(lambda x: dm.clamp(x, 0.0, 1.0), 2.0) == 0.0

    def test_clamp_inside_passes_through(self):
        assert grad_of(lambda x: dm.clamp(x, 0.0, 1.0), 0.5) == 1.0

    def test_clamp_boundary_subgradient_is_zero(self):
        assert grad_of(lambda x: dm.clamp(x, 0.0, 1.0), 1.0) == 0.0

    def test_max_tie_goes_to_first_argument(self):
        tape = Tape()
        a = tape.lift(0.7, trainable=True)
        b = tape.lift(0.7, trainable=True)
        ga, gb = dm.backward(tape, dm.maximum(a, b))
        assert ga == 1.0 and gb == 0.0

    @pytest.mark.parametrize("fn,x0", [
        (dm.exp, 0.37),
        (dm.log, 1.42),
        (dm.sqrt, 2.9),
        (dm.expm1, -0.8),
        (dm.sin, 0.6),
        (dm.cos, 0.6),
        (dm.tanh, -0.3),
        (dm.sigmoid, 0.9),
        (dm.softplus, -1.7),
        (lambda x: x ** 3.5, 1.3),
        (lambda x: 2.0 / x, 0.8),
        (lambda x: dm.exp(dm.sin(x) * x) - dm.sqrt(x + 2.0), 0.77),
    ])
    def test_matches_central_differences(self, fn, x0):
        analytic = grad_of(fn, x0)
        fd = central_difference(lambda v: float(dm.value_of(fn(v.item()))),
                                np.array(x0))
        assert rel_err(analytic, fd).max() < 1e-6

    @given(st.floats(min_value=-3.0, max_value=3.0))
    @settings(max_examples=40, deadline=None)
    def test_composite_expression_gradient(self, x0):
        def f(x):
            return dm.tanh(x) * dm.exp(-0.5 * x * x) + dm.softplus(x)

        analytic = grad_of(f, x0)
        fd = central_difference(lambda v: float(dm.value_of(f(v.item()))), np.array(x0))
        assert rel_err(analytic, fd).max() < 1e-5


class TestDomainErrors:
    @pytest.mark.parametrize("fn,bad,op", [
        (dm.log, -1.0, "log"),
        (dm.sqrt, -0.5, "sqrt"),
        (lambda x: 1.0 / x, 0.0, "div"),
        (lambda x: x ** 1.5, -2.0, "pow"),
    ])
    def test_error_carries_op_name(self, fn, bad, op):
        tape = Tape()
        x = tape.lift(bad, trainable=True)
        with pytest.raises(DomainError) as err:
            fn(x)
        assert err.value.op == op


class TestVectorHelpers:
    def test_dot_and_norm_values(self):
        u = np.array([1.0, 2.0, 2.0])
        assert np.isclose(dm.dot(u, u), 9.0)
        assert np.isclose(dm.norm(u), 3.0, rtol=1e-9)

    def test_normalize_gradient_matches_central_differences(self, rng):
        v0 = rng.normal(size=3)

        def out_component(v, j):
            tape = Tape()
            comps = [tape.lift(v[i], trainable=True) for i in range(3)]
            n = dm.normalize(comps)
            grads = dm.backward(tape, n[j])
            return np.array(grads), dm.value_of(n[j])

        for j in range(3):
            analytic, _ = out_component(v0, j)
            fd = central_difference(
                lambda v: (v / np.sqrt(v @ v + dm.NORM_EPS**2))[j], v0, h=1e-6)
            assert rel_err(analytic, fd).max() < 1e-5

    def test_normalize_is_safe_at_zero(self):
        n = dm.normalize([0.0, 0.0, 0.0])
        assert all(np.isfinite(dm.value_of(c)) for c in n)


class TestStructuralOps:
    def test_matmul_gradients(self, rng):
        A0 = rng.normal(size=(3, 4))
        B0 = rng.normal(size=(4, 2))
        R = rng.normal(size=(3, 2))  # random seed direction

        tape = Tape()
        A = tape.lift(A0, trainable=True)
        B = tape.lift(B0, trainable=True)
        out = dm.matmul(A, B)
        gA, gB = dm.backward(tape, out, seed=R)

        fdA = central_difference(lambda a: float(np.sum((a @ B0) * R)), A0)
        fdB = central_difference(lambda b: float(np.sum((A0 @ b) * R)), B0)
        assert rel_err(gA, fdA).max() < 1e-6
        assert rel_err(gB, fdB).max() < 1e-6

    def test_sum_column_take_scatter_stack(self, rng):
        X0 = rng.normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])

        tape = Tape()
        X = tape.lift(X0, trainable=True)
        picked = dm.take_rows(X, idx)                      # (4, 3)
        col = dm.column(picked, 1)                         # (4,)
        spread = dm.scatter_rows(picked, np.array([1, 3, 5, 6]), 8,
                                 np.zeros(3))              # (8, 3)
        stacked = dm.stack_values([col, col * 2.0])        # (2, 4)
        out = dm.vsum(spread) + dm.vsum(stacked) + dm.vsum(dm.reshape(picked, (12,)))
        (g,) = dm.backward(tape, out)

        def scalar(x):
            p = x[idx]
            return float(np.sum(p) + np.sum(p[:, 1]) * 3.0 + np.sum(p))

        fd = central_difference(scalar, X0)
        assert rel_err(g, fd).max() < 1e-6

    def test_broadcast_reduces_to_parameter_shape(self, rng):
        # A shape-() parameter feeding a (100,) batch must get one gradient.
        batch = rng.normal(size=100)
        tape = Tape()
        s = tape.lift(1.3, trainable=True)
        out = dm.vsum(s * batch)
        (g,) = dm.backward(tape, out)
        assert g.shape == ()
        assert np.isclose(g, batch.sum(), rtol=1e-12)


class TestBackwardContract:
    def test_bilinear_product_gradients(self):
        tape = Tape()
        x = tape.lift(2.0, trainable=True)
        y = tape.lift(3.0, trainable=True)
        gx, gy = dm.backward(tape, x * y)
        assert gx == 3.0 and gy == 2.0

    def test_backward_twice_is_identical(self, rng):
        tape = Tape()
        x = tape.lift(rng.normal(size=4), trainable=True)
        out = dm.vsum(dm.exp(x) * dm.sin(x))
        first = dm.backward(tape, out)
        second = dm.backward(tape, out)
        assert np.array_equal(first[0], second[0])

    def test_output_from_other_tape_rejected(self):
        t1, t2 = Tape(), Tape()
        x = t1.lift(1.0, trainable=True)
        with pytest.raises(ValueError):
            dm.backward(t2, dm.exp(x))

    def test_constant_output_gives_zero_gradients(self):
        tape = Tape()
        tape.lift(1.0, trainable=True)
        out = tape.lift(5.0)  # constant, unrelated to the parameter
        grads = dm.backward(tape, out)
        assert grads[0] == 0.0

    def test_gradient_of_sum_equals_sum_of_gradients(self, rng):
        # A batched loss on one tape must agree with per-element tapes
        # reduced by summation.
        xs = rng.normal(size=6)

        tape = Tape()
        p = tape.lift(xs, trainable=True)
        total = dm.vsum(dm.exp(p) * p)
        (g_total,) = dm.backward(tape, total)

        g_sum = np.zeros_like(xs)
        for i in range(len(xs)):
            t_i = Tape()
            p_i = t_i.lift(xs, trainable=True)
            per = dm.vsum(dm.exp(p_i) * p_i * (np.arange(6) == i))
            g_sum += dm.backward(t_i, per)[0]
        assert np.allclose(g_total, g_sum, rtol=1e-10, atol=1e-12)

    def test_seed_shape_mismatch_rejected(self):
        tape = Tape()
        x = tape.lift(np.ones(3), trainable=True)
        with pytest.raises(ValueError):
            dm.backward(tape, dm.exp(x), seed=np.ones(4))
