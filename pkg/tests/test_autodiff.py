import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gendisc import autodiff as ad
from gendisc.autodiff import NumericalError, Parameter, ShapeError, Tape, grad_check

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vec_param(rng, n, name="p", scale=1.0):
    return Parameter(name, rng.uniform(-scale, scale, n))


class TestAffine:
    def test_zero_weights_give_bias(self):
        t = Tape()
        out = ad.affine(t.constant([1.0, 2.0]), t.constant(np.zeros((3, 2))), t.constant([1.0, 2.0, 3.0]))
        assert out.value.tolist() == [1.0, 2.0, 3.0]

    def test_identity(self):
        t = Tape()
        x = np.array([0.3, -0.7])
        out = ad.affine(t.constant(x), t.constant(np.eye(2)), t.constant(np.zeros(2)))
        assert np.array_equal(out.value, x)

    def test_against_scalar_loops(self, rng):
        W, x, b = rng.standard_normal((3, 2)), rng.standard_normal(2), rng.standard_normal(3)
        t = Tape()
        out = ad.affine(t.constant(x), t.constant(W), t.constant(b)).value
        ref = [sum(W[i][j] * x[j] for j in range(2)) + b[i] for i in range(3)]
        assert np.allclose(out, ref, rtol=0, atol=1e-14)

    def test_dimension_mismatch(self):
        t = Tape()
        with pytest.raises(ShapeError):
            ad.affine(t.constant(np.ones(3)), t.constant(np.ones((2, 2))), t.constant(np.ones(2)))
        with pytest.raises(ShapeError):
            ad.affine(t.constant(np.ones(2)), t.constant(np.ones((2, 2))), t.constant(np.ones(3)))

    def test_gradients(self, rng):
        W = Parameter("W", rng.standard_normal((3, 4)))
        x = vec_param(rng, 4, "x")
        b = vec_param(rng, 3, "b")
        w = rng.standard_normal(3)

        def loss(t):
            return ad.dot(ad.tanh(ad.affine(t.param(x), t.param(W), t.param(b))), t.constant(w))

        assert grad_check(loss, [W, x, b]) < 1e-7


class TestElementwise:
    def test_values(self):
        t = Tape()
        assert ad.sigmoid(t.constant([0.0])).value[0] == 0.5
        assert ad.tanh(t.constant([0.0])).value[0] == 0.0
        v = np.array([1.5, -2.0])
        assert np.all(ad.mean([t.constant(v), t.constant(-v)]).value == 0.0)

    def test_mean_of_one(self, rng):
        t = Tape()
        v = rng.standard_normal(4)
        assert np.array_equal(ad.mean([t.constant(v)]).value, v)

    def test_mean_against_scalar_loop(self, rng):
        vs = [rng.standard_normal(3) for _ in range(4)]
        t = Tape()
        out = ad.mean([t.constant(v) for v in vs]).value
        ref = [sum(v[k] for v in vs) / 4 for k in range(3)]
        assert np.allclose(out, ref, rtol=0, atol=1e-15)

    def test_empty_mean_and_mismatch(self):
        t = Tape()
        with pytest.raises(ShapeError):
            ad.mean([])
        with pytest.raises(ShapeError):
            ad.elemwise_mul(t.constant(np.ones(2)), t.constant(np.ones(3)))
        with pytest.raises(ShapeError):
            ad.mean([t.constant(np.ones(2)), t.constant(np.ones(3))])

    def test_concat_splits_gradient(self, rng):
        a, b, c = vec_param(rng, 2, "a"), vec_param(rng, 3, "b"), vec_param(rng, 1, "c")
        w = rng.standard_normal(6)

        def loss(t):
            z = ad.concat(t.param(a), t.param(b), t.param(c))
            return ad.dot(ad.sigmoid(z), t.constant(w))

        assert grad_check(loss, [a, b, c]) < 1e-7
        t = Tape()
        t.backward(ad.dot(ad.concat(t.param(a), t.param(b), t.param(c)), t.constant(w)))
        assert np.array_equal(np.concatenate([a.grad, b.grad, c.grad]), w)

    def test_every_op_against_finite_differences(self, rng):
        u, v = vec_param(rng, 4, "u"), vec_param(rng, 4, "v")
        M = Parameter("M", rng.standard_normal((3, 4)))
        W = Parameter("W", rng.standard_normal((4, 2)))

        def loss(t):
            a = ad.elemwise_mul(ad.sigmoid(t.param(u)), ad.tanh(t.param(v)))
            m = ad.mean([a, t.param(u), ad.neg(t.param(v))])
            rows = ad.concat_to_rows(t.param(M), ad.scale(m, 0.5))
            pooled = ad.mean_rows(ad.tanh(rows))
            logits = ad.matmul(ad.take_rows(t.param(M), np.array([0, 2, 2])), t.param(W))
            lp = ad.log_softmax(logits)
            return ad.add(ad.add(ad.total(ad.pick(lp, np.array([1, 0, 1]))), ad.total(pooled)),
                          ad.logsumexp(ad.add_row(t.param(M), t.param(u))))

        assert grad_check(loss, [u, v, M, W], n_coords=100) < 1e-6


class TestLogSoftmax:
    def test_simple_cases(self):
        t = Tape()
        assert np.allclose(ad.log_softmax(t.constant([0.0, 0.0])).value, [math.log(0.5)] * 2)
        assert np.allclose(ad.log_softmax(t.constant([7.0] * 4)).value, [-math.log(4)] * 4)

    def test_high_precision_reference(self):
        mpmath.mp.dps = 50
        z = [1, 2, 3]
        lse = mpmath.log(sum(mpmath.e ** mpmath.mpf(v) for v in z))
        ref = [float(mpmath.mpf(v) - lse) for v in z]
        t = Tape()
        assert np.allclose(ad.log_softmax(t.constant(z)).value, ref, rtol=0, atol=1e-15)

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)))
    def test_normalized(self, z):
        out = ad._log_softmax_array(z)
        assert abs(np.exp(out).sum() - 1.0) < 1e-9

    def test_rows(self, rng):
        z = rng.standard_normal((4, 5)) * 30
        out = ad._log_softmax_array(z)
        assert np.allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-12)


class TestLogSumExp:
    def test_cases(self):
        assert ad.logsumexp_array(np.array([3.25])) == 3.25
        assert ad.logsumexp_array(np.array([0.0, 0.0])) == pytest.approx(math.log(2), abs=1e-15)
        assert ad.logsumexp_array(np.array([1000.0, 1000.0])) == pytest.approx(1000 + math.log(2))

    def test_empty(self):
        with pytest.raises(ValueError):
            ad.logsumexp_array(np.array([]))

    @given(st.lists(finite, min_size=1, max_size=30))
    def test_bounds(self, v):
        v = np.array(v)
        out = ad.logsumexp_array(v)
        assert v.max() <= out + 1e-12
        assert out <= v.max() + math.log(len(v)) + 1e-12


class TestTape:
    def test_backward_twice_doubles(self, rng):
        p = vec_param(rng, 5)
        t = Tape()
        loss = ad.total(ad.tanh(ad.elemwise_mul(t.param(p), t.param(p))))
        t.backward(loss)
        once = p.grad.copy()
        t.backward(loss)
        assert np.array_equal(p.grad, 2 * once)

    def test_param_node_shared_and_grads_accumulate(self, rng):
        p = vec_param(rng, 3)
        t = Tape()
        assert t.param(p) is t.param(p)
        t.backward(ad.total(ad.add(t.param(p), t.param(p))))
        assert np.array_equal(p.grad, [2.0, 2.0, 2.0])

    def test_frozen_params_receive_nothing(self, rng):
        p = vec_param(rng, 3)
        p.frozen = True
        t = Tape()
        t.backward(ad.total(t.param(p)))
        assert not p.grad.any()

    def test_sparse_embedding_gradient(self, rng):
        E = Parameter("E", rng.standard_normal((6, 2)))
        t = Tape()
        t.backward(ad.total(ad.take_rows(t.param(E), np.array([1, 1, 4]))))
        expect = np.zeros((6, 2))
        expect[1] = 2
        expect[4] = 1
        assert np.array_equal(E.grad, expect)

    def test_errors(self, rng):
        t = Tape()
        with pytest.raises(ShapeError):
            t.backward(t.constant(np.ones(2)))
        with pytest.raises(NumericalError):
            t.backward(t.constant(np.inf))


class TestGradCheck:
    def test_linear_loss_is_exact(self, rng):
        p = vec_param(rng, 10)
        a = rng.standard_normal(10)
        assert grad_check(lambda t: ad.dot(t.param(p), t.constant(a)), [p]) <= 1e-9

    def test_eps_range(self, rng):
        p = vec_param(rng, 2)
        with pytest.raises(ValueError):
            grad_check(lambda t: ad.total(t.param(p)), [p], eps=1e-3)

    def test_non_finite_loss(self):
        p = Parameter("p", np.array([0.5e-5]))

        def loss(t):
            x = t.param(p)
            if p.value[0] < 0:
                return t.constant(np.nan)
            return ad.total(x)

        with pytest.raises(NumericalError, match="non-finite"):
            grad_check(loss, [p], eps=1e-5)

    def test_detects_a_wrong_gradient(self, rng):
        p = vec_param(rng, 3)

        def bad_square(t):
            x = t.param(p)
            return t.record(float((x.value ** 2).sum()), (x,), lambda g: (g * x.value,))

        assert grad_check(bad_square, [p]) > 0.3


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        ps = [Parameter("a", rng.standard_normal((3, 4))), Parameter("b", rng.standard_normal(5))]
        ps[0].accum[...] = rng.uniform(0, 2, (3, 4))
        ad.save_parameters(tmp_path / "c.npz", ps, {"kind": "x"})
        loaded, meta = ad.load_parameters(tmp_path / "c.npz")
        assert meta == {"kind": "x"}
        for p in ps:
            q = loaded[p.name]
            assert q.value.tobytes() == p.value.tobytes()
            assert q.accum.tobytes() == p.accum.tobytes()
