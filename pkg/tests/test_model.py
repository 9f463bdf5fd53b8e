import numpy as np
import pytest

from poisonlab import FeatureData, LabeledData, encode
from poisonlab.model import (Encoder, LinearHead, ce_loss, cross_grad_vjp,
                             flatten_params, grad_features, grad_head,
                             grad_inputs, grad_inputs_matching, hvp_head,
                             unflatten_params)


def make_encoder(rng, dims, scale=0.6):
    Ws = tuple(scale * rng.standard_normal((dims[i], dims[i + 1]))
               for i in range(len(dims) - 1))
    bs = tuple(scale * rng.standard_normal(dims[i + 1])
               for i in range(len(dims) - 1))
    return Encoder(Ws, bs, frozen=True)


def identity_encoder(d):
    return Encoder((np.eye(d),), (np.zeros(d),), frozen=True)


def central_fd(fun, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (fun(xp) - fun(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestEncoder:
    def test_zero_weights_zero_features(self):
        f = Encoder((np.zeros((3, 4)), np.zeros((4, 2))),
                    (np.zeros(4), np.zeros(2)), frozen=True)
        assert np.array_equal(encode(f, np.ones((5, 3))), np.zeros((5, 2)))

    def test_identity_layer(self, rng):
        x = rng.standard_normal((6, 4))
        assert np.array_equal(encode(identity_encoder(4), x), x)

    def test_matches_per_sample_loop(self, rng):
        f = make_encoder(rng, (5, 7, 3))
        x = rng.standard_normal((9, 5))
        got = encode(f, x)
        for i in range(9):
            h = np.maximum(x[i] @ f.weights[0] + f.biases[0], 0.0)
            z = h @ f.weights[1] + f.biases[1]
            assert np.max(np.abs(got[i] - z)) <= 1e-12

    def test_frozen_arrays_immutable(self, rng):
        f = make_encoder(rng, (3, 4, 2))
        with pytest.raises(ValueError):
            f.weights[0][0, 0] = 99.0

    def test_chain_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Encoder((np.zeros((3, 4)), np.zeros((5, 2))),
                    (np.zeros(4), np.zeros(2)))

    def test_input_dim_checked(self, rng):
        f = make_encoder(rng, (3, 4, 2))
        with pytest.raises(ValueError):
            encode(f, np.zeros((2, 7)))


class TestCeLoss:
    def test_uniform_predictor_ln_c(self, rng):
        for c in (2, 3, 5):
            head = LinearHead(np.zeros((c, 4)), np.zeros(c))
            data = FeatureData(rng.standard_normal((8, 4)),
                               rng.integers(0, c, 8).astype(np.int64))
            assert abs(ce_loss(head, data) - np.log(c)) <= 1e-12

    def test_saturated_correct_logit(self):
        head = LinearHead(np.array([[1.0], [0.0]]), np.zeros(2))
        data = FeatureData(np.array([[30.0]]), np.array([0]))
        assert ce_loss(head, data) <= 1e-9

    def test_matches_definition(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        Z = rng.standard_normal((6, 4))
        y = rng.integers(0, 3, 6)
        L = Z @ head.W.T + head.b
        P = np.exp(L) / np.exp(L).sum(axis=1, keepdims=True)
        ref = -np.mean(np.log(P[np.arange(6), y]))
        assert abs(ce_loss(head, FeatureData(Z, y)) - ref) <= 1e-12


class TestGradHead:
    def test_uniform_softmax_closed_form(self, rng):
        c = 3
        z = rng.standard_normal(5)
        y = 1
        head = LinearHead(np.zeros((c, 5)), np.zeros(c))
        dW, db = grad_head(head, FeatureData(z[None, :], np.array([y])))
        for yp in range(c):
            want = (1.0 / c - (1.0 if yp == y else 0.0))
            assert np.allclose(dW[yp], want * z, atol=1e-15)
            assert abs(db[yp] - want) <= 1e-15

    def test_zero_at_symmetric_minimizer(self):
        # same feature under both labels: uniform prediction is optimal
        head = LinearHead(np.zeros((2, 1)), np.zeros(2))
        data = FeatureData(np.array([[1.0], [1.0]]), np.array([0, 1]))
        dW, db = grad_head(head, data)
        assert np.linalg.norm(flatten_params(dW, db)) <= 1e-6

    def test_matches_finite_differences(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        data = FeatureData(rng.standard_normal((7, 4)), rng.integers(0, 3, 7))
        dW, db = grad_head(head, data)

        def at(v):
            W, b = unflatten_params(v, 3, 4)
            return ce_loss(LinearHead(W, b), data)

        fd = central_fd(at, flatten_params(head.W, head.b))
        assert rel_err(flatten_params(dW, db), fd) <= 1e-5


class TestGradFeatures:
    def test_zero_head_zero_grad(self, rng):
        head = LinearHead(np.zeros((3, 4)), np.zeros(3))
        data = FeatureData(rng.standard_normal((5, 4)), rng.integers(0, 3, 5))
        assert np.array_equal(grad_features(head, data), np.zeros((5, 4)))

    def test_duplicate_sample_duplicates_row(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        z = rng.standard_normal(4)
        Z = np.vstack([z, rng.standard_normal((2, 4)), z])
        y = np.array([1, 0, 2, 1])
        g = grad_features(head, FeatureData(Z, y))
        assert np.array_equal(g[0], g[3])

    def test_matches_finite_differences(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        Z = rng.standard_normal((6, 4))
        y = rng.integers(0, 3, 6)
        g = grad_features(head, FeatureData(Z, y))
        fd = central_fd(lambda Zp: ce_loss(head, FeatureData(Zp, y)), Z)
        assert rel_err(g, fd) <= 1e-5


class TestGradInputs:
    def test_zero_head_zero_grad(self, rng):
        f = make_encoder(rng, (4, 6, 3))
        head = LinearHead(np.zeros((2, 3)), np.zeros(2))
        data = LabeledData(rng.standard_normal((5, 4)), rng.integers(0, 2, 5))
        assert np.array_equal(grad_inputs(f, head, data), np.zeros((5, 4)))

    def test_matches_finite_differences(self, rng):
        f = make_encoder(rng, (4, 6, 3))
        head = LinearHead(rng.standard_normal((2, 3)), rng.standard_normal(2))
        X = rng.standard_normal((6, 4))
        y = rng.integers(0, 2, 6)
        g = grad_inputs(f, head, LabeledData(X, y))
        fd = central_fd(
            lambda Xp: ce_loss(head, FeatureData(encode(f, Xp), y)), X)
        assert rel_err(g, fd) <= 1e-5


class TestGradInputsMatching:
    def test_identity_encoder(self, rng):
        nu = rng.standard_normal((5, 3))
        zeta = rng.standard_normal((5, 3))
        g = grad_inputs_matching(identity_encoder(3), nu, zeta)
        assert np.allclose(g, nu - zeta, atol=1e-15)

    def test_matched_features_zero(self, rng):
        f = make_encoder(rng, (4, 6, 3))
        nu = rng.standard_normal((5, 4))
        g = grad_inputs_matching(f, nu, encode(f, nu))
        assert np.array_equal(g, np.zeros((5, 4)))

    def test_matches_finite_differences(self, rng):
        f = make_encoder(rng, (4, 6, 3))
        nu = rng.standard_normal((5, 4))
        zeta = rng.standard_normal((5, 3))
        g = grad_inputs_matching(f, nu, zeta)
        fd = central_fd(
            lambda V: 0.5 * np.sum((encode(f, V) - zeta) ** 2), nu, h=1e-5)
        assert rel_err(g, fd) <= 1e-4


class TestHvpHead:
    def test_zero_vector(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        data = FeatureData(rng.standard_normal((6, 4)), rng.integers(0, 3, 6))
        v = np.zeros(3 * 4 + 3)
        assert np.array_equal(hvp_head(head, data, v), v)

    def test_curvature_nonnegative(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        data = FeatureData(rng.standard_normal((6, 4)), rng.integers(0, 3, 6))
        for _ in range(10):
            v = rng.standard_normal(15)
            assert v @ hvp_head(head, data, v) >= -1e-10

    def test_matches_grad_difference(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        data = FeatureData(rng.standard_normal((6, 4)), rng.integers(0, 3, 6))
        v = rng.standard_normal(15)
        h = 1e-6
        x0 = flatten_params(head.W, head.b)

        def grad_at(x):
            W, b = unflatten_params(x, 3, 4)
            dW, db = grad_head(LinearHead(W, b), data)
            return flatten_params(dW, db)

        fd = (grad_at(x0 + h * v) - grad_at(x0 - h * v)) / (2 * h)
        assert rel_err(hvp_head(head, data, v), fd) <= 1e-4


class TestCrossGradVjp:
    def test_zero_vector(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        nu = FeatureData(rng.standard_normal((5, 4)), rng.integers(0, 3, 5))
        got = cross_grad_vjp(None, head, nu, np.zeros(15))
        assert np.array_equal(got, np.zeros((5, 4)))

    def test_two_class_symbolic_oracle(self, rng):
        # single sample, one feature: expand d<grad, v>/dz by hand
        W = rng.standard_normal((2, 1))
        b = rng.standard_normal(2)
        z, y = 0.7, 0
        v = rng.standard_normal(4)
        vW, vb = v[:2].reshape(2, 1), v[2:]
        L = np.array([W[0, 0] * z + b[0], W[1, 0] * z + b[1]])
        e = np.exp(L - L.max())
        p0, p1 = e / e.sum()
        s = p0 * p1 * (W[0, 0] - W[1, 0])
        dp0, dp1 = s, -s
        want = (vW[0, 0] * (dp0 * z + (p0 - 1.0)) + vW[1, 0] * (dp1 * z + p1)
                + vb[0] * dp0 + vb[1] * dp1)
        head = LinearHead(W, b)
        nu = FeatureData(np.array([[z]]), np.array([y]))
        got = cross_grad_vjp(None, head, nu, v)
        assert abs(got[0, 0] - want) <= 1e-12

    def test_matches_finite_differences(self, rng):
        head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
        Z = rng.standard_normal((5, 4))
        y = rng.integers(0, 3, 5)
        v = rng.standard_normal(15)

        def inner(Zp):
            dW, db = grad_head(head, FeatureData(Zp, y))
            return flatten_params(dW, db) @ v

        got = cross_grad_vjp(None, head, FeatureData(Z, y), v)
        assert rel_err(got, central_fd(inner, Z)) <= 1e-4

    def test_input_space_requires_encoder(self, rng):
        head = LinearHead(rng.standard_normal((2, 3)), rng.standard_normal(2))
        nu = LabeledData(rng.standard_normal((4, 5)), rng.integers(0, 2, 4))
        with pytest.raises(ValueError):
            cross_grad_vjp(None, head, nu, np.zeros(8))


class TestParamLayout:
    def test_round_trip(self, rng):
        W = rng.standard_normal((3, 5))
        b = rng.standard_normal(3)
        W2, b2 = unflatten_params(flatten_params(W, b), 3, 5)
        assert np.array_equal(W, W2) and np.array_equal(b, b2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            unflatten_params(np.zeros(7), 2, 3)
