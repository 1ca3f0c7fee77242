import numpy as np
import pytest

from kan_ntk.basis import BasisSpec, TransformSpec
from kan_ntk.errors import ShapeError, StaleCacheError
from kan_ntk.model import (
    Dataset,
    KanParams,
    KanShape,
    OperatorCoefficients,
    forward,
    forward_batch,
    init_params,
    input_derivatives,
    operator_apply,
    param_grad,
    param_grad_batch,
    param_grad_of_operator,
    residuals,
)

from oracles import brute_forward, central_diff, rel_err

# brute-force oracle values, computed once with tests/oracles.py and frozen
FROZEN_F_CHEB_TANH = -1.362926156788744  # n=2, m=3, n_d=3, seed 7, x=(0.3, -0.4)
FROZEN_F_MONO_SIGMOID = 1.5656789760699605  # n=3, m=4, n_d=5, seed 11, x=(0.1, 0.2, -0.5)
FROZEN_A000_SEED7 = 0.0012301533574825742
FROZEN_C_LAST_SEED7 = -2.516759710820513


def const_shape():
    """m = n = n_d = 1 with b_1 = 1 and the identity transform."""
    return KanShape.create(1, 1, 1, basis="monomial", transform="identity")


def random_shapes(count, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(count):
        yield i, KanShape.create(int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 6)))


class TestShape:
    def test_param_counts(self):
        s = KanShape.create(2, 4, 3)
        assert (s.num_a, s.num_c, s.num_params) == (24, 12, 36)

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ValueError):
            KanShape(2, 4, 3, BasisSpec.chebyshev(3), BasisSpec.chebyshev(4), TransformSpec("tanh"))


class TestInit:
    def test_sizes(self):
        p = init_params(KanShape.create(2, 4, 3), 7)
        assert p.a.size == 24 and p.c.size == 12

    def test_deterministic(self):
        s = KanShape.create(2, 4, 3)
        p, q = init_params(s, 7), init_params(s, 7)
        assert np.array_equal(p.a, q.a) and np.array_equal(p.c, q.c)

    def test_frozen_draws(self):
        p = init_params(KanShape.create(2, 3, 3), 7)
        assert p.a[0, 0, 0] == FROZEN_A000_SEED7
        assert p.c[-1, -1] == FROZEN_C_LAST_SEED7

    def test_standard_normal_moments(self):
        p = init_params(KanShape.create(1, 10_000, 2), 1)
        v = p.to_vector()
        assert abs(v.mean()) <= 0.05
        assert abs(v.var() - 1.0) <= 0.05

    def test_immutable(self):
        p = init_params(KanShape.create(1, 2, 2), 0)
        with pytest.raises(ValueError):
            p.a[0, 0, 0] = 1.0


class TestSerialization:
    def test_vector_roundtrip(self):
        s = KanShape.create(2, 3, 4)
        p = init_params(s, 2)
        q = KanParams.from_vector(s, p.to_vector())
        assert np.array_equal(p.a, q.a) and np.array_equal(p.c, q.c)

    def test_ordering_a_then_c(self):
        s = KanShape.create(2, 3, 4)
        p = init_params(s, 2)
        v = p.to_vector()
        assert np.array_equal(v[: s.num_a], p.a.ravel()) and np.array_equal(v[s.num_a :], p.c.ravel())

    @pytest.mark.parametrize("suffix", [".npy", ".txt"])
    def test_file_roundtrip(self, tmp_path, suffix):
        s = KanShape.create(2, 3, 4)
        p = init_params(s, 5)
        path = tmp_path / f"theta{suffix}"
        p.save(path)
        q = KanParams.load(s, path)
        assert np.array_equal(p.to_vector(), q.to_vector())


class TestForward:
    def test_constant_network(self):
        s = const_shape()
        p = KanParams(np.ones((1, 1, 1)), np.full((1, 1), 2.5), s)
        for x in (-3.0, 0.0, 7.0):
            assert forward(p, [x])[0] == 2.5

    def test_zero_outer_layer(self):
        s = KanShape.create(3, 5, 4)
        p = init_params(s, 0)
        p = p.replace(c=np.zeros_like(p.c))
        assert forward(p, [0.1, 0.2, 0.3])[0] == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        s = KanShape.create(2, 3, 3)
        for seed in range(5):
            p = init_params(s, seed)
            x = rng.uniform(-1, 1, 2)
            assert abs(forward(p, x)[0] - brute_forward(p.a, p.c, x)) <= 1e-12

    def test_frozen_values(self):
        p = init_params(KanShape.create(2, 3, 3), 7)
        assert forward(p, [0.3, -0.4])[0] == pytest.approx(FROZEN_F_CHEB_TANH, abs=1e-13)
        s = KanShape.create(3, 4, 5, basis="monomial", transform="sigmoid")
        p = init_params(s, 11)
        assert forward(p, [0.1, 0.2, -0.5])[0] == pytest.approx(FROZEN_F_MONO_SIGMOID, abs=1e-13)

    def test_batch_matches_single(self):
        s = KanShape.create(2, 6, 4)
        p = init_params(s, 1)
        X = np.random.default_rng(0).uniform(-1, 1, (9, 2))
        f = forward_batch(p, X)
        for i in range(9):
            assert abs(f[i] - forward(p, X[i])[0]) <= 1e-13

    def test_homogeneous_in_c(self):
        s = KanShape.create(2, 5, 3)
        p = init_params(s, 4)
        x = [0.2, -0.6]
        assert abs(forward(p.replace(c=3.0 * p.c), x)[0] - 3.0 * forward(p, x)[0]) <= 1e-12

    def test_zero_padded_width(self):
        s = KanShape.create(2, 4, 3)
        p = init_params(s, 4)
        s2 = s.with_width(8)
        a = np.concatenate([p.a, np.zeros_like(p.a)])
        c = np.concatenate([p.c, np.zeros_like(p.c)])
        x = [0.3, 0.1]
        assert abs(forward(KanParams(a, c, s2), x)[0] - forward(p, x)[0] / np.sqrt(2)) <= 1e-12

    def test_dimension_mismatch(self):
        p = init_params(KanShape.create(2, 3, 3), 0)
        with pytest.raises(ShapeError):
            forward(p, [0.1, 0.2, 0.3])


class TestResiduals:
    def test_zero_when_targets_match(self):
        s = KanShape.create(2, 3, 3)
        p = init_params(s, 0)
        X = np.random.default_rng(1).uniform(-1, 1, (5, 2))
        assert np.all(residuals(p, Dataset(X, forward_batch(p, X))) == 0.0)

    def test_single_sample(self):
        s = const_shape()
        p = KanParams(np.ones((1, 1, 1)), np.full((1, 1), 2.0), s)
        assert residuals(p, Dataset(np.zeros((1, 1)), np.ones(1)))[0] == 1.0

    def test_constant_error_norm(self):
        s = const_shape()
        p = KanParams(np.ones((1, 1, 1)), np.full((1, 1), 2.0), s)
        r = residuals(p, Dataset(np.zeros((4, 1)), np.full(4, 2.0 - 0.75)))
        assert np.linalg.norm(r) == pytest.approx(0.75, abs=1e-15)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan, 0.0]]), np.zeros(1))


class TestParamGrad:
    def test_zero_c_gives_zero_a_gradient(self):
        s = KanShape.create(2, 4, 3)
        p = init_params(s, 0)
        p = p.replace(c=np.zeros_like(p.c))
        _, cache = forward(p, [0.1, 0.5])
        ga, _ = param_grad(p, [0.1, 0.5], cache)
        assert np.all(ga == 0.0)

    def test_constant_network(self):
        s = const_shape()
        p = KanParams(np.ones((1, 1, 1)), np.full((1, 1), 2.5), s)
        _, cache = forward(p, [0.4])
        ga, gc = param_grad(p, [0.4], cache)
        assert gc[0, 0] == 1.0 and ga[0, 0, 0] == 0.0

    def test_finite_differences(self):
        rng = np.random.default_rng(1)
        for i, s in random_shapes(100):
            p = init_params(s, i)
            x = rng.uniform(-0.9, 0.9, s.n)
            _, cache = forward(p, x)
            ga, gc = param_grad(p, x, cache)
            fd = central_diff(lambda th: forward(KanParams.from_vector(s, th), x)[0], p.to_vector())
            assert rel_err(ga.ravel(), fd[: s.num_a]) <= 1e-6
            assert rel_err(gc.ravel(), fd[s.num_a :]) <= 1e-6

    def test_batch_matches_single(self):
        s = KanShape.create(2, 5, 4)
        p = init_params(s, 3)
        X = np.random.default_rng(0).uniform(-1, 1, (6, 2))
        Ga, Gc = param_grad_batch(p, X)
        for i in range(6):
            _, cache = forward(p, X[i])
            ga, gc = param_grad(p, X[i], cache)
            np.testing.assert_allclose(Ga[i], ga, atol=1e-14)
            np.testing.assert_allclose(Gc[i], gc, atol=1e-14)

    def test_stale_cache_params(self):
        s = KanShape.create(2, 3, 3)
        p = init_params(s, 0)
        _, cache = forward(p, [0.1, 0.2])
        q = p.replace(c=p.c * 2)
        with pytest.raises(StaleCacheError):
            param_grad(q, [0.1, 0.2], cache)

    def test_stale_cache_input(self):
        p = init_params(KanShape.create(2, 3, 3), 0)
        _, cache = forward(p, [0.1, 0.2])
        with pytest.raises(StaleCacheError):
            param_grad(p, [0.1, 0.3], cache)


class TestInputDerivatives:
    def test_zero_c(self):
        s = KanShape.create(2, 3, 3)
        p = init_params(s, 0)
        p = p.replace(c=np.zeros_like(p.c))
        g, H = input_derivatives(p, [0.3, 0.1], 2)
        assert np.all(g == 0) and np.all(H == 0)

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        for i, s in random_shapes(100, seed=5):
            p = init_params(s, i)
            x = rng.uniform(-0.9, 0.9, s.n)
            g, H = input_derivatives(p, x, 2)
            assert rel_err(g, central_diff(lambda xx: forward(p, xx)[0], x)) <= 1e-5
            assert rel_err(H, central_diff(lambda xx: input_derivatives(p, xx, 1)[0], x)) <= 1e-5

    def test_hessian_symmetric(self):
        rng = np.random.default_rng(3)
        s = KanShape.create(3, 6, 4)
        p = init_params(s, 1)
        for _ in range(20):
            _, H = input_derivatives(p, rng.uniform(-1, 1, 3), 2)
            assert np.max(np.abs(H - H.T)) <= 1e-12

    def test_order_one_has_no_hessian(self):
        p = init_params(KanShape.create(2, 3, 3), 0)
        assert input_derivatives(p, [0.1, 0.1], 1)[1] is None


class TestOperatorGradient:
    def _time_plus_identity(self, n):
        first = np.zeros(n)
        first[0] = 1.0
        return OperatorCoefficients(np.ones(1), first, np.zeros((n, n)))

    def test_time_derivative_plus_value(self):
        rng = np.random.default_rng(4)
        for i, s in random_shapes(30, seed=9):
            p = init_params(s, i)
            x = rng.uniform(-0.9, 0.9, s.n)
            ops = self._time_plus_identity(s.n)
            ga, gc = param_grad_of_operator(p, x, ops)

            def Lf(th):
                q = KanParams.from_vector(s, th)
                return input_derivatives(q, x, 1)[0][0] + forward(q, x)[0]

            fd = central_diff(Lf, p.to_vector())
            assert rel_err(ga.ravel(), fd[: s.num_a]) <= 1e-5
            assert rel_err(gc.ravel(), fd[s.num_a :]) <= 1e-5

    def test_general_second_order_operator(self):
        rng = np.random.default_rng(6)
        for i, s in random_shapes(30, seed=11):
            p = init_params(s, i)
            x = rng.uniform(-0.9, 0.9, s.n)
            A = rng.normal(size=(s.n, s.n))
            ops = OperatorCoefficients(rng.normal(size=1), rng.normal(size=(1, s.n)), (A + A.T)[None])
            ga, gc = param_grad_of_operator(p, x, ops)
            fd = central_diff(lambda th: operator_apply(KanParams.from_vector(s, th), x[None], ops)[0],
                              p.to_vector())
            assert rel_err(ga.ravel(), fd[: s.num_a]) <= 1e-5
            assert rel_err(gc.ravel(), fd[s.num_a :]) <= 1e-5

    def test_operator_value_matches_derivatives(self):
        rng = np.random.default_rng(8)
        s = KanShape.create(3, 5, 4)
        p = init_params(s, 2)
        x = rng.uniform(-1, 1, 3)
        A = rng.normal(size=(3, 3))
        M = A + A.T
        w = rng.normal(size=3)
        ops = OperatorCoefficients(np.array([0.7]), w[None], M[None])
        g, H = input_derivatives(p, x, 2)
        ref = 0.7 * forward(p, x)[0] + w @ g + np.sum(M * H)
        assert abs(operator_apply(p, x[None], ops)[0] - ref) <= 1e-12

    def test_zero_c(self):
        s = KanShape.create(2, 4, 3)
        p = init_params(s, 1)
        p = p.replace(c=np.zeros_like(p.c))
        ga, _ = param_grad_of_operator(p, [0.2, 0.4], self._time_plus_identity(2))
        assert np.all(ga == 0.0)

    def test_identity_operator_is_param_grad(self):
        s = KanShape.create(2, 4, 3)
        p = init_params(s, 1)
        x = np.array([0.2, -0.4])
        ga, gc = param_grad_of_operator(p, x, OperatorCoefficients.identity(1, 2))
        ra, rc = param_grad(p, x, forward(p, x)[1])
        np.testing.assert_allclose(ga, ra, atol=1e-15)
        np.testing.assert_allclose(gc, rc, atol=1e-15)

    def test_operator_shape_mismatch(self):
        with pytest.raises(ShapeError):
            OperatorCoefficients(np.ones(2), np.zeros((3, 2)), np.zeros((3, 2, 2)))


class TestNonPolynomialOuter:
    @pytest.mark.parametrize("basis", ["rbf", "bspline"])
    def test_gradients(self, basis):
        s = KanShape.create(2, 3, 5, basis=basis)
        p = init_params(s, 0)
        x = np.array([0.37, -0.21])
        _, cache = forward(p, x)
        ga, gc = param_grad(p, x, cache)
        fd = central_diff(lambda th: forward(KanParams.from_vector(s, th), x)[0], p.to_vector())
        assert rel_err(np.concatenate([ga.ravel(), gc.ravel()]), fd) <= 1e-6
