import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liplearn import autodiff as ad
from liplearn.errors import ConvergenceError, DimensionError, NumericError


def naive_matmul(a, b):
    """Triple-loop reference product (the oracle stays this dumb on purpose)."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(np.eye(2), np.array([[1.0], [2.0]]))
        np.testing.assert_array_equal(out.value, [[1.0], [2.0]])

    def test_hand_case(self):
        out = ad.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.value, [[2.0], [4.0]])

    def test_against_triple_loop(self):
        rng = ad.make_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        got = ad.matmul(a, b).value
        want = naive_matmul(a, b)
        assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.abs(want).max())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6),
           st.integers(0, 2 ** 31))
    def test_matches_reference_on_random_shapes(self, m, k, n, seed):
        rng = ad.make_rng(seed)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        got = ad.matmul(a, b).value
        want = naive_matmul(a, b)
        scale = max(1.0, np.abs(want).max())
        assert np.max(np.abs(got - want)) <= 1e-12 * scale

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_gradients(self):
        rng = ad.make_rng(1)
        b = rng.normal(size=(3, 2))
        err = ad.grad_check(lambda t: ad.sum_all(ad.matmul(t, ad.Var(b))),
                            rng.normal(size=(2, 3)))
        assert err <= 1e-7


class TestSpectralNorm:
    def test_diagonal(self):
        assert ad.spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-9)

    def test_nilpotent(self):
        assert ad.spectral_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == \
            pytest.approx(2.0, rel=1e-9)

    def test_against_svd(self):
        rng = ad.make_rng(7)
        w = rng.normal(size=(8, 5))
        got = ad.spectral_norm(w, tol=1e-12, max_iter=20000)
        want = np.linalg.svd(w, compute_uv=False)[0]
        assert abs(got - want) / want <= 1e-8

    def test_lower_bounds_any_quotient(self):
        rng = ad.make_rng(8)
        w = rng.normal(size=(6, 4))
        sigma = ad.spectral_norm(w, tol=1e-11, max_iter=20000)
        for _ in range(50):
            x = rng.normal(size=4)
            assert np.linalg.norm(w @ x) <= sigma * np.linalg.norm(x) * (1 + 1e-9)

    def test_rejects_zero_matrix(self):
        with pytest.raises(ValueError):
            ad.spectral_norm(np.zeros((3, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            ad.spectral_norm(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_non_convergence_carries_iterate(self):
        w = ad.make_rng(3).normal(size=(6, 6))
        with pytest.raises(ConvergenceError) as exc:
            ad.spectral_norm(w, tol=1e-14, max_iter=1)
        assert exc.value.last_iterate is not None


class TestCayley:
    def test_zero_gives_identity(self):
        q1, q2 = ad.cayley(np.zeros((3, 3)), np.zeros((2, 3)))
        np.testing.assert_allclose(q1.value, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(q2.value, np.zeros((2, 3)), atol=1e-14)

    def test_skew_hand_case(self):
        # u = [[0,1],[-1,0]], v = 0: (I+Z)^{-1}(I-Z) with Z = 2u.
        q1, q2 = ad.cayley(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros((0, 2)))
        np.testing.assert_allclose(q1.value, [[-0.6, -0.8], [0.8, -0.6]], atol=1e-14)
        assert np.linalg.det(q1.value) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(q1.value.T @ q1.value, np.eye(2), atol=1e-12)

    def test_orthonormal_columns(self):
        rng = ad.make_rng(5)
        u, v = rng.normal(size=(4, 4)), rng.normal(size=(3, 4))
        q1, q2 = ad.cayley(u, v)
        gram = q1.value.T @ q1.value + q2.value.T @ q2.value
        assert np.abs(gram - np.eye(4)).max() <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 8), st.integers(0, 2 ** 31))
    def test_orthonormality_property(self, n, m, seed):
        rng = ad.make_rng(seed)
        q1, q2 = ad.cayley(rng.normal(size=(n, n)), rng.normal(size=(m, n)))
        gram = q1.value.T @ q1.value + q2.value.T @ q2.value
        assert np.abs(gram - np.eye(n)).max() <= 1e-10

    def test_nan_input_raises(self):
        u = np.zeros((2, 2))
        u[0, 0] = np.nan
        with pytest.raises(NumericError):
            ad.cayley(u, np.zeros((1, 2)))

    def test_differentiable_through_solve(self):
        rng = ad.make_rng(9)
        v = ad.Var(rng.normal(size=(2, 3)))

        def f(t):
            q1, q2 = ad.cayley(t, v)
            return ad.add(ad.sum_all(ad.square(q1)), ad.sum_all(ad.square(q2)))

        assert ad.grad_check(f, rng.normal(size=(3, 3)), step=1e-5) <= 1e-6


class TestGradCheck:
    def test_quadratic(self):
        err = ad.grad_check(lambda t: ad.sum_all(ad.square(t)),
                            np.array([1.0, 2.0]), step=1e-4)
        assert err <= 1e-7

    def test_constant_function_scores_zero(self):
        err = ad.grad_check(lambda t: ad.sum_all(ad.mul(t, 0.0)),
                            np.array([0.3, -0.7]), step=1e-4)
        assert err == 0.0

    def test_exp_tanh_chain(self):
        err = ad.grad_check(
            lambda t: ad.sum_all(ad.tanh(ad.exp(ad.scale(t, 0.3)))),
            np.array([[0.1, -0.4], [0.2, 0.8]]), step=1e-5)
        assert err <= 1e-6

    def test_max_with_const_tie_routes_gradient(self):
        x = ad.Var(np.asarray(2.0))
        out = ad.max_with_const(x, 2.0)
        ad.backward(out)
        assert x.grad == 1.0

    def test_relu_at_kink_is_zero(self):
        x = ad.Var(np.asarray(0.0))
        ad.backward(ad.relu(x))
        assert x.grad == 0.0

    def test_rejects_nonscalar(self):
        with pytest.raises(DimensionError):
            ad.backward(ad.Var(np.zeros(3)))


def test_solve_matches_numpy_and_grads():
    rng = ad.make_rng(11)
    a = rng.normal(size=(4, 4)) + 4.0 * np.eye(4)
    b = rng.normal(size=(4, 2))
    out = ad.solve(a, b)
    np.testing.assert_allclose(out.value, np.linalg.solve(a, b), atol=1e-12)
    err = ad.grad_check(lambda t: ad.sum_all(ad.square(ad.solve(t, ad.Var(b)))),
                        a, step=1e-5)
    assert err <= 1e-6


def test_rng_is_reproducible():
    a = ad.make_rng(123).normal(size=5)
    b = ad.make_rng(123).normal(size=5)
    np.testing.assert_array_equal(a, b)


def test_backward_accumulates_shared_nodes():
    x = ad.Var(np.asarray(3.0))
    y = ad.mul(x, x)  # same leaf twice
    ad.backward(y)
    assert x.grad == pytest.approx(6.0)
