import itertools
import math

import numpy as np
import pytest

from shallowlab import (
    expected_gram,
    get_activation,
    hermite_coefficients,
    hermite_poly,
    quadrature_inner_product,
)

# High-precision oracle value for the first Hermite coefficient of tanh,
# computed once with 30-digit adaptive quadrature (E[x tanh x]).
TANH_C1_ORACLE = 0.605705509602158826


class TestHermitePoly:
    def test_constant(self):
        assert hermite_poly(0, 7.3) == 1.0

    def test_q2_by_hand(self):
        assert hermite_poly(2, 2.0) == pytest.approx(3.0)

    def test_q3_by_hand(self):
        assert hermite_poly(3, 1.0) == pytest.approx(-2.0)

    def test_vectorized(self):
        xs = np.array([-1.0, 0.0, 2.0])
        assert np.allclose(hermite_poly(2, xs), xs**2 - 1.0)

    def test_order_cap(self):
        with pytest.raises(ValueError):
            hermite_poly(61, 0.0)
        with pytest.raises(ValueError):
            hermite_poly(-1, 0.0)


class TestOrthogonality:
    def test_inner_products_match_factorials(self):
        for i in range(13):
            for j in range(13):
                expected = math.factorial(i) if i == j else 0.0
                assert quadrature_inner_product(i, j) == pytest.approx(
                    expected, abs=1e-6
                )


class TestCoefficients:
    def test_identity_activation(self):
        exp = hermite_coefficients(get_activation("identity"), 12)
        assert exp.coefficient(1) == pytest.approx(1.0, abs=1e-9)
        for i in (0, 2, 3, 4, 5, 10):
            assert abs(exp.coefficient(i)) <= 1e-9

    def test_square_activation(self):
        exp = hermite_coefficients(get_activation("square"), 12)
        assert exp.coefficient(0) == pytest.approx(1.0, abs=1e-9)
        assert exp.coefficient(2) == pytest.approx(2.0, abs=1e-9)
        assert abs(exp.coefficient(1)) <= 1e-9

    def test_tanh_c0_vanishes_and_c1_locked(self):
        exp = hermite_coefficients(get_activation("tanh"), 20)
        assert exp.coefficient(0) == 0.0
        assert exp.coefficient(1) == pytest.approx(TANH_C1_ORACLE, abs=1e-9)

    def test_norm_and_tail_are_exact_functions_of_coefficients(self):
        exp = hermite_coefficients(get_activation("gelu"), 14)
        assert exp.hermite_norm == pytest.approx(
            math.sqrt(sum(c**2 for c in exp.coeffs)), rel=1e-14
        )
        assert exp.tail_mass == pytest.approx(
            sum(exp.coeffs[i] ** 2 / math.factorial(i) for i in range(2, 15)),
            rel=1e-12,
        )

    def test_tail_mass_monotone_under_truncation(self):
        short = hermite_coefficients(get_activation("gelu"), 15)
        long = hermite_coefficients(get_activation("gelu"), 20)
        dropped = sum(
            long.coeffs[i] ** 2 / math.factorial(i) for i in range(16, 21)
        )
        assert long.tail_mass - short.tail_mass <= dropped + 1e-15
        assert long.tail_mass >= short.tail_mass - 1e-15

    def test_order_cap(self):
        with pytest.raises(ValueError):
            hermite_coefficients(get_activation("tanh"), 41)

    def test_nonfinite_activation_rejected(self):
        with pytest.raises(ValueError):
            hermite_coefficients(lambda x: np.exp(x**2), 5)


class TestReconstruction:
    def test_polynomial_reconstructs_exactly(self):
        exp = hermite_coefficients(get_activation("square"), 10)
        xs = np.linspace(-3, 3, 41)
        assert np.allclose(exp.reconstruct(xs), xs**2, atol=1e-9)

    def test_tanh_partial_sum_converges_with_order(self):
        xs = np.linspace(-3, 3, 601)
        tanh = get_activation("tanh")
        err20 = np.max(np.abs(hermite_coefficients(tanh, 20).reconstruct(xs) - np.tanh(xs)))
        err30 = np.max(np.abs(hermite_coefficients(tanh, 30).reconstruct(xs) - np.tanh(xs)))
        err40 = np.max(np.abs(hermite_coefficients(tanh, 40).reconstruct(xs) - np.tanh(xs)))
        assert err30 < err20
        assert err40 < err30
        assert err40 <= 1e-3


def _addition_formula_rhs(i, a, x):
    # Direct composition sum: q_i(a.x) = i! sum_{|s|=i} prod a_k^{s_k}/s_k! q_{s_k}(x_k)
    d = len(a)
    total = 0.0
    for comp in itertools.product(range(i + 1), repeat=d):
        if sum(comp) != i:
            continue
        term = 1.0
        for k in range(d):
            term *= a[k] ** comp[k] / math.factorial(comp[k])
            term *= hermite_poly(comp[k], x[k])
        total += term
    return math.factorial(i) * total


class TestAdditionFormula:
    @pytest.mark.parametrize("i", [1, 2, 3, 4])
    def test_unit_direction_expansion(self, i):
        gen = np.random.default_rng(100 + i)
        for _ in range(5):
            a = gen.standard_normal(3)
            a /= np.linalg.norm(a)
            x = gen.standard_normal(3)
            lhs = hermite_poly(i, float(a @ x))
            assert lhs == pytest.approx(_addition_formula_rhs(i, a, x), abs=1e-8)


class TestExpectedGram:
    def test_identity_expansion_gives_scaled_gram(self):
        gen = np.random.default_rng(3)
        x = gen.standard_normal((5, 4))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        exp = hermite_coefficients(get_activation("identity"), 10)
        assert np.allclose(expected_gram(x, exp, 4), 4.0 * (x.T @ x), atol=1e-8)

    def test_square_expansion_on_orthonormal_columns(self):
        x = np.eye(4)[:, :2]
        exp = hermite_coefficients(get_activation("square"), 10)
        assert np.allclose(
            expected_gram(x, exp, 1), np.array([[3.0, 1.0], [1.0, 3.0]]), atol=1e-8
        )

    def test_symmetric_and_psd(self):
        gen = np.random.default_rng(9)
        x = gen.standard_normal((6, 8))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        exp = hermite_coefficients(get_activation("gelu"), 12)
        g = expected_gram(x, exp, 32)
        assert np.max(np.abs(g - g.T)) <= 1e-12
        assert np.linalg.eigvalsh(g)[0] >= -1e-10

    def test_non_unit_columns_rejected(self):
        exp = hermite_coefficients(get_activation("identity"), 5)
        with pytest.raises(ValueError):
            expected_gram(2.0 * np.eye(3), exp, 1)
