import math

import numpy as np
import pytest

from shallowlab import (
    Dataset,
    DimensionError,
    NetParams,
    constants_at_init,
    forward,
    get_activation,
    gradient,
    jacobian_adjoint,
    jacobian_apply,
    jacobian_extremes,
    jacobian_matrix,
    loss,
)

IDENT = get_activation("identity")
ACTIVATIONS = [get_activation(n) for n in ("identity", "square", "tanh", "gelu")]


def scalar_net(w, v):
    return NetParams(np.array([[float(w)]]), np.array([[float(v)]]))


def random_instance(gen, max_dim=8):
    d0, d1, d2, n = gen.integers(1, max_dim + 1, size=4)
    theta = NetParams(gen.standard_normal((d1, d0)), gen.standard_normal((d2, d1)))
    x = gen.standard_normal((d0, n))
    x /= np.linalg.norm(x, axis=0, keepdims=True)
    y = gen.standard_normal((d2, n))
    y /= max(np.linalg.norm(y), 1.0) * (1 + 1e-12)
    return theta, x, y


class TestNetParams:
    def test_inner_dimension_check(self):
        with pytest.raises(DimensionError):
            NetParams(np.zeros((3, 2)), np.zeros((1, 4)))

    def test_arithmetic_and_norm(self):
        a = NetParams(np.ones((2, 2)), np.ones((1, 2)))
        b = 0.5 * a
        assert (a - b).norm() == pytest.approx(b.norm())
        assert a.dot(a) == pytest.approx(6.0)


class TestDataset:
    def test_unit_columns_enforced(self):
        with pytest.raises(ValueError):
            Dataset(2 * np.eye(3), np.zeros((1, 3)))

    def test_label_norm_enforced(self):
        with pytest.raises(ValueError):
            Dataset(np.eye(3), np.full((1, 3), 2.0))

    def test_column_count_must_match(self):
        with pytest.raises(DimensionError):
            Dataset(np.eye(3), np.zeros((1, 2)))


class TestForwardAndLoss:
    def test_zero_weights_propagate(self):
        theta = NetParams(np.zeros((3, 2)), np.ones((2, 3)))
        x = np.eye(2)
        for phi in ACTIVATIONS:
            assert np.allclose(forward(theta, x, phi), 0.0)

    def test_scalar_product(self):
        z = forward(scalar_net(2.0, 3.0), np.array([[1.0]]), IDENT)
        assert z[0, 0] == pytest.approx(6.0)

    def test_square_rows_of_ones(self):
        theta = NetParams(np.eye(2), np.ones((1, 2)))
        z = forward(theta, np.eye(2), get_activation("square"))
        assert np.allclose(z, np.ones((1, 2)))

    def test_loss_zero_at_interpolation(self):
        theta = scalar_net(1.0, 1.0)
        data = Dataset(np.array([[1.0]]), np.array([[1.0]]))
        assert loss(theta, data, IDENT) == pytest.approx(0.0)

    def test_scalar_loss(self):
        data = Dataset(np.array([[1.0]]), np.array([[0.0]]))
        assert loss(scalar_net(1.0, 1.0), data, IDENT) == pytest.approx(1.0)

    def test_zero_output_layer_gives_label_norm(self):
        gen = np.random.default_rng(2)
        theta = NetParams(gen.standard_normal((4, 3)), np.zeros((2, 4)))
        x = np.eye(3)
        y = gen.standard_normal((2, 3))
        y /= 2 * np.linalg.norm(y)
        data = Dataset(x, y)
        assert loss(theta, data, get_activation("tanh")) == pytest.approx(
            float(np.sum(y * y))
        )


class TestJacobian:
    def test_zero_tangent(self):
        gen = np.random.default_rng(4)
        theta, x, _ = random_instance(gen)
        delta = NetParams(np.zeros_like(theta.W), np.zeros_like(theta.V))
        assert np.allclose(jacobian_apply(theta, delta, x, IDENT), 0.0)

    def test_scalar_expansion(self):
        theta = scalar_net(2.0, 3.0)
        delta = scalar_net(0.1, 0.2)
        out = jacobian_apply(theta, delta, np.array([[1.0]]), IDENT)
        # 3 * dw + 2 * dv
        assert out[0, 0] == pytest.approx(3 * 0.1 + 2 * 0.2)

    def test_directional_derivative_against_finite_difference(self):
        gen = np.random.default_rng(8)
        eps = 1e-6
        for _ in range(20):
            theta, x, _ = random_instance(gen, max_dim=5)
            phi = ACTIVATIONS[int(gen.integers(len(ACTIVATIONS)))]
            delta = NetParams(
                gen.standard_normal(theta.W.shape), gen.standard_normal(theta.V.shape)
            )
            bumped = theta + eps * delta
            fd = (forward(bumped, x, phi) - forward(theta, x, phi)) / eps
            jac = jacobian_apply(theta, delta, x, phi)
            scale = max(1.0, float(np.linalg.norm(jac)))
            assert np.linalg.norm(fd - jac) / scale <= 1e-5


class TestAdjoint:
    def test_scalar_values(self):
        g = jacobian_adjoint(scalar_net(2.0, 3.0), np.array([[1.0]]), np.array([[1.0]]), IDENT)
        assert g.W[0, 0] == pytest.approx(3.0)
        assert g.V[0, 0] == pytest.approx(2.0)

    def test_zero_cotangent(self):
        gen = np.random.default_rng(12)
        theta, x, _ = random_instance(gen)
        cot = np.zeros((theta.V.shape[0], x.shape[1]))
        g = jacobian_adjoint(theta, cot, x, get_activation("tanh"))
        assert g.norm() == 0.0

    def test_duality_random_instances(self):
        gen = np.random.default_rng(13)
        for _ in range(100):
            theta, x, _ = random_instance(gen)
            phi = ACTIVATIONS[int(gen.integers(len(ACTIVATIONS)))]
            d2, n = theta.V.shape[0], x.shape[1]
            cot = gen.standard_normal((d2, n))
            tan = NetParams(
                gen.standard_normal(theta.W.shape), gen.standard_normal(theta.V.shape)
            )
            lhs = float(np.vdot(cot, jacobian_apply(theta, tan, x, phi)))
            rhs = jacobian_adjoint(theta, cot, x, phi).dot(tan)
            scale = max(1.0, abs(lhs), abs(rhs))
            assert abs(lhs - rhs) <= 1e-10 * scale


class TestGradient:
    def test_zero_at_interpolation(self):
        data = Dataset(np.array([[1.0]]), np.array([[1.0]]))
        g = gradient(scalar_net(1.0, 1.0), data, IDENT)
        assert g.norm() == pytest.approx(0.0)

    def test_scalar_hand_values(self):
        # h = (w v)^2 at w = v = 1: dh/dw = dh/dv = 2
        data = Dataset(np.array([[1.0]]), np.array([[0.0]]))
        g = gradient(scalar_net(1.0, 1.0), data, IDENT)
        assert g.W[0, 0] == pytest.approx(2.0)
        assert g.V[0, 0] == pytest.approx(2.0)

    def test_matches_finite_differences(self):
        gen = np.random.default_rng(17)
        h = 1e-5
        for _ in range(50):
            theta, x, y = random_instance(gen, max_dim=5)
            phi = ACTIVATIONS[int(gen.integers(len(ACTIVATIONS)))]
            data = Dataset(x, y)
            g = gradient(theta, data, phi)
            flat = np.concatenate([g.W.ravel(), g.V.ravel()])
            fd = np.empty_like(flat)
            k = 0
            for block in ("W", "V"):
                arr = getattr(theta, block)
                for idx in np.ndindex(arr.shape):
                    up = NetParams(theta.W.copy(), theta.V.copy())
                    getattr(up, block)[idx] += h
                    dn = NetParams(theta.W.copy(), theta.V.copy())
                    getattr(dn, block)[idx] -= h
                    fd[k] = (loss(up, data, phi) - loss(dn, data, phi)) / (2 * h)
                    k += 1
            scale = max(1.0, float(np.linalg.norm(flat)))
            assert np.linalg.norm(fd - flat) / scale <= 1e-5


class TestJacobianMatrix:
    def test_matches_operator_application(self):
        gen = np.random.default_rng(23)
        theta, x, _ = random_instance(gen, max_dim=4)
        phi = get_activation("tanh")
        jac = jacobian_matrix(theta, x, phi)
        for _ in range(5):
            tan = NetParams(
                gen.standard_normal(theta.W.shape), gen.standard_normal(theta.V.shape)
            )
            flat = np.concatenate([tan.W.ravel(), tan.V.ravel()])
            assert np.allclose(
                jac @ flat, jacobian_apply(theta, tan, x, phi).ravel(), atol=1e-12
            )

    def test_extremes_match_dense_svd(self):
        gen = np.random.default_rng(29)
        theta, x, _ = random_instance(gen, max_dim=5)
        phi = get_activation("gelu")
        dense = np.linalg.svd(jacobian_matrix(theta, x, phi), compute_uv=False)
        ext = jacobian_extremes(theta, x, phi)
        assert ext.sigma_max == pytest.approx(dense[0], rel=1e-10)

    def test_operator_path_agrees_with_dense(self):
        gen = np.random.default_rng(31)
        theta = NetParams(gen.standard_normal((6, 4)), gen.standard_normal((2, 6)))
        x = gen.standard_normal((4, 5))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        phi = get_activation("tanh")
        dense = jacobian_extremes(theta, x, phi)
        iterative = jacobian_extremes(theta, x, phi, dense_limit=1)
        assert iterative.sigma_max == pytest.approx(dense.sigma_max, rel=1e-6)
        assert iterative.sigma_min == pytest.approx(dense.sigma_min, rel=1e-4, abs=1e-8)


class TestLocalSpectralStability:
    def test_jacobian_extremes_stay_in_band_inside_radius(self):
        # smooth + near-isometric at theta0 implies the adjoint's singular
        # values stay within [mu/2, 3 nu/2] throughout the radius-rho ball
        gen = np.random.default_rng(37)
        phi = get_activation("tanh")
        d0, d1, d2, n = 3, 12, 2, 4
        theta0 = NetParams(
            gen.standard_normal((d1, d0)), 0.3 * gen.standard_normal((d2, d1))
        )
        x = gen.standard_normal((d0, n))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        chi_max = float(np.linalg.svd(theta0.V, compute_uv=False)[0]) + 1.0
        c = constants_at_init(theta0, x, phi, chi_max)
        assert c.rho_phi < 1.0
        for _ in range(50):
            d = NetParams(
                gen.standard_normal((d1, d0)), gen.standard_normal((d2, d1))
            )
            d = (c.rho_phi * float(gen.uniform(0, 1)) / d.norm()) * d
            ext = jacobian_extremes(theta0 + d, x, phi)
            assert ext.sigma_min >= c.mu_phi / 2 - 1e-9
            assert ext.sigma_max <= 1.5 * c.nu_phi + 1e-9

    def test_forward_lipschitz_inside_radius(self):
        gen = np.random.default_rng(41)
        phi = get_activation("gelu")
        d0, d1, d2, n = 3, 10, 2, 4
        theta0 = NetParams(
            gen.standard_normal((d1, d0)), 0.3 * gen.standard_normal((d2, d1))
        )
        x = gen.standard_normal((d0, n))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        chi_max = float(np.linalg.svd(theta0.V, compute_uv=False)[0]) + 1.0
        c = constants_at_init(theta0, x, phi, chi_max)
        for _ in range(30):
            du = NetParams(gen.standard_normal((d1, d0)), gen.standard_normal((d2, d1)))
            dv = NetParams(gen.standard_normal((d1, d0)), gen.standard_normal((d2, d1)))
            u = theta0 + (c.rho_phi * float(gen.uniform(0, 1)) / du.norm()) * du
            v = theta0 + (c.rho_phi * float(gen.uniform(0, 1)) / dv.norm()) * dv
            lhs = float(np.linalg.norm(forward(u, x, phi) - forward(v, x, phi)))
            assert lhs <= 1.5 * c.nu_phi * (u - v).norm() + 1e-9


def test_forward_zero_input_zero_output():
    gen = np.random.default_rng(43)
    theta = NetParams(gen.standard_normal((4, 3)), gen.standard_normal((2, 4)))
    x = np.zeros((3, 2))
    for name in ("identity", "tanh", "gelu", "softplus-shifted", "sigmoid-shifted"):
        phi = get_activation(name)
        assert np.allclose(forward(theta, x, phi), 0.0, atol=1e-14)
