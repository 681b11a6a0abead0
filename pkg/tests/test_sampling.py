import numpy as np
import pytest

from articulated_flow.nets import FlowModel
from articulated_flow.sampling import (IntegratorConfig, euler_integrate,
                                       heun_integrate, integrate, sample,
                                       simulate, slerp)
from articulated_flow.tensor import NonFiniteError, Tensor


def richardson_order(integrator, field, x0, exact, steps=(16, 32, 64, 128, 256)):
    errs = [np.abs(integrator(field, x0, s) - exact).max() for s in steps]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    return np.mean(orders)


class TestHeun:
    def test_constant_field_exact(self):
        c = np.array([0.5, -1.5])
        for s in (1, 3, 10):
            out = heun_integrate(lambda x, t: c, np.zeros(2), s)
            np.testing.assert_allclose(out, c, atol=1e-15)

    def test_linear_in_time_field_exact(self):
        # dx/dt = a*t has solution x0 + a/2 at t=1; RK2 is exact for
        # fields affine in t
        a = np.array([2.0, -4.0])
        for s in (1, 7, 50):
            out = heun_integrate(lambda x, t: a * t, np.ones(2), s)
            np.testing.assert_allclose(out, 1.0 + a / 2.0, atol=1e-12)

    def test_second_order_convergence(self):
        x0 = np.array([1.0, 2.0])
        order = richardson_order(heun_integrate, lambda x, t: x, x0,
                                 np.e * x0)
        assert order >= 1.9

    def test_non_finite_state_aborts_with_step(self):
        with pytest.raises(NonFiniteError, match="step"):
            heun_integrate(lambda x, t: x * 1e200, np.ones(2), 4)


class TestEuler:
    def test_constant_field_exact(self):
        c = np.array([0.25])
        out = euler_integrate(lambda x, t: c, np.zeros(1), 13)
        np.testing.assert_allclose(out, c, atol=1e-15)

    def test_linear_in_time_left_riemann(self):
        a = 3.0
        for s in (4, 16, 64):
            out = euler_integrate(lambda x, t: np.array([a * t]),
                                  np.zeros(1), s)
            expected = a * (s - 1) / (2 * s)
            np.testing.assert_allclose(out, [expected], atol=1e-12)

    def test_first_order_convergence(self):
        x0 = np.array([1.0])
        order = richardson_order(euler_integrate, lambda x, t: x, x0,
                                 np.e * x0)
        assert 0.9 <= order <= 1.1


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="rk4")
    with pytest.raises(ValueError):
        IntegratorConfig(latent_steps=0)
    with pytest.raises(ValueError):
        integrate("rk4", lambda x, t: x, np.ones(1), 4)


@pytest.fixture(scope="module")
def model():
    m = FlowModel(point_dim=3, n_joints=1, code_dim=16, hidden=24,
                  encoder_hidden=24, seed=0)
    # give the velocity nets nonzero output so sampling actually moves points
    rng = np.random.default_rng(1)
    m.point_net.lin_out.weight.data[:] = rng.standard_normal((24, 3)) * 0.1
    m.latent_net.lin_out.weight.data[:] = rng.standard_normal((24, 16)) * 0.1
    return m


class TestSample:
    def test_deterministic_given_seed(self, model):
        cfg = IntegratorConfig(latent_steps=5, point_steps=5)
        a = np.array([0.3])
        x1 = sample(model, a, 20, cfg, np.random.default_rng(9))
        x2 = sample(model, a, 20, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(x1, x2)

    def test_output_shape(self, model):
        cfg = IntegratorConfig(latent_steps=3, point_steps=3)
        out = sample(model, np.array([0.1]), 17, cfg, np.random.default_rng(0))
        assert out.shape == (17, 3)

    def test_single_euler_step_is_one_explicit_update(self, model):
        from articulated_flow import sampling as S

        cfg = IntegratorConfig(method="euler", latent_steps=1, point_steps=1)
        rng = np.random.default_rng(4)
        z_a = S.encode_action(model, np.array([0.2]))
        z_x = rng.standard_normal((1, 16))
        x0 = np.random.default_rng(5).standard_normal((1, 10, 3))
        field = S._point_field(model, Tensor(z_x), z_a)
        out = S.integrate("euler", field, x0, 1)
        np.testing.assert_array_equal(out, x0 + field(x0, 0.0))


class TestSimulate:
    def test_reference_permutation_invariant(self, model):
        cfg = IntegratorConfig(latent_steps=3, point_steps=3)
        rng = np.random.default_rng(6)
        ref = rng.standard_normal((30, 3))
        a = np.array([0.4])
        out1 = simulate(model, ref, a, 12, cfg, np.random.default_rng(7))
        out2 = simulate(model, ref[rng.permutation(30)], a, 12, cfg,
                        np.random.default_rng(7))
        np.testing.assert_array_equal(out1, out2)

    def test_wrong_reference_dim_errors(self, model):
        cfg = IntegratorConfig()
        with pytest.raises(ValueError):
            simulate(model, np.zeros((10, 6)), np.array([0.1]), 12, cfg,
                     np.random.default_rng(0))


class TestSlerp:
    def test_endpoints(self):
        rng = np.random.default_rng(0)
        z0 = rng.standard_normal(16)
        z1 = rng.standard_normal(16)
        np.testing.assert_array_equal(slerp(z0, z1, 0.0), z0)
        np.testing.assert_array_equal(slerp(z0, z1, 1.0), z1)

    def test_orthogonal_midpoint(self):
        z0 = np.array([1.0, 0.0])
        z1 = np.array([0.0, 1.0])
        mid = slerp(z0, z1, 0.5)
        np.testing.assert_allclose(mid, np.sqrt(2) / 2 * (z0 + z1), atol=1e-15)
        assert np.linalg.norm(mid) == pytest.approx(1.0, abs=1e-12)

    def test_unit_norm_preserved(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z0 = rng.standard_normal(8)
            z1 = rng.standard_normal(8)
            z0 /= np.linalg.norm(z0)
            z1 /= np.linalg.norm(z1)
            for alpha in np.linspace(0, 1, 7):
                assert np.linalg.norm(slerp(z0, z1, alpha)) == pytest.approx(
                    1.0, abs=1e-12)

    def test_degenerate_fallback_returns_z0(self):
        z = np.random.default_rng(2).standard_normal(6)
        for alpha in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(slerp(z, z, alpha), z, atol=1e-15)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            slerp(np.zeros(4), np.ones(4), 0.5)
