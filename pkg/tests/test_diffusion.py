import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from promptwave import diffusion as df


class TestCoeffs:
    def test_endpoints_and_midpoint(self):
        assert df.coeffs(0.0) == (1.0, 0.0)
        a1, b1 = df.coeffs(1.0)
        assert b1 == 1.0 and abs(a1) < 1e-16
        a, b = df.coeffs(0.5)
        assert a == pytest.approx(np.sqrt(2) / 2, abs=1e-7)
        assert a == pytest.approx(b, abs=1e-12)

    def test_unit_circle_1000_sigmas(self):
        s = np.linspace(0.0, 1.0, 1000)
        a, b = df.coeffs(s)
        assert np.abs(a * a + b * b - 1.0).max() < 1e-12
        assert np.all((a >= 0) & (a <= 1) & (b >= 0) & (b <= 1))

    def test_rejects_out_of_range(self):
        for bad in (-0.1, 1.1):
            with pytest.raises(ValueError):
                df.coeffs(bad)


class TestAddNoiseAndTarget:
    def test_sigma_endpoints(self, rng):
        x0 = rng.standard_normal((2, 8))
        eps = rng.standard_normal((2, 8))
        assert np.array_equal(df.add_noise(x0, eps, 0.0), x0)
        assert np.array_equal(df.add_noise(x0, eps, 1.0), eps)

    def test_half_sigma_value(self):
        out = df.add_noise(np.ones((1, 1)), np.zeros((1, 1)), 0.5)
        assert out[0, 0] == pytest.approx(0.7071068, abs=1e-6)

    def test_v_trivials(self, rng):
        x0 = rng.standard_normal((3, 4))
        eps = rng.standard_normal((3, 4))
        a, b = df.coeffs(0.3)
        assert np.allclose(df.v_target(np.zeros_like(eps), eps, 0.3), a * eps)
        assert np.allclose(df.v_target(x0, np.zeros_like(x0), 1.0), -x0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape"):
            df.add_noise(np.zeros((2, 3)), np.zeros((2, 4)), 0.5)
        with pytest.raises(ValueError, match="shape"):
            df.v_target(np.zeros((2, 3)), np.zeros((2, 4)), 0.5)

    def test_v_is_phi_derivative_of_add_noise(self, rng):
        # oracle: central finite difference of add_noise over sigma, rescaled
        # by 2/pi (the mixing angle is (pi/2)*sigma)
        x0 = rng.standard_normal((4, 16))
        eps = rng.standard_normal((4, 16))
        h = 1e-6
        for sigma in (0.2, 0.5, 0.8):
            fd = (df.add_noise(x0, eps, sigma + h) - df.add_noise(x0, eps, sigma - h)) / (2 * h)
            v = df.v_target(x0, eps, sigma)
            assert np.abs(v - fd * (2 / np.pi)).max() < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(sigma=hst.floats(min_value=0.0, max_value=1.0), seed=hst.integers(0, 2 ** 31))
    def test_recovery_identity(self, sigma, seed):
        # alpha*(noisy) - beta*(v) == x0 for any sigma
        g = np.random.default_rng(seed)
        x0 = g.standard_normal(6).astype(np.float32)
        eps = g.standard_normal(6).astype(np.float32)
        a, b = df.coeffs(sigma)
        rec = a * df.add_noise(x0, eps, sigma) - b * df.v_target(x0, eps, sigma)
        assert np.abs(rec - x0).max() < 1e-6


class TestVLoss:
    def test_oracle_model_zero_loss(self, rng):
        x0 = rng.standard_normal((2, 3, 8)).astype(np.float32)
        eps = rng.standard_normal((2, 3, 8)).astype(np.float32)
        loss = df.v_loss(lambda x, s, c: df.v_target(x0, eps, s), x0, eps, 0.4)
        assert loss == 0.0

    def test_zero_model_mean_square(self, rng):
        x0 = rng.standard_normal((2, 3, 8))
        eps = rng.standard_normal((2, 3, 8))
        loss = df.v_loss(lambda x, s, c: np.zeros_like(x), x0, eps, 0.7)
        assert loss == pytest.approx((df.v_target(x0, eps, 0.7) ** 2).mean(), rel=1e-12)

    def test_against_scalar_loop_oracle(self, rng):
        x0 = rng.standard_normal((2, 2, 3))
        eps = rng.standard_normal((2, 2, 3))
        sigma = rng.random(2)
        model = lambda x, s, c: 0.5 * x - 0.1
        loss = df.v_loss(model, x0, eps, sigma)

        total, count = 0.0, 0
        for b in range(2):
            a, bb = df.coeffs(sigma[b])
            for c in range(2):
                for l in range(3):
                    noisy = a * x0[b, c, l] + bb * eps[b, c, l]
                    target = a * eps[b, c, l] - bb * x0[b, c, l]
                    pred = 0.5 * noisy - 0.1
                    total += (pred - target) ** 2
                    count += 1
        assert loss == pytest.approx(total / count, rel=1e-6)

    def test_non_finite_raises(self, rng):
        x0 = rng.standard_normal((1, 1, 4))
        with pytest.raises(df.NumericError):
            df.v_loss(lambda x, s, c: np.full_like(x, np.nan), x0, x0, 0.5)


class TestSchedule:
    def test_linear_schedule(self):
        s = df.SamplerSchedule.linear(10)
        assert s.steps == 10
        assert s.sigmas[0] == 1.0 and s.sigmas[-1] == 0.0
        assert np.all(np.diff(s.sigmas) < 0)

    def test_invalid_schedules(self):
        with pytest.raises(ValueError):
            df.SamplerSchedule(np.array([0.9, 0.5, 0.0]))
        with pytest.raises(ValueError):
            df.SamplerSchedule(np.array([1.0, 0.5, 0.1]))
        with pytest.raises(ValueError):
            df.SamplerSchedule(np.array([1.0, 0.5, 0.5, 0.0]))
        with pytest.raises(ValueError):
            df.SamplerSchedule.linear(0)


def _fixed_pair_oracle(x0, eps):
    """Perfect-v model for one memorized (x0, eps) trajectory."""

    def model(x, sigma, cond):
        a, b = df.coeffs(sigma)
        return a * eps - b * x0

    return model


class TestDdimStep:
    def test_one_step_to_zero_recovers_x0(self, rng):
        x0 = rng.standard_normal((2, 3, 8)).astype(np.float32)
        eps = rng.standard_normal((2, 3, 8)).astype(np.float32)
        x1 = df.add_noise(x0, eps, 1.0)
        out = df.ddim_step(_fixed_pair_oracle(x0, eps), x1, 1.0, 0.0)
        assert np.abs(out - x0).max() < 1e-6

    def test_equal_sigmas_identity_any_model(self, rng):
        x = rng.standard_normal((2, 4))

        def explode(*a):
            raise AssertionError("model must not be called for an identity step")

        out = df.ddim_step(explode, x, 0.6, 0.6)
        assert out is x

    def test_rejects_bad_ordering(self, rng):
        x = rng.standard_normal((1, 4))
        model = lambda x, s, c: np.zeros_like(x)
        with pytest.raises(ValueError):
            df.ddim_step(model, x, 0.3, 0.6)
        with pytest.raises(ValueError):
            df.ddim_step(model, x, 1.2, 0.5)

    def test_against_independent_formula_oracle(self, rng):
        # second, independently written implementation of the update
        x_t = rng.standard_normal(4)
        v = rng.standard_normal(4)
        sigma_t, sigma_prev = 0.73, 0.21
        model = lambda x, s, c: v
        got = df.ddim_step(model, x_t, sigma_t, sigma_prev)

        phi_t = np.pi / 2 * sigma_t
        phi_p = np.pi / 2 * sigma_prev
        x0_hat = np.cos(phi_t) * x_t - np.sin(phi_t) * v
        eps_hat = np.sin(phi_t) * x_t + np.cos(phi_t) * v
        want = np.cos(phi_p) * x0_hat + np.sin(phi_p) * eps_hat
        assert np.array_equal(got, want)  # bit-identical in 64-bit

    def test_intermediate_step_lands_on_trajectory(self, rng):
        x0 = rng.standard_normal((1, 8))
        eps = rng.standard_normal((1, 8))
        model = _fixed_pair_oracle(x0, eps)
        for sp in (0.75, 0.4, 0.1):
            out = df.ddim_step(model, df.add_noise(x0, eps, 0.9), 0.9, sp)
            assert np.abs(out - df.add_noise(x0, eps, sp)).max() < 1e-12


class TestSample:
    def test_single_step_recovery(self, rng):
        x0 = rng.standard_normal((1, 2, 8))
        eps = rng.standard_normal((1, 2, 8))
        noise = df.add_noise(x0, eps, 1.0)
        out = df.sample(_fixed_pair_oracle(x0, eps), noise, df.SamplerSchedule.linear(1))
        assert np.abs(out - x0).max() < 1e-12

    def test_deterministic(self, rng):
        x = rng.standard_normal((1, 2, 8))
        model = lambda xt, s, c: 0.3 * xt
        a = df.sample(model, x, df.SamplerSchedule.linear(7))
        b = df.sample(model, x, df.SamplerSchedule.linear(7))
        assert np.array_equal(a, b)

    def test_oracle_model_schedule_independent(self, rng):
        x0 = rng.standard_normal((1, 2, 16))
        eps = rng.standard_normal((1, 2, 16))
        model = _fixed_pair_oracle(x0, eps)
        noise = df.add_noise(x0, eps, 1.0)
        out10 = df.sample(model, noise, df.SamplerSchedule.linear(10))
        out100 = df.sample(model, noise, df.SamplerSchedule.linear(100))
        assert np.abs(out10 - out100).max() < 1e-12
        assert np.abs(out10 - x0).max() < 1e-12
