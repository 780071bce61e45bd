import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecap.errors import (
    ConfigError,
    DegenerateInnovation,
    InvalidKernel,
    NonFinite,
    WindowNotFull,
)
from facecap.filters import (
    HybridConfig,
    HybridFilter,
    HybridFilterState,
    KalmanConfig,
    KalmanState,
    SGKernel,
    filter_series,
    hybrid_step,
    kalman_gain,
    kalman_predict,
    kalman_update,
    sg_design_matrix,
    sg_fit,
    sg_projection_matrix,
    sg_smooth,
)


def lstsq_oracle(window, radius, order, position):
    """Fit with numpy's SVD least squares and evaluate at ``position``."""
    t = np.arange(-radius, radius + 1, dtype=float)
    coef = np.polynomial.polynomial.polyfit(t, window, order)
    return np.polynomial.polynomial.polyval(position, coef)


kernel_args = st.integers(1, 7).flatmap(lambda r: st.tuples(st.just(r), st.integers(0, r - 1)))


class TestDesignMatrix:
    def test_radius1_order1(self):
        H = sg_design_matrix(1, 1, strict=False)
        np.testing.assert_array_equal(H, [[1, -1], [1, 0], [1, 1]])
        np.testing.assert_array_equal(H.T @ H, [[3, 0], [0, 2]])

    def test_radius2_order2(self):
        H = sg_design_matrix(2, 2, strict=False)
        t = np.arange(-2, 3)
        np.testing.assert_array_equal(H, np.stack([t**0, t, t**2], axis=1))

    def test_full_rank(self):
        for r in range(1, 8):
            for k in range(r):
                assert np.linalg.matrix_rank(sg_design_matrix(r, k)) == k + 1

    @pytest.mark.parametrize("radius, order", [(1, 1), (3, 3), (2, 5), (0, 0), (3, -1)])
    def test_rule_enforced(self, radius, order):
        with pytest.raises(InvalidKernel):
            SGKernel(radius, order)


class TestSGFit:
    def test_closed_form(self):
        k = SGKernel(1, 1, strict=False)
        np.testing.assert_allclose(sg_fit([1, 2, 4], k), [7 / 3, 3 / 2], atol=1e-15)

    @pytest.mark.parametrize("radius, order", [(2, 0), (3, 2), (7, 6)])
    def test_constant(self, radius, order):
        k = SGKernel(radius, order)
        a = sg_fit(np.full(k.width, 3.5), k)
        assert a[0] == pytest.approx(3.5, abs=1e-12)
        np.testing.assert_allclose(a[1:], 0, atol=1e-12)

    @pytest.mark.parametrize("radius, order", [(2, 1), (4, 3), (6, 5)])
    def test_linear_recovery(self, radius, order):
        k = SGKernel(radius, order)
        t = np.arange(-radius, radius + 1)
        a = sg_fit(2 + 3 * t, k)
        np.testing.assert_allclose(a[:2], [2, 3], atol=1e-12)
        np.testing.assert_allclose(a[2:], 0, atol=1e-12)

    def test_residual_orthogonal(self):
        rng = np.random.default_rng(0)
        for r in range(1, 8):
            for order in range(r):
                k = SGKernel(r, order)
                x = rng.normal(size=k.width)
                H = sg_design_matrix(r, order)
                res = H @ sg_fit(x, k) - x
                np.testing.assert_allclose(H.T @ res, 0, atol=1e-9)

    def test_window_not_full(self):
        with pytest.raises(WindowNotFull):
            sg_fit([1, 2], SGKernel(2, 1))


class TestSGSmooth:
    def test_center(self):
        assert sg_smooth([1, 2, 4], SGKernel(1, 1, "center", strict=False)) == pytest.approx(7 / 3)

    def test_endpoint(self):
        assert sg_smooth([1, 2, 4], SGKernel(1, 1, "endpoint", strict=False)) == pytest.approx(23 / 6)

    @pytest.mark.parametrize("mode", ["center", "endpoint"])
    def test_constant(self, mode):
        assert sg_smooth([0.7] * 9, SGKernel(4, 2, mode)) == pytest.approx(0.7, abs=1e-14)

    def test_known_coefficients(self):
        np.testing.assert_allclose(SGKernel(2, 1, "center").row, [0.2] * 5, atol=1e-15)
        # classic 5-point quadratic smoothing weights
        np.testing.assert_allclose(
            SGKernel(2, 2, "center", strict=False).row,
            np.array([-3, 12, 17, 12, -3]) / 35,
            atol=1e-15,
        )

    @settings(max_examples=100)
    @given(kernel_args, st.sampled_from(["center", "endpoint"]), st.integers(0, 2**32 - 1))
    def test_matches_lstsq_oracle(self, args, mode, seed):
        radius, order = args
        k = SGKernel(radius, order, mode)
        x = np.random.default_rng(seed).normal(size=k.width)
        assert sg_smooth(x, k) == pytest.approx(
            lstsq_oracle(x, radius, order, k.eval_position), abs=1e-9
        )

    @settings(max_examples=100)
    @given(kernel_args, st.integers(0, 2**32 - 1))
    def test_polynomial_exactness(self, args, seed):
        radius, order = args
        rng = np.random.default_rng(seed)
        coef = rng.uniform(-1, 1, order + 1)
        t = np.arange(-radius, radius + 1, dtype=float)
        x = np.polynomial.polynomial.polyval(t, coef)
        for mode, pos in (("center", 0), ("endpoint", radius)):
            want = np.polynomial.polynomial.polyval(pos, coef)
            assert abs(sg_smooth(x, SGKernel(radius, order, mode)) - want) < 1e-9

    @settings(max_examples=100)
    @given(kernel_args, st.integers(0, 2**32 - 1))
    def test_projection_idempotent(self, args, seed):
        P = sg_projection_matrix(*args)
        x = np.random.default_rng(seed).normal(size=P.shape[0])
        np.testing.assert_allclose(P @ (P @ x), P @ x, atol=1e-9)

    @settings(max_examples=100)
    @given(kernel_args, st.sampled_from(["center", "endpoint"]))
    def test_weights_sum_to_one(self, args, mode):
        assert abs(SGKernel(*args, mode).row.sum() - 1.0) <= 1e-12


class TestKalman:
    def test_predict_identity(self):
        cfg = KalmanConfig(q=0.0, r=1.0)
        s = kalman_predict(KalmanState([0.3], [[0.5]]), cfg)
        assert s.x[0] == 0.3 and s.P[0, 0] == 0.5

    def test_predict_adds_q(self):
        s = kalman_predict(KalmanState([0.0], [[1.0]]), KalmanConfig(q=0.01, r=1.0))
        assert s.P[0, 0] == pytest.approx(1.01, abs=1e-15)

    def test_predict_constant_velocity(self):
        cfg = KalmanConfig(q=0.0, r=1.0, model="cv")
        s = kalman_predict(KalmanState([0.0, 1.0], np.eye(2)), cfg)
        np.testing.assert_array_equal(s.x, [1.0, 1.0])
        np.testing.assert_array_equal(s.P, [[2.0, 1.0], [1.0, 1.0]])

    def test_perfect_measurement(self):
        cfg = KalmanConfig(q=0.01, r=0.0)
        for z in (0.1, 0.3, -7.77, 1e-9):
            s = kalman_update(KalmanState([0.123456], [[0.5]]), z, cfg)
            assert s.x[0] == z

    def test_ignored_measurement(self):
        cfg = KalmanConfig(q=0.0, r=1e12)
        s = kalman_update(KalmanState([0.25], [[1.0]]), 10.0, cfg)
        assert abs(s.x[0] - 0.25) < 1e-9

    def test_hand_recursion(self):
        cfg = KalmanConfig(q=0.01, r=1.0)
        prior = kalman_predict(KalmanState([0.0], [[1.0]]), cfg)
        post = kalman_update(prior, 1.0, cfg)
        assert kalman_gain(prior, cfg)[0] == pytest.approx(1.01 / 2.01, abs=1e-15)
        assert post.x[0] == pytest.approx(0.5024875621890548, abs=1e-15)
        assert post.P[0, 0] == pytest.approx(1.01 * 1.0 / 2.01, abs=1e-15)

    def test_degenerate(self):
        cfg = KalmanConfig(q=0.0, r=0.0, allow_degenerate=True)
        with pytest.raises(DegenerateInnovation):
            kalman_update(KalmanState([0.0], [[0.0]]), 1.0, cfg)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            KalmanConfig(q=0.0, r=0.0)
        with pytest.raises(ConfigError):
            KalmanConfig(q=-1.0)
        with pytest.raises(ConfigError):
            KalmanConfig(model="ekf")

    def test_state_validation(self):
        with pytest.raises(ValueError):
            KalmanState([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            KalmanState([0.0], [[-1.0]])

    @settings(max_examples=200)
    @given(
        st.floats(0, 10), st.floats(1e-6, 10), st.floats(0, 10), st.floats(-5, 5), st.floats(-5, 5)
    )
    def test_scalar_gain_and_variance(self, P, r, q, x, z):
        cfg = KalmanConfig(q=q, r=r)
        prior = kalman_predict(KalmanState([x], [[P]]), cfg)
        k = kalman_gain(prior, cfg)[0]
        assert 0.0 <= k <= 1.0
        post = kalman_update(prior, z, cfg)
        assert post.P[0, 0] <= prior.P[0, 0]

    def test_cv_posterior_shrinks(self):
        cfg = KalmanConfig(q=1e-3, r=1e-2, model="cv")
        s = KalmanState([0.0, 0.0], np.eye(2))
        for z in np.linspace(0, 1, 30):
            prior = kalman_predict(s, cfg)
            s = kalman_update(prior, z, cfg)
            assert np.linalg.eigvalsh(prior.P - s.P).min() >= -1e-12


def matrix_reference(z, cfg):
    """Generic matrix Kalman fold used as an oracle for the channel bank."""
    out = []
    s = None
    for v in z:
        if s is None:
            s = KalmanState.initial(v, cfg)
        s = kalman_update(kalman_predict(s, cfg), v, cfg)
        out.append(s.x[0])
    return np.array(out)


class TestHybrid:
    @pytest.mark.parametrize("model", ["rw", "cv"])
    def test_kalman_bank_matches_matrix_form(self, model):
        kc = KalmanConfig(q=1e-3, r=1e-2, model=model)
        z = np.random.default_rng(1).normal(size=200).cumsum() * 0.1
        got = filter_series(z, HybridConfig(kalman=kc, mode="kalman"))
        np.testing.assert_allclose(got, matrix_reference(z, kc), rtol=0, atol=1e-12)

    def test_constant_fixed_point(self):
        out = filter_series(np.full(100, 0.42))
        assert abs(out[-1] - 0.42) < 1e-9

    def test_warmup_is_kalman(self):
        cfg = HybridConfig()
        z = np.random.default_rng(2).normal(size=40)
        kal = filter_series(z, HybridConfig(mode="kalman"))
        out = filter_series(z, cfg)
        w = cfg.kernel.width
        np.testing.assert_array_equal(out[: w - 1], kal[: w - 1])
        assert not np.array_equal(out[w - 1:], kal[w - 1:])

    def test_cascade_is_sg_over_kalman(self):
        cfg = HybridConfig()
        z = np.random.default_rng(3).normal(size=60)
        kal = filter_series(z, HybridConfig(mode="kalman"))
        out = filter_series(z, cfg)
        k = cfg.kernel
        for t in range(k.width - 1, z.size):
            assert out[t] == pytest.approx(sg_smooth(kal[t - k.width + 1:t + 1], k), abs=1e-12)

    def test_sg_mode_over_raw(self):
        cfg = HybridConfig(mode="sg")
        z = np.random.default_rng(4).normal(size=40)
        out = filter_series(z, cfg)
        k = cfg.kernel
        np.testing.assert_array_equal(out[: k.width - 1], z[: k.width - 1])
        assert out[-1] == pytest.approx(sg_smooth(z[-k.width:], k), abs=1e-12)

    def test_noisy_sine_reduces_jitter(self):
        rng = np.random.default_rng(5)
        t = np.arange(600)
        z = 0.5 + 0.5 * np.sin(2 * np.pi * t / 120) + rng.normal(0, 0.05, t.size)
        out = filter_series(z)
        assert np.sum(np.diff(out, 2) ** 2) < np.sum(np.diff(z, 2) ** 2)

    def test_series_shapes(self):
        assert filter_series([]).shape == (0,)
        one = filter_series([0.7])
        assert one.shape == (1,) and one[0] == 0.7

    def test_series_equals_stream_fold(self):
        cfg = HybridConfig()
        z = np.random.default_rng(6).normal(size=100)
        f = HybridFilter(cfg)
        streamed = np.array([f(v)[0] for v in z])
        np.testing.assert_array_equal(filter_series(z, cfg), streamed)

    def test_nonfinite_rejected(self):
        state = HybridFilterState(HybridConfig())
        with pytest.raises(NonFinite):
            hybrid_step(state, np.nan, HybridConfig())

    def test_state_copy_independent(self):
        cfg = HybridConfig()
        s = HybridFilterState(cfg, 2)
        hybrid_step(s, [1.0, 2.0], cfg)
        c = s.copy()
        hybrid_step(s, [5.0, 5.0], cfg)
        assert c.count == 1 and not np.array_equal(c.x, s.x)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            HybridConfig(mode="blend")
        with pytest.raises(ConfigError):
            HybridConfig(sg_radius=2, sg_order=2)
