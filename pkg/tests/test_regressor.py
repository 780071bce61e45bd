import math

import numpy as np
import pytest

from facecap.distill import ARDConfig, DistillBatch, ard_loss, mse_loss
from facecap.errors import ConfigError, DimensionMismatch, Divergence
from facecap.regressor import (
    AdamState,
    RegressorModel,
    TrainingSchedule,
    adam_step,
    fit,
    lr_curve,
    make_dataset,
    run_experiment,
    schedule_at,
    train,
)


def dense_forward(model, X):
    """Row-by-row, neuron-by-neuron evaluation with plain Python floats."""
    out = []
    last = len(model.weights) - 1
    for x in X:
        h = list(x)
        for i, (W, b) in enumerate(zip(model.weights, model.biases)):
            nxt = []
            for j in range(W.shape[1]):
                a = b[j] + sum(h[k] * W[k, j] for k in range(W.shape[0]))
                nxt.append(math.tanh(a) if i < last else a)
            h = nxt
        out.append(h)
    return np.array(out)


def numeric_param_grad(model, loss_of_output, X, h=1e-6):
    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = loss_of_output(model.forward(X))
            p[idx] = old - h
            fm = loss_of_output(model.forward(X))
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


class TestForward:
    def test_zero_model(self):
        m = RegressorModel((3, 5, 2), 0)
        m.params = [np.zeros_like(p) for p in m.params]
        assert np.all(m.forward(np.ones((4, 3))) == 0)

    def test_identity_layer(self):
        m = RegressorModel((3, 3), 0)
        m.params = [np.eye(3), np.zeros(3)]
        X = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(m.forward(X), X)

    def test_dense_oracle(self):
        m = RegressorModel((4, 6, 5, 3), 1)
        X = np.random.default_rng(1).normal(size=(7, 4))
        np.testing.assert_allclose(m.forward(X), dense_forward(m, X), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            RegressorModel((4, 2), 0).forward(np.zeros((3, 5)))

    def test_linear_in_last_layer(self):
        m = RegressorModel((3, 4, 2), 2)
        X = np.random.default_rng(2).normal(size=(5, 3))
        W = m.weights[-1].copy()
        base = m.forward(X) - m.biases[-1]
        m.weights[-1] = 2 * W
        np.testing.assert_allclose(m.forward(X) - m.biases[-1], 2 * base, atol=1e-12)


class TestGrad:
    def test_zero_upstream(self):
        m = RegressorModel((3, 4, 2), 0)
        X = np.ones((5, 3))
        assert all(np.all(g == 0) for g in m.grad(X, np.zeros((5, 2))))

    def test_linear_closed_form(self):
        rng = np.random.default_rng(3)
        m = RegressorModel((4, 2), rng)
        m.biases[0][:] = 0
        X, Y = rng.normal(size=(10, 4)), rng.normal(size=(10, 2))
        _, up = mse_loss(m.forward(X), Y)
        gW, gb = m.grad(X, up)
        W = m.weights[0]
        np.testing.assert_allclose(gW, 2 * X.T @ (X @ W - Y) / 10, atol=1e-12)

    @pytest.mark.parametrize("sizes", [(3, 2), (3, 5, 2), (2, 4, 3, 2)])
    def test_finite_differences(self, sizes):
        rng = np.random.default_rng(4)
        m = RegressorModel(sizes, rng)
        for b in m.biases:
            b[:] = rng.normal(size=b.shape) * 0.1
        X, Y = rng.normal(size=(6, sizes[0])), rng.normal(size=(6, sizes[-1]))
        _, up = mse_loss(m.forward(X), Y)
        analytic = m.grad(X, up)
        numeric = numeric_param_grad(m, lambda out: mse_loss(out, Y)[0], X)
        for a, n in zip(analytic, numeric):
            np.testing.assert_allclose(a, n, rtol=1e-5, atol=1e-8)

    def test_ard_training_loss_gradient(self):
        rng = np.random.default_rng(5)
        m = RegressorModel((3, 6, 2), rng)
        X = rng.normal(size=(16, 3))
        t, y = rng.uniform(size=(16, 2)), rng.uniform(size=(16, 2))
        cfg = ARDConfig(mu=0.5, v_penalty=2.0, b_margin=0.02)

        def loss(out):
            return ard_loss(DistillBatch(out, t, y), cfg)[0]

        _, up = ard_loss(DistillBatch(m.forward(X), t, y), cfg)
        analytic = m.grad(X, up)
        numeric = numeric_param_grad(m, loss, X)
        for a, n in zip(analytic, numeric):
            np.testing.assert_allclose(a, n, rtol=1e-5, atol=1e-8)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        out = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), lr=0.1)
        np.testing.assert_array_equal(out[0], p[0])

    def test_first_step_unit_scale(self):
        p = [np.array([0.5])]
        out = adam_step(p, [np.array([1.0])], AdamState.zeros_like(p), lr=0.001)
        assert p[0][0] - out[0][0] == pytest.approx(0.001 / (1 + 1e-8), abs=1e-15)

    def test_zero_lr(self):
        p = [np.array([0.5, 3.0])]
        out = adam_step(p, [np.array([7.0, -9.0])], AdamState.zeros_like(p), lr=0.0)
        np.testing.assert_array_equal(out[0], p[0])

    def test_matches_textbook_for_constant_beta1(self):
        rng = np.random.default_rng(6)
        p = [rng.normal(size=3)]
        state = AdamState.zeros_like(p)
        m = v = np.zeros(3)
        ref = p[0].copy()
        for t in range(1, 6):
            g = rng.normal(size=3)
            p = adam_step(p, [g], state, lr=0.01, beta1=0.9)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p[0], ref, rtol=1e-12)


class TestSchedule:
    S = 25

    def test_final_step(self):
        cfg = TrainingSchedule(epochs=40)
        lr, b1 = schedule_at(40 * self.S - 1, cfg, self.S)
        assert abs(lr) < 1e-9 and b1 == pytest.approx(0.5)

    def test_warmup_start(self):
        cfg = TrainingSchedule(base_lr=1e-3, warmup_factor=100.0)
        lr, b1 = schedule_at(0, cfg, self.S)
        assert lr == pytest.approx(1e-5) and b1 == 0.9
        warm = [schedule_at(s, cfg, self.S)[0] for s in range(self.S)]
        assert min(warm) == warm[0]
        ratios = np.array(warm[1:]) / np.array(warm[:-1])
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_inverse_sqrt(self):
        cfg = TrainingSchedule(epochs=40)
        for t1, t2 in [(30, 120), (100, 400), (57, 500)]:
            l1, _ = schedule_at(t1, cfg, self.S)
            l2, _ = schedule_at(t2, cfg, self.S)
            assert l1 / l2 == pytest.approx(math.sqrt(t2 / t1), abs=1e-9)

    def test_continuity(self):
        cfg = TrainingSchedule(epochs=40)
        for boundary in (self.S, (40 - cfg.rampdown_epochs) * self.S):
            left = lr_curve(boundary - 1e-9, cfg, self.S)[0]
            right = lr_curve(boundary, cfg, self.S)[0]
            assert abs(left - right) <= 0.01 * right

    def test_invariants(self):
        cfg = TrainingSchedule(epochs=12)
        for s in range(12 * self.S):
            lr, b1 = schedule_at(s, cfg, self.S)
            assert lr >= 0 and 0.5 <= b1 <= 0.9

    def test_defaults_and_full_scale(self):
        assert TrainingSchedule().rampdown_epochs == 6
        p = TrainingSchedule.full_scale()
        assert (p.epochs, p.batch, p.rampdown_epochs) == (400, 1024, 60)
        assert TrainingSchedule(epochs=1).rampdown_epochs == 0

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainingSchedule(epochs=10, rampdown_epochs=10)
        with pytest.raises(ConfigError):
            TrainingSchedule(epochs=0)


class TestDataset:
    def test_corruption_count(self):
        d = make_dataset(200, 0.3, seed=1)
        assert d.corrupt_mask.sum() == 60
        np.testing.assert_array_equal(d.labels[~d.corrupt_mask], d.clean_labels[~d.corrupt_mask])

    def test_reproducible(self):
        a, b = make_dataset(100, 0.2, seed=5), make_dataset(100, 0.2, seed=5)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.corrupt_mask, b.corrupt_mask)

    def test_label_range(self):
        d = make_dataset(300, 0.5, seed=2)
        assert d.labels.min() >= 0 and d.labels.max() <= 1


class TestTraining:
    def test_deterministic(self):
        s = TrainingSchedule(epochs=3)
        a = run_experiment(300, 0.3, seed=4, schedule=s)
        b = run_experiment(300, 0.3, seed=4, schedule=s)
        assert a.to_json() == b.to_json()

    def test_small_lr_loss_mostly_decreasing(self):
        d = make_dataset(500, 0.0, seed=3)
        m = RegressorModel((6, 16, 8), 0)
        sched = TrainingSchedule(epochs=40, base_lr=1e-3)
        hist = fit(m, d.features, lambda p, idx: mse_loss(p, d.clean_labels[idx]), sched,
                   np.random.default_rng(0))
        regress = sum(b > a for a, b in zip(hist, hist[1:]))
        assert regress <= 0.05 * len(hist)

    def test_divergence_reported(self):
        d = make_dataset(100, 0.0, seed=0)
        m = RegressorModel((6, 4, 8), 0)
        with pytest.raises(Divergence) as exc:
            fit(m, d.features, lambda p, idx: (float("nan"), np.zeros_like(p)),
                TrainingSchedule(epochs=2), np.random.default_rng(0))
        assert exc.value.epoch == 0 and exc.value.batch == 0

    def test_tiny_mu_routes_to_teacher(self):
        d = make_dataset(1000, 0.3, seed=6)
        truth = d.truth
        sched = TrainingSchedule(epochs=20, base_lr=1e-2)
        student, rep = train(truth, d, ARDConfig(mu=1e-12), sched, seed=6)
        assert rep.flagged_outliers == rep.corrupted
        assert rep.ard_mse < rep.baseline_mse
        assert rep.teacher_mse == 0.0

    def test_report_fields(self):
        rep = run_experiment(200, 0.3, seed=1, schedule=TrainingSchedule(epochs=1))
        assert len(rep.ard_history) == 1 and rep.corrupted == 60
        assert all(np.isfinite([rep.ard_mse, rep.baseline_mse, rep.teacher_mse]))
