"""Small numpy MLP regressors and the teacher/student training loop.

This file is the desk-scale stand-in for image-scale distillation. A wide
teacher is fitted on clean labels. Two narrow students are then trained on
labels where a fraction has been replaced by noise. One student uses the
adaptive regression distillation loss and the other uses plain squared error.
Both are scored on a clean held-out set.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .distill import ARDConfig, DistillBatch, ard_loss, auto_mu, mse_loss, teacher_residuals
from .errors import ConfigError, DimensionMismatch, Divergence

TEACHER_HIDDEN = (64, 64)
STUDENT_HIDDEN = (16,)


class RegressorModel:
    """Fully connected network, tanh on hidden layers, identity output."""

    def __init__(self, sizes, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = np.random.default_rng(rng)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    @params.setter
    def params(self, values):
        values = list(values)
        self.weights = values[0::2]
        self.biases = values[1::2]

    def copy(self):
        new = object.__new__(RegressorModel)
        new.sizes = self.sizes
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def _activations(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise DimensionMismatch(f"expected (B, {self.sizes[0]}) features, got {X.shape}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def forward(self, X):
        return self._activations(X)[-1]

    __call__ = forward

    def grad(self, X, upstream):
        """Parameter gradients given ``d loss / d output``, ordered like :attr:`params`."""
        acts = self._activations(X)
        delta = np.asarray(upstream, dtype=np.float64)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads


def forward(model, features):
    return model.forward(features)


def grad(model, features, upstream):
    return model.grad(features, upstream)


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1_prod: float = 1.0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns new parameter arrays and advances ``state``.

    Bias correction for the first moment uses the running product of the
    ``beta1`` values actually applied, so a scheduled ``beta1`` stays unbiased.
    """
    state.t += 1
    state.beta1_prod *= beta1
    c1 = 1.0 - state.beta1_prod
    c2 = 1.0 - beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        step = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
        out.append(p - step)
    return out


@dataclass(frozen=True)
class TrainingSchedule:
    """Learning-rate and ``beta1`` schedule.

    The rate rises geometrically from ``base_lr / warmup_factor`` over the
    first epoch, then decays as ``1 / sqrt(step)``.  During the last
    ``rampdown_epochs`` it is pulled to zero along a half-cosine while
    ``beta1`` moves from ``beta1_start`` to ``beta1_end``.  ``rampdown_epochs``
    defaults to 15% of ``epochs``.
    """

    epochs: int = 40
    batch: int = 64
    base_lr: float = 1e-3
    warmup_factor: float = 100.0
    rampdown_epochs: int | None = None
    beta1_start: float = 0.9
    beta1_end: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ConfigError(f"train.batch must be >= 1, got {self.batch}")
        if not self.base_lr >= 0:
            raise ConfigError(f"train.base_lr must be >= 0, got {self.base_lr}")
        if self.warmup_factor < 1:
            raise ConfigError("warmup_factor must be >= 1")
        if self.rampdown_epochs is None:
            r = round(0.15 * self.epochs) if self.epochs > 1 else 0
            object.__setattr__(self, "rampdown_epochs", max(min(r, self.epochs - 1), 0))
        if not 0 <= self.rampdown_epochs < self.epochs:
            raise ConfigError("rampdown_epochs must be smaller than epochs")

    @classmethod
    def full_scale(cls):
        return cls(epochs=400, batch=1024, rampdown_epochs=60)


def lr_curve(t, cfg, steps_per_epoch):
    """Learning rate and ``beta1`` at (possibly fractional) step ``t``."""
    S = steps_per_epoch
    if t < S:
        lr = cfg.base_lr * cfg.warmup_factor ** (t / S - 1.0)
    else:
        lr = cfg.base_lr * math.sqrt(S / t)
    beta1 = cfg.beta1_start
    if cfg.rampdown_epochs > 0:
        start = (cfg.epochs - cfg.rampdown_epochs) * S
        last = cfg.epochs * S - 1
        if t >= start:
            u = 1.0 if last <= start else min((t - start) / (last - start), 1.0)
            f = 0.5 * (1.0 + math.cos(math.pi * u))
            lr *= f
            beta1 = cfg.beta1_end + (cfg.beta1_start - cfg.beta1_end) * f
    return lr, beta1


def schedule_at(step, cfg, steps_per_epoch):
    """``(lr, beta1)`` for global optimizer step ``step`` (0-based)."""
    total = cfg.epochs * steps_per_epoch
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    return lr_curve(float(step), cfg, steps_per_epoch)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticDataset:
    features: np.ndarray
    clean_labels: np.ndarray
    labels: np.ndarray
    corrupt_mask: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    seed: int


class GroundTruth:
    """Sum of random sinusoids squashed into ``[0, 1]`` per output."""

    def __init__(self, d_in, d_out, rng, terms=2):
        self.freq = rng.normal(0.0, 0.8, size=(terms, d_in, d_out))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(terms, d_out))
        self.amp = rng.uniform(0.5, 1.5, size=(terms, d_out))

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        z = np.zeros((X.shape[0], self.phase.shape[1]))
        for k in range(self.phase.shape[0]):
            z += self.amp[k] * np.sin(X @ self.freq[k] + self.phase[k])
        return 1.0 / (1.0 + np.exp(-z))


def make_dataset(n_samples=2000, p_corrupt=0.3, seed=0, d_in=6, d_out=8, n_test=1000):
    """Reproducible regression data with ``round(p_corrupt * n_samples)`` noisy labels."""
    if not 0.0 <= p_corrupt <= 1.0:
        raise ConfigError(f"data.p_corrupt must lie in [0, 1], got {p_corrupt}")
    if n_samples < 1:
        raise ConfigError(f"data.n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    truth = GroundTruth(d_in, d_out, rng)
    X = rng.uniform(-1.0, 1.0, size=(n_samples, d_in))
    Xt = rng.uniform(-1.0, 1.0, size=(n_test, d_in))
    clean = truth(X)
    n_bad = int(round(p_corrupt * n_samples))
    bad = rng.choice(n_samples, size=n_bad, replace=False)
    mask = np.zeros(n_samples, dtype=bool)
    mask[bad] = True
    labels = clean.copy()
    labels[mask] = rng.uniform(0.0, 1.0, size=(n_bad, d_out))
    ds = SyntheticDataset(X, clean, labels, mask, Xt, truth(Xt), seed)
    ds.truth = truth
    return ds


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def fit(model, X, loss_fn, schedule, rng):
    """Minibatch Adam over ``schedule``.

    ``loss_fn(pred, idx)`` returns ``(loss, d loss / d pred)`` for the rows
    ``idx`` of ``X``.  Returns the mean training loss of each epoch.
    """
    n = X.shape[0]
    bs = min(schedule.batch, n)
    steps = math.ceil(n / bs)
    state = AdamState.zeros_like(model.params)
    history = []
    step = 0
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(steps):
            idx = order[b * bs:(b + 1) * bs]
            pred = model.forward(X[idx])
            loss, g = loss_fn(pred, idx)
            if not math.isfinite(loss):
                raise Divergence(epoch, b, loss)
            lr, beta1 = schedule_at(step, schedule, steps)
            model.params = adam_step(model.params, model.grad(X[idx], g), state, lr, beta1)
            total += loss * len(idx)
            step += 1
        history.append(total / n)
    return history


def test_mse(model, data):
    """Mean squared error per output coordinate on the clean test set."""
    return float(np.mean((model.forward(data.test_features) - data.test_labels) ** 2))


def fit_teacher(data, schedule, seed=0, hidden=TEACHER_HIDDEN):
    """Fit a teacher with plain squared error on the clean labels."""
    rng = np.random.default_rng([seed, 1])
    d_in, d_out = data.features.shape[1], data.clean_labels.shape[1]
    teacher = RegressorModel((d_in, *hidden, d_out), rng)
    Y = data.clean_labels
    fit(teacher, data.features, lambda p, idx: mse_loss(p, Y[idx]), schedule, rng)
    return teacher


@dataclass
class MetricsReport:
    teacher_mse: float
    ard_mse: float
    baseline_mse: float
    p_corrupt: float
    n_samples: int
    epochs: int
    seed: int
    mu: float
    v: float
    b: float
    flagged_outliers: int
    flagged_corrupted: int
    corrupted: int
    ard_history: list = field(default_factory=list)
    baseline_history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self, indent=2):
        return json.dumps(asdict(self), indent=indent, sort_keys=True)


def train(teacher, data, ard_cfg=None, schedule=None, seed=0, hidden=STUDENT_HIDDEN,
          v_penalty=2.0, b_margin=0.0):
    """Train an ARD student and a plain squared-error baseline student.

    ``teacher`` is any callable mapping features to outputs.  Both students
    start from identical weights and see identical minibatch orders.  With
    ``ard_cfg=None`` the outlier threshold is ``median + 3 * MAD`` of the
    teacher residuals on the training labels.

    Returns the ARD student and a :class:`MetricsReport`.
    """
    schedule = schedule or TrainingSchedule()
    X, Y = data.features, data.labels
    T_out = np.asarray(teacher(X), dtype=np.float64)
    if ard_cfg is None:
        ard_cfg = ARDConfig(auto_mu(teacher_residuals(T_out, Y)), v_penalty, b_margin)

    d_in, d_out = X.shape[1], Y.shape[1]
    init = RegressorModel((d_in, *hidden, d_out), np.random.default_rng([seed, 2]))

    student = init.copy()
    ard_hist = fit(
        student, X,
        lambda p, idx: ard_loss(DistillBatch(p, T_out[idx], Y[idx]), ard_cfg),
        schedule, np.random.default_rng([seed, 3]),
    )
    baseline = init.copy()
    base_hist = fit(
        baseline, X, lambda p, idx: mse_loss(p, Y[idx]),
        schedule, np.random.default_rng([seed, 3]),
    )

    flagged = np.linalg.norm(Y - T_out, axis=1) > ard_cfg.mu
    report = MetricsReport(
        teacher_mse=float(np.mean((teacher(data.test_features) - data.test_labels) ** 2)),
        ard_mse=test_mse(student, data),
        baseline_mse=test_mse(baseline, data),
        p_corrupt=float(data.corrupt_mask.mean()),
        n_samples=int(X.shape[0]),
        epochs=schedule.epochs,
        seed=int(seed),
        mu=float(ard_cfg.mu),
        v=float(ard_cfg.v_penalty),
        b=float(ard_cfg.b_margin),
        flagged_outliers=int(flagged.sum()),
        flagged_corrupted=int((flagged & data.corrupt_mask).sum()),
        corrupted=int(data.corrupt_mask.sum()),
        ard_history=[float(h) for h in ard_hist],
        baseline_history=[float(h) for h in base_hist],
    )
    return student, report


def run_experiment(n_samples=2000, p_corrupt=0.3, seed=0, schedule=None, mu=None,
                   v_penalty=2.0, b_margin=0.0):
    """Generate data, fit the teacher, train both students; return the report."""
    schedule = schedule or TrainingSchedule()
    data = make_dataset(n_samples, p_corrupt, seed)
    teacher = fit_teacher(data, schedule, seed)
    cfg = None if mu is None else ARDConfig(mu, v_penalty, b_margin)
    _, report = train(teacher, data, cfg, schedule, seed, v_penalty=v_penalty, b_margin=b_margin)
    return report
