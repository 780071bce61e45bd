"""Distillation losses.

Two losses live here.  The first is the usual temperature-softened
classification loss, a mix of teacher KL and hard-label cross-entropy.  The
second is an adaptive regression loss.  It checks each label against the
teacher's prediction.  Labels that are too far off are treated as mislabeled,
and the student learns the teacher's output for them instead.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidTemperature, NonFinite, ShapeMismatch


def softened_probs(logits, T=1.0):
    """Softmax of ``logits / T`` along the last axis."""
    if not T > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {T!r}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits, T=1.0):
    if not T > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {T!r}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class SoftTargetConfig:
    T: float = 4.0
    alpha: float = 0.5

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidTemperature(f"temperature must be > 0, got {self.T!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha!r}")


def classification_distill_loss(student_logits, teacher_logits, labels, cfg=None):
    """``alpha * T**2 * KL(teacher_T || student_T) + (1 - alpha) * CE(student, labels)``.

    Both terms are averaged over the batch.  ``labels`` are integer class
    indices; the cross-entropy uses the student's ``T = 1`` softmax.
    """
    cfg = cfg or SoftTargetConfig()
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if s.shape != t.shape:
        raise ShapeMismatch(f"student {s.shape} and teacher {t.shape} logits differ")
    if y.shape != (s.shape[0],):
        raise ShapeMismatch(f"expected {s.shape[0]} labels, got shape {y.shape}")

    loss = 0.0
    if cfg.alpha > 0:
        log_pt = log_softmax(t, cfg.T)
        log_ps = log_softmax(s, cfg.T)
        kl = np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=-1)
        loss += cfg.alpha * cfg.T**2 * float(kl.mean())
    if cfg.alpha < 1:
        ce = -log_softmax(s, 1.0)[np.arange(s.shape[0]), y.astype(int)]
        loss += (1.0 - cfg.alpha) * float(ce.mean())
    return loss


@dataclass(frozen=True)
class ARDConfig:
    """Adaptive regression distillation settings.

    mu : float
        Distance from label to teacher output above which a sample counts as
        mislabeled.
    v_penalty : float
        Multiplier (> 1) applied when the student trails the teacher on a
        clean sample.
    b_margin : float
        Slack granted to the student before the penalty applies.
    """

    mu: float
    v_penalty: float = 2.0
    b_margin: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError(f"mu must be > 0, got {self.mu!r}")
        if not self.v_penalty > 1:
            raise ConfigError(f"v must be > 1, got {self.v_penalty!r}")
        if not self.b_margin >= 0:
            raise ConfigError(f"b must be >= 0, got {self.b_margin!r}")


@dataclass(frozen=True)
class DistillBatch:
    """Student outputs, teacher outputs and labels, each ``(B, d)``."""

    student: np.ndarray
    teacher: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("student", "teacher", "labels"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]
            if not np.all(np.isfinite(a)):
                raise NonFinite(f"{name} contains non-finite values")
            object.__setattr__(self, name, a)
            arrs.append(a)
        if not arrs[0].shape == arrs[1].shape == arrs[2].shape:
            raise ShapeMismatch(
                f"shapes differ: student {arrs[0].shape}, teacher {arrs[1].shape}, "
                f"labels {arrs[2].shape}"
            )

    def __len__(self):
        return self.student.shape[0]


def teacher_residuals(teacher, labels):
    t = np.asarray(teacher, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if t.ndim == 1:
        t, y = t[:, None], y[:, None]
    return np.linalg.norm(y - t, axis=1)


def auto_mu(residuals):
    """Robust outlier threshold ``median + 3 * MAD`` of the teacher residuals."""
    r = np.asarray(residuals, dtype=np.float64)
    med = np.median(r)
    mad = np.median(np.abs(r - med))
    return float(med + 3.0 * mad)


def outlier_mask(batch, mu):
    return np.linalg.norm(batch.labels - batch.teacher, axis=1) > mu


def partition_outliers(batch, mu):
    """Split sample indices into ``(outliers, clean)``.

    A sample is an outlier when its label lies more than ``mu`` (Euclidean
    distance) from the teacher output.  The student output plays no part.
    """
    mask = outlier_mask(batch, mu)
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def ard_loss(batch, cfg):
    """Adaptive regression distillation loss and its gradient.

    Per sample:

    * outlier: ``||s - t||^2``
    * clean, ``||s - y||^2 + b > ||t - y||^2``: ``v * ||s - y||^2``
    * clean otherwise: ``||s - y||^2``

    The batch loss is the mean over samples.  The gradient w.r.t. the student
    outputs holds the branch choice fixed; on the switching surface itself it
    takes the ``v`` branch.

    Returns
    -------
    loss : float
    grad : ndarray, shape ``(B, d)``
    """
    s, t, y = batch.student, batch.teacher, batch.labels
    n = s.shape[0]
    outlier = outlier_mask(batch, cfg.mu)

    d_teacher = s - t
    d_label = s - y
    err_student = np.sum(d_label**2, axis=1)
    err_teacher = np.sum((t - y) ** 2, axis=1)
    lhs = err_student + cfg.b_margin
    penalized = lhs > err_teacher

    per_sample = np.where(
        outlier,
        np.sum(d_teacher**2, axis=1),
        np.where(penalized, cfg.v_penalty, 1.0) * err_student,
    )
    grad_scale = np.where(lhs >= err_teacher, cfg.v_penalty, 1.0)
    grad = np.where(
        outlier[:, None], 2.0 * d_teacher, 2.0 * grad_scale[:, None] * d_label
    ) / n
    return float(per_sample.mean()), grad


def mse_loss(pred, target):
    """Mean over samples of the squared Euclidean error, with gradient."""
    p = np.asarray(pred, dtype=np.float64)
    d = p - np.asarray(target, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    n = d.shape[0]
    return float(np.sum(d**2) / n), (2.0 * d / n).reshape(p.shape)
