"""Per-channel temporal smoothing: Kalman, Savitzky-Golay and their cascade.

The streaming filter (:class:`HybridFilterState` / :func:`hybrid_step`) runs a
bank of independent scalar channels with elementwise numpy arithmetic, so a
channel's output never depends on how many other channels share the bank.
That is what makes streaming and column-by-column batch filtering agree
bit for bit.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInnovation,
    InvalidKernel,
    NonFinite,
    WindowNotFull,
)

CENTER = "center"
ENDPOINT = "endpoint"
SG_MODES = (CENTER, ENDPOINT)
HYBRID_MODES = ("kalman", "sg", "cascade")
KALMAN_MODELS = ("rw", "cv")


# ---------------------------------------------------------------------------
# Savitzky-Golay
# ---------------------------------------------------------------------------


def _check_kernel_args(radius, order, strict=True):
    if int(radius) != radius or int(order) != order:
        raise InvalidKernel(f"radius and order must be integers, got {radius}, {order}")
    if radius < 1:
        raise InvalidKernel(f"radius must be >= 1, got {radius}")
    if order < 0:
        raise InvalidKernel(f"order must be >= 0, got {order}")
    if strict and order >= radius:
        raise InvalidKernel(f"polynomial order {order} must be less than radius {radius}")
    if order > 2 * radius:
        raise InvalidKernel(f"order {order} exceeds the {2 * radius + 1}-sample window")


def sg_design_matrix(radius, order, strict=True):
    """Vandermonde matrix with rows ``[1, t, ..., t**order]`` for ``t = -radius..radius``.

    ``strict`` enforces ``order < radius``.  With ``strict=False`` any order
    that keeps the matrix full column rank (``order <= 2 * radius``) is allowed.
    """
    _check_kernel_args(radius, order, strict)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.vander(t, order + 1, increasing=True)


def _solve_exact(a, b):
    """Gaussian elimination with partial pivoting on Fraction matrices.

    Solves ``a @ x = b`` for a square ``a`` and a list-of-rows ``b``.
    """
    n = len(a)
    m = [list(a[i]) + list(b[i]) for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0:
            raise InvalidKernel("design matrix is rank deficient")
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [[x / m[i][i] for x in m[i][n:]] for i in range(n)]


@lru_cache(maxsize=None)
def _sg_pseudo_inverse(radius, order):
    """``(H^T H)^-1 H^T`` in exact rational arithmetic, shape ``(order+1, 2*radius+1)``."""
    ts = range(-radius, radius + 1)
    k = order + 1
    h = [[Fraction(t) ** j for j in range(k)] for t in ts]
    hth = [[sum(h[r][i] * h[r][j] for r in range(len(h))) for j in range(k)] for i in range(k)]
    ht = [[h[r][i] for r in range(len(h))] for i in range(k)]
    return tuple(tuple(row) for row in _solve_exact(hth, ht))


@lru_cache(maxsize=None)
def _eval_row(radius, order, position):
    pinv = _sg_pseudo_inverse(radius, order)
    p = Fraction(position)
    width = 2 * radius + 1
    return tuple(sum(p**j * pinv[j][c] for j in range(order + 1)) for c in range(width))


def sg_projection_matrix(radius, order, strict=True):
    """The full smoothing matrix ``H (H^T H)^-1 H^T``."""
    _check_kernel_args(radius, order, strict)
    rows = [_eval_row(radius, order, t) for t in range(-radius, radius + 1)]
    return np.array([[float(x) for x in row] for row in rows])


@dataclass(frozen=True)
class SGKernel:
    """Least-squares polynomial smoother over a window of ``2 * radius + 1`` samples.

    ``mode`` selects where the fitted polynomial is evaluated: ``"center"``
    (``t = 0``, introduces ``radius`` frames of delay) or ``"endpoint"``
    (``t = radius``, the newest sample; causal).  ``strict=False`` lifts
    the ``order < radius`` rule, see :func:`sg_design_matrix`.
    """

    radius: int
    order: int
    mode: str = ENDPOINT
    strict: bool = True
    row: np.ndarray = field(init=False, repr=False, compare=False)
    pinv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_kernel_args(self.radius, self.order, self.strict)
        if self.mode not in SG_MODES:
            raise InvalidKernel(f"mode must be one of {SG_MODES}, got {self.mode!r}")
        pos = 0 if self.mode == CENTER else self.radius
        row = np.array([float(x) for x in _eval_row(self.radius, self.order, pos)])
        pinv = np.array([[float(x) for x in r] for r in _sg_pseudo_inverse(self.radius, self.order)])
        row.setflags(write=False)
        pinv.setflags(write=False)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "pinv", pinv)

    @property
    def width(self):
        return 2 * self.radius + 1

    @property
    def eval_position(self):
        return 0 if self.mode == CENTER else self.radius


def _check_window(window, kernel):
    w = np.asarray(window, dtype=np.float64)
    if w.shape != (kernel.width,):
        raise WindowNotFull(f"window needs {kernel.width} samples, got {w.size}")
    return w


def sg_fit(window, kernel):
    """Least-squares polynomial coefficients ``[a0, a1, ...]`` over ``t = -n..n``."""
    w = _check_window(window, kernel)
    return kernel.pinv @ w


def sg_smooth(window, kernel):
    """Fitted polynomial evaluated at the kernel's evaluation point."""
    w = _check_window(window, kernel)
    return float(np.dot(kernel.row, w))


# ---------------------------------------------------------------------------
# Kalman
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KalmanConfig:
    """Noise and model settings for one scalar channel.

    ``model="rw"`` is a random walk (G = 1, H = 1).  ``model="cv"`` tracks
    position and velocity with G = [[1, 1], [0, 1]] and H = [1, 0].  The
    process covariance is ``q * I`` in both cases.  ``p0`` is the initial
    estimate variance used when a channel sees its first sample.
    """

    q: float = 1e-2
    r: float = 1e-2
    model: str = "rw"
    p0: float = 1.0
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.model not in KALMAN_MODELS:
            raise ConfigError(f"kalman.model must be one of {KALMAN_MODELS}, got {self.model!r}")
        for name in ("q", "r", "p0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"kalman.{name} must be finite and >= 0, got {v!r}")
        if self.q == 0 and self.r == 0 and not self.allow_degenerate:
            raise ConfigError("kalman.q and kalman.r cannot both be zero")

    @property
    def state_dim(self):
        return 1 if self.model == "rw" else 2

    @property
    def G(self):
        if self.model == "rw":
            return np.eye(1)
        return np.array([[1.0, 1.0], [0.0, 1.0]])

    @property
    def H_obs(self):
        if self.model == "rw":
            return np.eye(1)
        return np.array([[1.0, 0.0]])


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        P = np.atleast_2d(np.asarray(self.P, dtype=np.float64))
        if P.shape != (x.size, x.size):
            raise ValueError(f"covariance shape {P.shape} does not match state size {x.size}")
        if not np.allclose(P, P.T, rtol=0, atol=1e-9):
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(P).min() < -1e-9:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @classmethod
    def initial(cls, z, cfg):
        x = np.zeros(cfg.state_dim)
        x[0] = z
        return cls(x, cfg.p0 * np.eye(cfg.state_dim))


def kalman_predict(state, cfg):
    """Time update with the control input fixed at zero."""
    G = cfg.G
    P = G @ state.P @ G.T + cfg.q * np.eye(cfg.state_dim)
    return KalmanState(G @ state.x, 0.5 * (P + P.T))


def kalman_update(state, z, cfg):
    """Measurement update for a scalar observation ``z``."""
    H = cfg.H_obs
    S = float((H @ state.P @ H.T)[0, 0]) + cfg.r
    if S == 0:
        raise DegenerateInnovation("innovation variance is zero")
    K = (state.P @ H.T) / S
    IKH = np.eye(cfg.state_dim) - K @ H
    # (I - KH) x + K z keeps r = 0 exact: the estimate equals z bit for bit
    x = IKH @ state.x + K[:, 0] * z
    P = IKH @ state.P
    return KalmanState(x, 0.5 * (P + P.T))


def kalman_gain(state, cfg):
    H = cfg.H_obs
    S = float((H @ state.P @ H.T)[0, 0]) + cfg.r
    return (state.P @ H.T)[:, 0] / S


# ---------------------------------------------------------------------------
# Hybrid cascade
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HybridConfig:
    """Settings for the streaming filter.

    ``mode`` is ``"kalman"`` (Kalman only), ``"sg"`` (SG over the raw input)
    or ``"cascade"`` (SG over the Kalman estimates).
    """

    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    sg_radius: int = 6
    sg_order: int = 2
    sg_mode: str = ENDPOINT
    mode: str = "cascade"

    def __post_init__(self):
        if self.mode not in HYBRID_MODES:
            raise ConfigError(f"hybrid.mode must be one of {HYBRID_MODES}, got {self.mode!r}")
        try:
            self.kernel
        except InvalidKernel as exc:
            raise ConfigError(str(exc)) from None

    @cached_property
    def kernel(self):
        return SGKernel(self.sg_radius, self.sg_order, self.sg_mode)


class HybridFilterState:
    """Streaming state for ``channels`` independent scalar channels.

    Holds the Kalman estimate and covariance per channel (stored as flat
    arrays, one entry per channel) plus a ring buffer of the last
    ``2 * radius + 1`` values fed to the SG stage.
    """

    def __init__(self, cfg=None, channels=1):
        cfg = cfg or HybridConfig()
        self.channels = int(channels)
        self.width = cfg.kernel.width
        c = self.channels
        self.x = np.zeros(c)
        self.v = np.zeros(c)
        self.p00 = np.zeros(c)
        self.p01 = np.zeros(c)
        self.p11 = np.zeros(c)
        self.window = np.zeros((self.width, c))
        self.head = 0
        self.count = 0

    @property
    def warm(self):
        return self.count >= self.width

    def copy(self):
        new = object.__new__(HybridFilterState)
        new.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})
        return new


def _kalman_bank_step(state, z, kc):
    if state.count == 0:
        state.x[:] = z
        state.v[:] = 0.0
        state.p00[:] = kc.p0
        state.p01[:] = 0.0
        state.p11[:] = kc.p0 if kc.model == "cv" else 0.0
    q, r = kc.q, kc.r
    if kc.model == "rw":
        p = state.p00 + q
        s = p + r
        if np.any(s == 0):
            raise DegenerateInnovation("innovation variance is zero")
        k = p / s
        state.x = (1.0 - k) * state.x + k * z
        state.p00 = (1.0 - k) * p
    else:
        x = state.x + state.v
        p00 = state.p00 + 2.0 * state.p01 + state.p11 + q
        p01 = state.p01 + state.p11
        p11 = state.p11 + q
        s = p00 + r
        if np.any(s == 0):
            raise DegenerateInnovation("innovation variance is zero")
        k0 = p00 / s
        k1 = p01 / s
        innov = z - x
        state.x = (1.0 - k0) * x + k0 * z
        state.v = state.v + k1 * innov
        state.p11 = p11 - k1 * p01
        state.p00 = (1.0 - k0) * p00
        state.p01 = (1.0 - k0) * p01
    return state.x


def hybrid_step(state, z, cfg):
    """Advance every channel of ``state`` by one frame.

    ``z`` holds one raw value per channel.  ``state`` is updated in place and
    returned together with the filtered values.  Until the SG window has
    filled, the output is the Kalman estimate (or the raw value in ``"sg"``
    mode) so every input frame produces exactly one output.
    """
    z = np.asarray(z, dtype=np.float64).reshape(state.channels)
    if not np.all(np.isfinite(z)):
        raise NonFinite("filter input contains NaN or infinite values")

    if cfg.mode == "sg":
        stage = z
    else:
        stage = _kalman_bank_step(state, z, cfg.kalman).copy()
    state.count += 1

    if cfg.mode == "kalman":
        return state, stage

    W = state.width
    state.window[state.head] = stage
    state.head = (state.head + 1) % W
    if state.count < W:
        return state, stage

    row = cfg.kernel.row
    # taps in chronological order; oldest sample sits at ``head``
    out = row[0] * state.window[state.head]
    for j in range(1, W):
        out = out + row[j] * state.window[(state.head + j) % W]
    return state, out


class HybridFilter:
    """Callable wrapper owning a config and a :class:`HybridFilterState`."""

    def __init__(self, cfg=None, channels=1):
        self.cfg = cfg or HybridConfig()
        self.state = HybridFilterState(self.cfg, channels)

    def __call__(self, z):
        _, out = hybrid_step(self.state, z, self.cfg)
        return out

    def reset(self):
        self.state = HybridFilterState(self.cfg, self.state.channels)


def filter_series(series, cfg=None):
    """Filter a whole series from a fresh state.

    ``series`` is ``(T,)`` for one channel or ``(T, C)`` for ``C`` channels
    filtered independently.  Output has the same shape.
    """
    cfg = cfg or HybridConfig()
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        return s.copy()
    squeeze = s.ndim == 1
    cols = s.reshape(s.shape[0], -1)
    state = HybridFilterState(cfg, cols.shape[1])
    out = np.empty_like(cols)
    for t in range(cols.shape[0]):
        _, out[t] = hybrid_step(state, cols[t], cfg)
    return out[:, 0] if squeeze else out
