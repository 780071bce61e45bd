"""Frame-ordered streaming: parse per-frame predictions, filter, measure.

A frame carries ``n`` blend weights and ``L`` 2D landmarks.  Every weight and
every landmark coordinate is an independent filter channel, laid out as
``[w0..w{n-1}, x0, y0, x1, y1, ...]``.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blendshape import N_ACTION_UNITS, clamp_project
from .errors import (
    ChannelCountMismatch,
    ConfigError,
    LengthMismatch,
    NonFinite,
    NonMonotoneFrame,
    ParseError,
)
from .filters import HybridConfig, HybridFilterState, hybrid_step

log = logging.getLogger(__name__)

N_LANDMARKS = 70
FORMATS = ("csv", "jsonl")


@dataclass
class FrameSample:
    frame: int
    t: float
    weights: np.ndarray
    landmarks: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 2)

    @property
    def n_weights(self):
        return self.weights.size

    @property
    def n_landmarks(self):
        return self.landmarks.shape[0]

    def channels(self):
        return np.concatenate([self.weights, self.landmarks.reshape(-1)])

    @classmethod
    def from_channels(cls, frame, t, values, n_weights):
        values = np.asarray(values, dtype=np.float64)
        return cls(frame, t, values[:n_weights].copy(), values[n_weights:].reshape(-1, 2))


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def csv_header(n_weights, n_landmarks):
    cols = ["frame", "t"]
    cols += [f"w{i}" for i in range(n_weights)]
    for k in range(n_landmarks):
        cols += [f"x{k}", f"y{k}"]
    return ",".join(cols)


def parse_csv_header(line):
    """Return ``(n_weights, n_landmarks)`` declared by a CSV header line."""
    cols = [c.strip() for c in line.strip().split(",")]
    if cols[:2] != ["frame", "t"]:
        raise ParseError("header must start with 'frame,t'", line=1, column=1)
    n = 0
    while 2 + n < len(cols) and cols[2 + n] == f"w{n}":
        n += 1
    rest = cols[2 + n:]
    if len(rest) % 2:
        raise ParseError("landmark columns must come in x/y pairs", line=1)
    for k in range(len(rest) // 2):
        if rest[2 * k:2 * k + 2] != [f"x{k}", f"y{k}"]:
            raise ParseError(
                f"unexpected column {rest[2 * k]!r}", line=1, column=3 + n + 2 * k
            )
    return n, len(rest) // 2


def _number(tok, line_no, col):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad number {tok!r}", line=line_no, column=col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line=line_no, column=col)
    return v


def _frame_index(value, line_no, col):
    if isinstance(value, str):
        value = _number(value, line_no, col)
    if isinstance(value, bool) or not float(value).is_integer():
        raise ParseError(f"frame index must be an integer, got {value!r}", line=line_no, column=col)
    return int(value)


def ingest(record, fmt, n_weights, n_landmarks, line_no=None, last_frame=None):
    """Parse one text record into a validated :class:`FrameSample`.

    Raises
    ------
    ParseError
        Malformed or non-finite field (with line and column).
    ChannelCountMismatch
        Record does not carry ``n_weights`` weights and ``n_landmarks`` points.
    NonMonotoneFrame
        Frame index not strictly greater than ``last_frame``.
    """
    if fmt == "csv":
        toks = record.strip().split(",")
        expected = 2 + n_weights + 2 * n_landmarks
        if len(toks) != expected:
            raise ChannelCountMismatch(
                f"line {line_no}: expected {expected} fields, got {len(toks)}"
            )
        frame = _frame_index(toks[0].strip(), line_no, 1)
        vals = [_number(tok, line_no, c + 2) for c, tok in enumerate(toks[1:])]
        t = vals[0]
        weights = np.array(vals[1:1 + n_weights])
        landmarks = np.array(vals[1 + n_weights:]).reshape(-1, 2)
    elif fmt == "jsonl":
        try:
            obj = json.loads(record)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line_no, column=exc.colno) from None
        if not isinstance(obj, dict):
            raise ParseError("record must be a JSON object", line=line_no)
        missing = [k for k in ("frame", "t", "weights", "landmarks") if k not in obj]
        if missing:
            raise ParseError(f"missing keys {missing}", line=line_no)
        frame = _frame_index(obj["frame"], line_no, None)
        t = _json_number(obj["t"], line_no)
        weights = np.array([_json_number(v, line_no) for v in obj["weights"]])
        pts = obj["landmarks"]
        if any(not isinstance(p, (list, tuple)) or len(p) != 2 for p in pts):
            raise ParseError("landmarks must be [x, y] pairs", line=line_no)
        landmarks = np.array([[_json_number(v, line_no) for v in p] for p in pts]).reshape(-1, 2)
        if weights.size != n_weights or landmarks.shape[0] != n_landmarks:
            raise ChannelCountMismatch(
                f"line {line_no}: expected {n_weights} weights and {n_landmarks} landmarks, "
                f"got {weights.size} and {landmarks.shape[0]}"
            )
    else:
        raise ValueError(f"unknown format {fmt!r}")

    if last_frame is not None and frame <= last_frame:
        raise NonMonotoneFrame(f"line {line_no}: frame {frame} does not follow {last_frame}")
    return FrameSample(frame, t, weights, landmarks)


def _json_number(v, line_no):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"expected a number, got {v!r}", line=line_no)
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {v!r}", line=line_no)
    return float(v)


def format_frame(sample, fmt):
    if fmt == "csv":
        vals = [repr(float(v)) for v in sample.channels()]
        return ",".join([str(sample.frame), repr(float(sample.t)), *vals])
    return json.dumps({
        "frame": sample.frame,
        "t": float(sample.t),
        "weights": [float(v) for v in sample.weights],
        "landmarks": [[float(x), float(y)] for x, y in sample.landmarks],
    })


class StreamReader:
    """Iterate :class:`FrameSample` objects from a line-oriented text stream.

    CSV streams declare their channel counts in the header; JSONL streams take
    them from the first record unless given explicitly.  Gaps in the frame
    index and uneven timestamp spacing are logged, not repaired.
    """

    def __init__(self, lines, fmt="csv", n_weights=None, n_landmarks=None):
        if fmt not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
        self.fmt = fmt
        self._lines = iter(enumerate(lines, start=1))
        self.n_weights = n_weights
        self.n_landmarks = n_landmarks
        self._pending = None
        if fmt == "csv":
            for line_no, line in self._lines:
                if line.strip():
                    self.n_weights, self.n_landmarks = parse_csv_header(line)
                    break
        else:
            for line_no, line in self._lines:
                if line.strip():
                    self._pending = (line_no, line)
                    if self.n_weights is None or self.n_landmarks is None:
                        try:
                            obj = json.loads(line)
                            nw, nl = len(obj["weights"]), len(obj["landmarks"])
                        except (json.JSONDecodeError, KeyError, TypeError):
                            raise ParseError("cannot read channel counts", line=line_no) from None
                        self.n_weights = nw if self.n_weights is None else self.n_weights
                        self.n_landmarks = nl if self.n_landmarks is None else self.n_landmarks
                    break

    @property
    def has_header(self):
        return self.n_weights is not None

    def __iter__(self):
        last = None
        last_t = None
        dt = None
        source = self._lines
        if self._pending is not None:
            source = _chain([self._pending], source)
            self._pending = None
        for line_no, line in source:
            if not line.strip():
                continue
            s = ingest(line, self.fmt, self.n_weights, self.n_landmarks, line_no, last)
            if last is not None and s.frame != last + 1:
                log.warning("frame gap: %d -> %d (line %d)", last, s.frame, line_no)
            if last_t is not None:
                step = (s.t - last_t) / (s.frame - last)
                if dt is None:
                    dt = step
                elif not math.isclose(step, dt, rel_tol=1e-3, abs_tol=1e-9):
                    log.warning("non-uniform frame spacing at frame %d (%.6g s vs %.6g s); "
                                "filters assume uniform spacing", s.frame, step, dt)
            last, last_t = s.frame, s.t
            yield s


def _chain(first, rest):
    yield from first
    yield from rest


def read_stream(lines, fmt="csv", n_weights=None, n_landmarks=None):
    reader = StreamReader(lines, fmt, n_weights, n_landmarks)
    return reader, list(reader)


def write_stream(fh, samples, fmt, n_weights, n_landmarks):
    if fmt == "csv":
        fh.write(csv_header(n_weights, n_landmarks) + "\n")
    for s in samples:
        fh.write(format_frame(s, fmt) + "\n")


# ---------------------------------------------------------------------------
# Processing
# ---------------------------------------------------------------------------


class PipelineState:
    """Filter state for every channel of a stream, plus a frame counter.

    With ``threads > 1`` the channels are split into contiguous groups, each
    with its own bank, filtered concurrently.  Channels never interact, so the
    output is identical to the single-threaded result.
    """

    def __init__(self, cfg=None, n_weights=N_ACTION_UNITS, n_landmarks=N_LANDMARKS, threads=1):
        self.cfg = cfg or HybridConfig()
        self.n_weights = int(n_weights)
        self.n_landmarks = int(n_landmarks)
        self.n_channels = self.n_weights + 2 * self.n_landmarks
        self.frames = 0
        self.last_frame = None
        threads = max(1, min(int(threads), max(self.n_channels, 1)))
        bounds = np.linspace(0, self.n_channels, threads + 1).astype(int)
        self.groups = [(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        self.banks = [HybridFilterState(self.cfg, b - a) for a, b in self.groups]
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def step(self, values):
        if self._pool is None:
            return hybrid_step(self.banks[0], values, self.cfg)[1]
        futures = [
            self._pool.submit(hybrid_step, bank, values[a:b], self.cfg)
            for bank, (a, b) in zip(self.banks, self.groups)
        ]
        return np.concatenate([f.result()[1] for f in futures])


def process_frame(state, sample, cfg=None, project=True):
    """Filter one frame; returns ``(state, filtered_sample)``.

    Weights are additionally mapped onto the feasible set with
    :func:`~facecap.blendshape.clamp_project` unless ``project`` is false.
    """
    if cfg is not None and cfg != state.cfg:
        raise ConfigError("config differs from the one the state was built with")
    if sample.n_weights != state.n_weights or sample.n_landmarks != state.n_landmarks:
        raise ChannelCountMismatch(
            f"frame {sample.frame}: expected {state.n_weights} weights / {state.n_landmarks} "
            f"landmarks, got {sample.n_weights} / {sample.n_landmarks}"
        )
    if state.last_frame is not None and sample.frame <= state.last_frame:
        raise NonMonotoneFrame(f"frame {sample.frame} does not follow {state.last_frame}")
    values = sample.channels()
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"frame {sample.frame} contains non-finite values")
    out = state.step(values)
    state.frames += 1
    state.last_frame = sample.frame
    filtered = FrameSample.from_channels(sample.frame, sample.t, out, state.n_weights)
    if project and state.n_weights:
        filtered.weights = clamp_project(filtered.weights)
    return state, filtered


def run_stream(samples, cfg=None, n_weights=None, n_landmarks=None, project=True, threads=1):
    """Filter a sequence of frames; returns ``(filtered, per_frame_seconds)``."""
    samples = list(samples)
    if n_weights is None:
        n_weights = samples[0].n_weights if samples else N_ACTION_UNITS
    if n_landmarks is None:
        n_landmarks = samples[0].n_landmarks if samples else N_LANDMARKS
    state = PipelineState(cfg, n_weights, n_landmarks, threads)
    out, timings = [], []
    try:
        for s in samples:
            t0 = time.perf_counter()
            _, f = process_frame(state, s, project=project)
            timings.append(time.perf_counter() - t0)
            out.append(f)
    finally:
        state.close()
    return out, np.array(timings)


def stack_channels(samples):
    if not samples:
        return np.zeros((0, 0))
    return np.stack([s.channels() for s in samples])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class JitterReport:
    """Smoothing-quality and timing summary for one run.

    ``jitter_ratio`` is the largest per-channel ratio of filtered to raw
    second-difference energy.  ``peak_retention`` is the smallest per-channel
    ratio of filtered to reference excursion above the reference minimum.
    ``lag`` is the shift in frames (``>= 0``) maximizing the channel-summed
    correlation between reference and filtered curves.
    """

    frames: int
    channels: int
    jitter_raw: list
    jitter_filtered: list
    jitter_ratio: float
    jitter_ratio_mean: float
    lag: int
    peak_retention: float
    peak_retention_mean: float
    mean_ms: float | None = None
    max_ms: float | None = None
    p99_ms: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def second_difference_energy(x):
    """Per-column ``sum((x[t+1] - 2 x[t] + x[t-1])**2)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        return np.zeros(x.shape[1:]) if x.ndim > 1 else 0.0
    return np.sum(np.diff(x, n=2, axis=0) ** 2, axis=0)


def estimate_lag(reference, filtered, max_lag=10):
    """Non-negative shift ``k`` maximizing the summed per-channel correlation
    between ``reference[t]`` and ``filtered[t + k]``."""
    ref = np.asarray(reference, dtype=np.float64)
    fil = np.asarray(filtered, dtype=np.float64)
    if ref.ndim == 1:
        ref, fil = ref[:, None], fil[:, None]
    T = ref.shape[0]
    best, best_k = -np.inf, 0
    for k in range(0, min(max_lag, T - 2) + 1):
        a = ref[:T - k] - ref[:T - k].mean(axis=0)
        b = fil[k:] - fil[k:].mean(axis=0)
        den = np.sqrt(np.sum(a * a, axis=0) * np.sum(b * b, axis=0))
        ok = den > 0
        if not np.any(ok):
            continue
        score = float(np.sum(np.sum(a * b, axis=0)[ok] / den[ok]))
        if score > best + 1e-12:
            best, best_k = score, k
    return best_k


def peak_retention(reference, filtered):
    ref = np.asarray(reference, dtype=np.float64)
    fil = np.asarray(filtered, dtype=np.float64)
    if ref.ndim == 1:
        ref, fil = ref[:, None], fil[:, None]
    lo = ref.min(axis=0)
    span = ref.max(axis=0) - lo
    ok = span > 0
    if not np.any(ok):
        return np.ones(0)
    return (fil.max(axis=0)[ok] - lo[ok]) / span[ok]


def evaluate_run(raw, filtered, timings=None, reference=None, max_lag=10):
    """Compare filtered curves against the raw input.

    ``raw`` and ``filtered`` are ``(T, C)`` arrays (or lists of
    :class:`FrameSample`).  ``reference`` defaults to ``raw``; pass the clean
    signal when it is known so lag and peak retention measure against truth.
    ``timings`` are per-frame wall times in seconds.
    """
    raw = _as_matrix(raw)
    filtered = _as_matrix(filtered)
    if raw.shape != filtered.shape:
        raise LengthMismatch(f"raw {raw.shape} and filtered {filtered.shape} differ")
    ref = raw if reference is None else _as_matrix(reference)
    if ref.shape != raw.shape:
        raise LengthMismatch(f"reference {ref.shape} and raw {raw.shape} differ")

    T, C = raw.shape
    e_raw = np.atleast_1d(second_difference_energy(raw)) if T else np.zeros(C)
    e_fil = np.atleast_1d(second_difference_energy(filtered)) if T else np.zeros(C)
    ok = e_raw > 0
    if np.any(ok):
        ratios = e_fil[ok] / e_raw[ok]
        jr, jr_mean = float(ratios.max()), float(ratios.mean())
    else:
        jr = jr_mean = 1.0 if not np.any(e_fil > 0) else math.inf

    retention = peak_retention(ref, filtered) if T else np.ones(0)
    pr = float(retention.min()) if retention.size else 1.0
    pr_mean = float(retention.mean()) if retention.size else 1.0

    rep = JitterReport(
        frames=T,
        channels=C,
        jitter_raw=[float(v) for v in e_raw],
        jitter_filtered=[float(v) for v in e_fil],
        jitter_ratio=jr,
        jitter_ratio_mean=jr_mean,
        lag=estimate_lag(ref, filtered, max_lag) if T > 2 else 0,
        peak_retention=pr,
        peak_retention_mean=pr_mean,
    )
    if timings is not None and len(timings):
        ms = np.asarray(timings, dtype=np.float64) * 1e3
        rep.mean_ms = float(ms.mean())
        rep.max_ms = float(ms.max())
        rep.p99_ms = float(np.percentile(ms, 99))
    return rep


def _as_matrix(x):
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], FrameSample):
        return stack_channels(x)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.size == 0:
        return a.reshape(a.shape[0], -1)
    return a


def write_curves(directory, raw, filtered, names=None):
    """Write one ``raw,filtered`` CSV per channel for plotting."""
    raw, filtered = _as_matrix(raw), _as_matrix(filtered)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = names or [f"c{i}" for i in range(raw.shape[1])]
    for i, name in enumerate(names):
        with open(d / f"{name}.csv", "w") as fh:
            fh.write("frame,raw,filtered\n")
            for k, (a, b) in enumerate(zip(raw[:, i], filtered[:, i])):
                fh.write(f"{k},{float(a)!r},{float(b)!r}\n")


def channel_names(n_weights, n_landmarks):
    names = [f"w{i}" for i in range(n_weights)]
    for k in range(n_landmarks):
        names += [f"x{k}", f"y{k}"]
    return names


# ---------------------------------------------------------------------------
# Synthetic streams
# ---------------------------------------------------------------------------

WAVES = ("step", "pulse", "sine", "mixture")


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic stream settings.

    Weight curves are scaled by one common factor so the clean weights never
    sum past one.  Landmarks sit at random pixel positions and move by
    ``landmark_amplitude`` pixels.  ``sigma`` is the noise standard deviation
    relative to each channel's amplitude.
    """

    wave: str = "pulse"
    sigma: float = 0.05
    frames: int = 600
    n_weights: int = N_ACTION_UNITS
    n_landmarks: int = N_LANDMARKS
    fps: float = 60.0
    landmark_amplitude: float = 8.0

    def __post_init__(self):
        if self.wave not in WAVES:
            raise ConfigError(f"wave must be one of {WAVES}, got {self.wave!r}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma!r}")
        if self.frames < 0 or self.n_weights < 0 or self.n_landmarks < 0:
            raise ConfigError("frames and channel counts must be >= 0")
        if not self.fps > 0:
            raise ConfigError("fps must be > 0")


def _shapes(wave, T, C, rng):
    """``(T, C)`` curves with values in ``[0, 1]``."""
    t = np.arange(T, dtype=np.float64)[:, None]
    if wave == "pulse":
        center = rng.uniform(0.3, 0.7, C) * T
        width = rng.uniform(0.8, 1.2, C) * max(T / 24.0, 1.0)
        return np.exp(-0.5 * ((t - center) / width) ** 2)
    if wave == "step":
        at = np.floor(rng.uniform(0.3, 0.7, C) * T)
        return (t >= at).astype(np.float64)
    if wave == "sine":
        period = rng.uniform(90.0, 150.0, C)
        phase = rng.uniform(0.0, 2 * np.pi, C)
        return 0.5 + 0.5 * np.sin(2 * np.pi * t / period + phase)
    return 0.5 * _shapes("pulse", T, C, rng) + 0.5 * _shapes("sine", T, C, rng)


def synth_arrays(spec, seed=0):
    """Noisy and clean ``(T, C)`` channel arrays plus per-channel amplitudes."""
    rng = np.random.default_rng(seed)
    T, n, L = spec.frames, spec.n_weights, spec.n_landmarks
    w = _shapes(spec.wave, T, n, rng)
    total = w.sum(axis=1).max() if T and n else 0.0
    w_amp = 1.0 / max(1.0, total)
    w = w * w_amp
    base = rng.uniform(200.0, 800.0, 2 * L)
    lm = base + spec.landmark_amplitude * _shapes(spec.wave, T, 2 * L, rng)
    clean = np.concatenate([w, lm], axis=1) if T else np.zeros((0, n + 2 * L))
    amp = np.concatenate([np.full(n, w_amp), np.full(2 * L, spec.landmark_amplitude)])
    noise = rng.normal(0.0, 1.0, clean.shape) * (spec.sigma * amp)
    return clean + noise, clean, amp


def synth_stream(spec, seed=0):
    """Noisy and clean lists of :class:`FrameSample` (reproducible from ``seed``)."""
    noisy, clean, _ = synth_arrays(spec, seed)

    def frames(a):
        return [
            FrameSample.from_channels(k, k / spec.fps, a[k], spec.n_weights)
            for k in range(a.shape[0])
        ]

    return frames(noisy), frames(clean)


def benchmark(frames=2000, n_weights=N_ACTION_UNITS, n_landmarks=N_LANDMARKS, cfg=None,
              threads=1, seed=0, repeats=1):
    """Time the filter pipeline on a synthetic stream.

    Returns a dict with frames/s over the whole run and per-frame latency
    statistics in milliseconds.  The best of ``repeats`` runs is reported.
    """
    noisy, _ = synth_stream(
        SynthSpec(wave="mixture", frames=frames, n_weights=n_weights, n_landmarks=n_landmarks),
        seed,
    )
    best = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out, timings = run_stream(noisy, cfg, n_weights, n_landmarks, threads=threads)
        wall = time.perf_counter() - t0
        if best is None or wall < best[0]:
            best = (wall, timings)
    wall, timings = best
    ms = timings * 1e3 if len(timings) else np.zeros(1)
    return {
        "frames": len(noisy),
        "channels": n_weights + 2 * n_landmarks,
        "threads": threads,
        "wall_s": wall,
        "frames_per_s": len(noisy) / wall if wall > 0 else math.inf,
        "mean_ms": float(ms.mean()),
        "p99_ms": float(np.percentile(ms, 99)),
        "max_ms": float(ms.max()),
    }
