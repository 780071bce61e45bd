"""Blendshape expression model: a face mesh as a weighted sum of target shapes.

Weights are stored for the ``n`` non-neutral shapes only.  The neutral
weight ``e0 = 1 - sum(e)`` is derived whenever the full ``n + 1`` vector is
needed, so all weights always sum to one.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    NonFinite,
    ParseError,
    TopologyMismatch,
)

N_ACTION_UNITS = 52
SIMPLEX_TOL = 1e-9


def _as_vector(values, name="weights"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contain NaN or infinite values")
    return arr


def complete_weights(nonneutral):
    """Return the ``n + 1`` weight vector ``[e0, e1, ..., en]``.

    Raises
    ------
    ConstraintViolation
        If any weight lies outside ``[0, 1]`` or the weights sum past one,
        beyond a tolerance of 1e-9.
    """
    e = _as_vector(nonneutral)
    if np.any(e < -SIMPLEX_TOL) or np.any(e > 1.0 + SIMPLEX_TOL):
        bad = int(np.flatnonzero((e < -SIMPLEX_TOL) | (e > 1.0 + SIMPLEX_TOL))[0])
        raise ConstraintViolation(f"weight e{bad + 1} = {e[bad]!r} outside [0, 1]")
    total = float(np.sum(e))
    if total > 1.0 + SIMPLEX_TOL:
        raise ConstraintViolation(f"non-neutral weights sum to {total!r} > 1")
    out = np.empty(e.size + 1)
    out[0] = 1.0 - total
    out[1:] = e
    return out


def clamp_project(raw):
    """Map an unconstrained weight vector onto the feasible set.

    Each value is clamped to ``[0, 1]``; if the clamped values still sum past
    one they are rescaled by ``1 / sum``.
    """
    x = _as_vector(raw, "raw weights")
    x = np.clip(x, 0.0, 1.0)
    total = x.sum()
    if total > 1.0:
        x = x / total
        # rounding can leave the sum a few ulps above 1
        while x.sum() > 1.0:
            x = np.nextafter(x, 0.0)
    return x


@dataclass(frozen=True)
class ExpressionWeights:
    """Validated non-neutral blend weights ``e1..en``."""

    nonneutral: np.ndarray

    def __post_init__(self):
        e = _as_vector(self.nonneutral).copy()
        complete_weights(e)
        e.setflags(write=False)
        object.__setattr__(self, "nonneutral", e)

    @classmethod
    def neutral(cls, n=N_ACTION_UNITS):
        return cls(np.zeros(n))

    @classmethod
    def from_raw(cls, raw):
        return cls(clamp_project(raw))

    @property
    def n(self):
        return self.nonneutral.size

    @property
    def e0(self):
        return 1.0 - float(self.nonneutral.sum())

    def complete(self):
        return complete_weights(self.nonneutral)


@dataclass(frozen=True)
class BlendshapeBasis:
    """Neutral face plus ``n`` absolute target shapes, shape ``(n + 1, V, 3)``."""

    shapes: np.ndarray

    def __post_init__(self):
        s = np.array(self.shapes, dtype=np.float64)
        if s.ndim != 3 or s.shape[2] != 3:
            raise DimensionMismatch(f"basis must have shape (n+1, V, 3), got {s.shape}")
        if s.shape[0] < 2:
            raise DimensionMismatch("basis needs a neutral shape and at least one target")
        if s.shape[1] < 1:
            raise DimensionMismatch("basis meshes need at least one vertex")
        if not np.all(np.isfinite(s)):
            raise NonFinite("basis contains non-finite vertex positions")
        s.setflags(write=False)
        object.__setattr__(self, "shapes", s)

    @classmethod
    def from_meshes(cls, meshes):
        counts = [np.asarray(m).shape[0] for m in meshes]
        if len(set(counts)) > 1:
            raise TopologyMismatch(f"vertex counts differ across shapes: {counts}")
        return cls(np.stack([np.asarray(m, dtype=np.float64) for m in meshes]))

    @property
    def n(self):
        return self.shapes.shape[0] - 1

    @property
    def n_vertices(self):
        return self.shapes.shape[1]

    @property
    def neutral(self):
        return self.shapes[0]


def evaluate(basis, weights):
    """Evaluate the mesh ``F = sum_i e_i * b_i`` for the given weights.

    ``weights`` is either an :class:`ExpressionWeights` or an explicit
    ``n + 1`` vector that already includes ``e0``.
    """
    if isinstance(weights, ExpressionWeights):
        full = weights.complete()
    else:
        full = _as_vector(weights)
    if full.size != basis.n + 1:
        raise DimensionMismatch(
            f"basis has {basis.n + 1} shapes but {full.size} weights were given"
        )
    return np.tensordot(full, basis.shapes, axes=(0, 0))


def save_basis(basis, path):
    """Write ``basis`` in the plain-text ``nshapes V`` / ``x y z`` format."""
    s = basis.shapes
    with open(path, "w") as fh:
        fh.write(f"{s.shape[0]} {s.shape[1]}\n")
        for mesh in s:
            for x, y, z in mesh:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_basis(path, format="text"):
    """Read a basis file written by :func:`save_basis`.

    Header line ``nshapes V`` is followed by ``nshapes`` blocks of ``V``
    whitespace-separated ``x y z`` rows.  Shape 0 is the neutral face.
    """
    if format != "text":
        raise ValueError(f"unsupported basis format {format!r}")
    lines = Path(path).read_text().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise ParseError("empty basis file", line=1)
    lineno, head = rows[0]
    if len(head) != 2:
        raise ParseError("header must be 'nshapes V'", line=lineno)
    try:
        nshapes, nverts = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError("header values must be integers", line=lineno) from None
    if nshapes < 2 or nverts < 1:
        raise ParseError(f"invalid header counts {nshapes} {nverts}", line=lineno)

    body = rows[1:]
    expected = nshapes * nverts
    if len(body) != expected:
        raise TopologyMismatch(
            f"expected {nshapes} shapes x {nverts} vertices = {expected} rows, "
            f"found {len(body)}"
        )
    shapes = np.empty((nshapes, nverts, 3))
    for k, (lineno, tok) in enumerate(body):
        shape_idx, v = divmod(k, nverts)
        if len(tok) != 3:
            raise ParseError(
                f"expected 3 coordinates, got {len(tok)}", line=lineno, shape=shape_idx
            )
        for c, t in enumerate(tok):
            try:
                val = float(t)
            except ValueError:
                raise ParseError(
                    f"bad number {t!r}", line=lineno, column=c + 1, shape=shape_idx
                ) from None
            if not np.isfinite(val):
                raise ParseError(
                    f"non-finite value {t!r}", line=lineno, column=c + 1, shape=shape_idx
                )
            shapes[shape_idx, v, c] = val
    return BlendshapeBasis(shapes)
