"""Reproducible noise fields: spatially correlated simplex and white Gaussian.

The correlated field is multi-octave 2-D simplex noise.  Gradient directions
at lattice corners come from an integer hash (splitmix64 over the corner
coordinates and the stream key) instead of a shuffled permutation table, so a
given (seed, stream_index) pair yields a bit-identical field on every
platform.  Fields are standardised to empirical zero mean / unit variance so
they can be plugged in anywhere a unit-scale perturbation is expected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import combine, generator

_KINDS = ("simplex", "gaussian")

# Gustavson-style 2-D skew constants.
_F2 = 0.5 * (np.sqrt(3.0) - 1.0)
_G2 = (3.0 - np.sqrt(3.0)) / 6.0

# 8 lattice gradient directions (axis and diagonal).
_GRAD = np.array(
    [[1, 1], [-1, 1], [1, -1], [-1, -1], [1, 0], [-1, 0], [0, 1], [0, -1]],
    dtype=np.float64,
)

_U64 = np.uint64
_SPLIT_GOLDEN = _U64(0x9E3779B97F4A7C15)
_SPLIT_MIX1 = _U64(0xBF58476D1CE4E5B9)
_SPLIT_MIX2 = _U64(0x94D049BB133111EB)
_COORD_A = _U64(0xD6E8FEB86659FD93)
_COORD_B = _U64(0xCA5A826395121157)


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "simplex"
    octaves: int = 4
    base_frequency: float = 4.0  # cycles per image side at octave 0
    persistence: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.octaves < 1:
            raise ValueError(f"octaves must be >= 1, got {self.octaves}")
        if not (self.base_frequency > 0):
            raise ValueError("base_frequency must be positive")
        if not (0 < self.persistence <= 1):
            raise ValueError("persistence must lie in (0, 1]")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class NoiseField:
    """A sampled field plus the provenance needed to regenerate it."""

    values: np.ndarray  # (h, w) float64, empirically standardised
    kind: str
    seed: int
    stream_index: int


def _splitmix(x: np.ndarray) -> np.ndarray:
    """Vectorised splitmix64 finaliser on uint64 arrays."""
    with np.errstate(over="ignore"):
        x = (x + _SPLIT_GOLDEN)
        x = (x ^ (x >> _U64(30))) * _SPLIT_MIX1
        x = (x ^ (x >> _U64(27))) * _SPLIT_MIX2
        return x ^ (x >> _U64(31))


def _corner_gradients(ix: np.ndarray, iy: np.ndarray, key: int) -> np.ndarray:
    """Gradient index in [0, 8) for each lattice corner, from an integer hash."""
    a = ix.astype(np.int64).astype(np.uint64)
    b = iy.astype(np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix((a * _COORD_A) ^ (b * _COORD_B) ^ _U64(key & (2**64 - 1)))
    return (h >> _U64(61)).astype(np.intp)


def _simplex_layer(h: int, w: int, freq: float, key: int, ox: float, oy: float) -> np.ndarray:
    """One octave of raw 2-D simplex noise across an h-by-w pixel grid."""
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w * freq + ox
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h * freq + oy
    x, y = np.meshgrid(xs, ys)

    s = (x + y) * _F2
    i = np.floor(x + s)
    j = np.floor(y + s)
    t = (i + j) * _G2
    x0 = x - (i - t)
    y0 = y - (j - t)

    upper = x0 > y0
    i1 = np.where(upper, 1.0, 0.0)
    j1 = 1.0 - i1

    out = np.zeros_like(x)
    corners = (
        (np.zeros_like(i1), np.zeros_like(j1), x0, y0),
        (i1, j1, x0 - i1 + _G2, y0 - j1 + _G2),
        (np.ones_like(i1), np.ones_like(j1), x0 - 1.0 + 2.0 * _G2, y0 - 1.0 + 2.0 * _G2),
    )
    for di, dj, xk, yk in corners:
        fall = 0.5 - xk * xk - yk * yk
        mask = fall > 0
        fall = np.where(mask, fall, 0.0)
        gi = _corner_gradients(i + di, j + dj, key)
        g = _GRAD[gi]
        out += fall**4 * (g[..., 0] * xk + g[..., 1] * yk)
    return 70.0 * out


def sample_field(h: int, w: int, cfg: NoiseConfig, stream_index: int) -> NoiseField:
    """Draw the (deterministic) noise field for a given stream index.

    The same (cfg.seed, stream_index) pair always produces the same values;
    distinct stream indices give independent-looking fields.  Output is
    standardised: mean exactly 0, variance exactly 1 (population).
    """
    if h < 8 or w < 8:
        raise ValueError(f"field must be at least 8x8, got {h}x{w}")
    if stream_index < 0:
        raise ValueError("stream_index must be non-negative")
    key = combine(cfg.seed, stream_index)

    if cfg.kind == "gaussian":
        values = generator(key).standard_normal((h, w))
    else:
        values = np.zeros((h, w), dtype=np.float64)
        amp = 1.0
        for octave in range(cfg.octaves):
            okey = combine(key, octave + 1)
            # deterministic fractional offsets decorrelate octaves spatially
            # and keep pixel centres off the integer lattice
            ox = (okey & 0xFFFF) / 65536.0 * 64.0
            oy = ((okey >> 16) & 0xFFFF) / 65536.0 * 64.0
            freq = cfg.base_frequency * (2.0**octave)
            values += amp * _simplex_layer(h, w, freq, okey, ox, oy)
            amp *= cfg.persistence

    std = values.std()
    if std < 1e-12:
        raise RuntimeError("degenerate noise field (zero variance)")
    values = (values - values.mean()) / std
    return NoiseField(values=values, kind=cfg.kind, seed=cfg.seed, stream_index=stream_index)


def radial_power_spectrum(field: NoiseField | np.ndarray, n_bins: int = 8) -> np.ndarray:
    """Mean squared FFT magnitude binned by radial frequency, DC excluded.

    Bins are uniform in radius from 0 to the corner frequency hypot(.5, .5)
    in cycles/pixel.  Empty bins report 0.  Requires a square field.
    """
    values = field.values if isinstance(field, NoiseField) else np.asarray(field)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"square field required, got shape {values.shape}")
    if n_bins < 4:
        raise ValueError("n_bins must be >= 4")
    n = values.shape[0]
    power = np.abs(np.fft.fft2(values)) ** 2
    fr = np.fft.fftfreq(n)
    radius = np.hypot(*np.meshgrid(fr, fr))
    keep = np.ones_like(power, dtype=bool)
    keep[0, 0] = False  # DC
    r = radius[keep]
    p = power[keep]
    edges = np.linspace(0.0, np.hypot(0.5, 0.5) + 1e-12, n_bins + 1)
    out = np.zeros(n_bins)
    which = np.digitize(r, edges) - 1
    for b in range(n_bins):
        sel = which == b
        if np.any(sel):
            out[b] = p[sel].mean()
    return out


def lag1_autocorrelation(values: np.ndarray) -> float:
    """Mean of horizontal and vertical lag-1 Pearson correlations."""
    v = np.asarray(values, dtype=np.float64)
    v = v - v.mean()

    def _corr(a: np.ndarray, b: np.ndarray) -> float:
        num = float(np.mean(a * b))
        den = float(np.sqrt(np.mean(a * a) * np.mean(b * b)))
        return num / den if den > 0 else 0.0

    horiz = _corr(v[:, :-1], v[:, 1:])
    vert = _corr(v[:-1, :], v[1:, :])
    return 0.5 * (horiz + vert)
