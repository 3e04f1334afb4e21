"""Stochastic quantizers and their integer wire encoding.

The switching quantizer rounds every coordinate stochastically onto one of
two interleaved grids:

* even iterations use ``{..., -l, 0, l, 2l, ...}``
* odd iterations use ``{..., -0.5l, 0.5l, 1.5l, ...}``

A value lying exactly on one grid is therefore always randomised on the
other, so the quantization noise can never vanish on two consecutive rounds.

Three baselines share the interface: ``level1_only`` (no switching),
``log_scale`` (unbiased rounding between powers of a base, zero kept exact)
and ``identity`` (infinite precision).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Scheme(str, enum.Enum):
    SWITCHING = "switching"
    LEVEL1_ONLY = "level1_only"
    LOG_SCALE = "log_scale"
    IDENTITY = "identity"


class Parity(enum.IntEnum):
    EVEN = 0
    ODD = 1

    @classmethod
    def of(cls, iteration: int) -> "Parity":
        return cls(int(iteration) % 2)


class NonFiniteInputError(ValueError):
    """Raised when a quantizer receives NaN or infinity (the iterate is corrupted)."""


@dataclass(frozen=True)
class QuantizerSpec:
    interval_ell: float
    scheme: Scheme = Scheme.SWITCHING
    bit_width: int = 9
    log_base: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (math.isfinite(self.interval_ell) and self.interval_ell > 0):
            raise ValueError(f"interval_ell must be > 0, got {self.interval_ell}")
        if int(self.bit_width) != self.bit_width or self.bit_width < 2:
            raise ValueError(f"bit_width must be an integer >= 2, got {self.bit_width}")
        if not self.log_base > 1:
            raise ValueError(f"log_base must be > 1, got {self.log_base}")

    @property
    def is_grid(self) -> bool:
        return self.scheme in (Scheme.SWITCHING, Scheme.LEVEL1_ONLY)

    @property
    def max_index(self) -> int:
        return 2 ** (self.bit_width - 1) - 1

    def parity_for(self, iteration: int) -> Parity:
        if self.scheme is Scheme.SWITCHING:
            return Parity.of(iteration)
        return Parity.EVEN

    def wire_bits_per_coord(self) -> int:
        return 64 if self.scheme is Scheme.IDENTITY else int(self.bit_width)


@dataclass(frozen=True)
class QuantizedVector:
    """Grid indices of a quantized vector.

    Coordinate ``j`` decodes to ``indices[j] * l`` on even parity and to
    ``(indices[j] + 0.5) * l`` on odd parity.
    """

    indices: np.ndarray
    parity: Parity
    interval_ell: float

    def values(self) -> np.ndarray:
        offset = 0.5 if self.parity is Parity.ODD else 0.0
        return (self.indices + offset) * self.interval_ell

    def saturate(self, bit_width: int) -> tuple["QuantizedVector", int]:
        """Clamp indices to the signed ``bit_width`` range; return the clamped
        vector and how many coordinates were clamped."""
        limit = 2 ** (bit_width - 1) - 1
        over = np.abs(self.indices) > limit
        n_over = int(np.count_nonzero(over))
        if not n_over:
            return self, 0
        clipped = np.clip(self.indices, -limit, limit)
        return QuantizedVector(clipped, self.parity, self.interval_ell), n_over

    def __len__(self):
        return len(self.indices)


def interval_for_bits(bound: float, bit_width: int) -> float:
    """Smallest interval whose grid covers ``[-bound, bound]`` on both parities
    without saturating a ``bit_width``-bit signed index."""
    # odd parity reaches (index + 0.5) * l, so one index of headroom
    return float(bound) / (2 ** (bit_width - 1) - 2)


def _check_finite(v):
    if not np.isfinite(v).all():
        raise NonFiniteInputError("quantizer input contains NaN or infinity")


def _grid_split(v: np.ndarray, parity: Parity, ell: float) -> tuple[np.ndarray, np.ndarray]:
    """Index of the grid point below ``v`` and the probability of rounding up."""
    t = v / ell
    if parity is Parity.EVEN:
        n = np.floor(t)
        return n, t - n
    n = np.floor(t + 0.5)
    return n - 1.0, t - n + 0.5


def _grid_indices(v: np.ndarray, parity: Parity, ell: float, u: np.ndarray) -> np.ndarray:
    lower, p = _grid_split(v, parity, ell)
    return (lower + (u < p)).astype(np.int64)


def _log_scale(v: np.ndarray, base: float, u: np.ndarray) -> np.ndarray:
    mag = np.abs(v)
    out = np.zeros_like(mag, dtype=float)
    nz = mag > 0
    if not nz.any():
        return out
    m = mag[nz]
    n = np.floor(np.log(m) / math.log(base))
    lo = base**n
    # guard the floor against log round-off on exact powers
    n = np.where(lo > m, n - 1, n)
    n = np.where(base ** (n + 1) <= m, n + 1, n)
    lo = base**n
    hi = base ** (n + 1)
    p = (m - lo) / (hi - lo)
    out[nz] = np.where(u[nz] < p, hi, lo)
    return np.sign(v) * out


def quantize_coord(v: float, parity: Parity, ell: float, rng: np.random.Generator) -> float:
    """Quantize one scalar onto the level set selected by ``parity``."""
    if not math.isfinite(v):
        raise NonFiniteInputError(f"cannot quantize non-finite value {v!r}")
    if not ell > 0:
        raise ValueError(f"ell must be > 0, got {ell}")
    parity = Parity(parity)
    idx = _grid_indices(np.array([v], dtype=float), parity, ell, rng.random(1))
    return float(QuantizedVector(idx, parity, ell).values()[0])


def quantize_vector(v, iteration_k: int, spec: QuantizerSpec, rng: np.random.Generator):
    """Draw one realization of the quantized vector.

    Returns a :class:`QuantizedVector` for the grid schemes and a float array
    for ``identity`` and ``log_scale``. Exactly ``len(v)`` uniforms are taken
    from ``rng`` for every scheme except ``identity``, which draws none.
    """
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    if spec.scheme is Scheme.IDENTITY:
        return v.copy()
    u = rng.random(v.shape)
    if spec.scheme is Scheme.LOG_SCALE:
        return _log_scale(v, spec.log_base, u)
    parity = spec.parity_for(iteration_k)
    return QuantizedVector(_grid_indices(v, parity, spec.interval_ell, u), parity, spec.interval_ell)


def quantize_values(v, parity: Parity, spec: QuantizerSpec, rng: np.random.Generator) -> np.ndarray:
    """Decoded quantizer output for an explicit parity (any array shape).

    Non-grid schemes ignore ``parity``.
    """
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    if spec.scheme is Scheme.IDENTITY:
        return v.copy()
    u = rng.random(v.shape)
    if spec.scheme is Scheme.LOG_SCALE:
        return _log_scale(v, spec.log_base, u)
    if spec.scheme is Scheme.LEVEL1_ONLY:
        parity = Parity.EVEN
    parity = Parity(parity)
    return QuantizedVector(_grid_indices(v, parity, spec.interval_ell, u), parity, spec.interval_ell).values()


def realize(x, iteration_k: int, spec: QuantizerSpec, uniforms) -> tuple[np.ndarray, int]:
    """Decoded outputs for a stack of vectors, given the uniforms each would draw.

    Row ``i`` equals ``quantize_vector(x[i], k, spec, rng_i)`` (after
    saturation to ``spec.bit_width``) when ``uniforms[i]`` is
    ``rng_i.random(d)``. Returns the values and the number of clamped
    coordinates.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if spec.scheme is Scheme.IDENTITY:
        return x.copy(), 0
    if spec.scheme is Scheme.LOG_SCALE:
        return _log_scale(x, spec.log_base, uniforms), 0
    parity = spec.parity_for(iteration_k)
    idx = _grid_indices(x, parity, spec.interval_ell, uniforms)
    limit = spec.max_index
    n_over = int(np.count_nonzero(np.abs(idx) > limit))
    if n_over:
        idx = np.clip(idx, -limit, limit)
    offset = 0.5 if parity is Parity.ODD else 0.0
    return (idx + offset) * spec.interval_ell, n_over


def empirical_moments(v, spec: QuantizerSpec, parity: Parity, n_samples: int,
                      rng: np.random.Generator, chunk: int = 20_000) -> tuple[np.ndarray, float]:
    """Sample mean of Q(v) and sample mean of ||Q(v) - v||^2 over ``n_samples`` draws.

    Draws the same uniforms, in the same order, as ``n_samples`` successive
    calls of :func:`quantize_values`. For the grid schemes each draw takes
    one of two values per coordinate, so both moments follow exactly from
    how often each coordinate rounded up.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    v = np.asarray(v, dtype=float).ravel()
    _check_finite(v)
    if spec.is_grid:
        par = Parity.EVEN if spec.scheme is Scheme.LEVEL1_ONLY else Parity(parity)
        lower, p = _grid_split(v, par, spec.interval_ell)
        ups = np.zeros(v.size, dtype=np.int64)
        done = 0
        while done < n_samples:
            m = min(chunk, n_samples - done)
            ups += np.count_nonzero(rng.random((m, v.size)) < p, axis=0)
            done += m
        offset = 0.5 if par is Parity.ODD else 0.0
        lo = (lower + offset) * spec.interval_ell
        hi = lo + spec.interval_ell
        mean = (lo * (n_samples - ups) + hi * ups) / n_samples
        sq = float(np.sum((n_samples - ups) * (lo - v) ** 2 + ups * (hi - v) ** 2))
        return mean, sq / n_samples
    total = np.zeros_like(v)
    sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        q = quantize_values(np.broadcast_to(v, (m, v.size)), parity, spec, rng)
        total += q.sum(axis=0)
        sq += float(((q - v) ** 2).sum())
        done += m
    return total / n_samples, sq / n_samples


class Codec:
    """Fixed-width signed packing of :class:`QuantizedVector` indices.

    Layout: one header byte (bit 0 = parity, bits 1-7 zero), then the
    indices as big-endian two's-complement fields of ``bit_width`` bits,
    zero-padded to a byte boundary. Indices outside
    ``[-(2**(b-1) - 1), 2**(b-1) - 1]`` are clamped and counted in
    :attr:`saturated`.
    """

    def __init__(self, bit_width: int):
        if bit_width < 2:
            raise ValueError("bit_width must be >= 2")
        self.bit_width = int(bit_width)
        self.saturated = 0

    @staticmethod
    def message_bytes(n_coords: int, bit_width: int) -> int:
        return 1 + math.ceil(n_coords * bit_width / 8)

    def encode(self, q: QuantizedVector) -> bytes:
        b = self.bit_width
        q, n_over = q.saturate(b)
        self.saturated += n_over
        raw = q.indices.astype(np.int64) & ((1 << b) - 1)
        shifts = np.arange(b - 1, -1, -1, dtype=np.int64)
        bits = ((raw[:, None] >> shifts) & 1).astype(np.uint8).ravel()
        header = bytes([int(q.parity) & 1])
        return header + np.packbits(bits).tobytes()

    def decode(self, data: bytes, n_coords: int, interval_ell: float) -> QuantizedVector:
        b = self.bit_width
        expected = self.message_bytes(n_coords, b)
        if len(data) != expected:
            raise ValueError(f"expected {expected} bytes for {n_coords} coords, got {len(data)}")
        header = data[0]
        if header & 0xFE:
            raise ValueError(f"reserved header bits set: {header:#04x}")
        bits = np.unpackbits(np.frombuffer(data[1:], dtype=np.uint8))[: n_coords * b]
        weights = 1 << np.arange(b - 1, -1, -1, dtype=np.int64)
        raw = bits.reshape(n_coords, b).astype(np.int64) @ weights
        idx = np.where(raw >= 1 << (b - 1), raw - (1 << b), raw)
        return QuantizedVector(idx, Parity(header & 1), interval_ell)


def encode(q: QuantizedVector, bit_width: int) -> bytes:
    return Codec(bit_width).encode(q)


def decode(data: bytes, n_coords: int, bit_width: int, interval_ell: float) -> QuantizedVector:
    return Codec(bit_width).decode(data, n_coords, interval_ell)
