"""Sampled signals on a circular time grid.

Everything here lives on the closed lattice ``t = tau * delta`` for
``tau = 0 .. num_points - 1`` with indices taken modulo ``num_points``.
Convolution and the discrete Fourier transform both carry a
``1 / num_points`` normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import EmptyBandError, InvalidArgumentError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform circular sampling lattice.

    ``delta`` is the sampling interval in seconds and ``num_points`` the
    number of samples in one period.
    """

    delta: float
    num_points: int

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta <= 0:
            raise InvalidArgumentError(f"delta must be positive, got {self.delta}")
        if int(self.num_points) != self.num_points or self.num_points < 2:
            raise InvalidArgumentError(
                f"num_points must be an integer >= 2, got {self.num_points}"
            )
        object.__setattr__(self, "num_points", int(self.num_points))

    @property
    def last_index(self) -> int:
        return self.num_points - 1

    @property
    def duration(self) -> float:
        """Length of one full period in seconds."""
        return self.num_points * self.delta

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_points) * self.delta

    @property
    def fundamental(self) -> float:
        """Lowest nonzero frequency resolved exactly by the grid, in Hz."""
        return 1.0 / self.duration

    def wrap(self, index):
        """Map any integer index onto ``0 .. num_points - 1``."""
        return np.mod(index, self.num_points)


DEFAULT_GRID = TimeGrid(0.72, 284)


def make_time_grid(delta: float, num_points: int) -> TimeGrid:
    return TimeGrid(delta, num_points)


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Real values attached to a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.shape[0] != self.grid.num_points:
            raise InvalidArgumentError(
                f"expected {self.grid.num_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("signal values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.grid.num_points

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values) -> "SampledSignal":
        return SampledSignal(self.grid, values)


@dataclass(frozen=True)
class HrfSpec:
    """Double-gamma hemodynamic response parameters.

    The response is a gamma density with shape ``a1`` and rate ``b1`` minus
    ``c`` times a gamma density with shape ``a2`` and rate ``b2``.
    ``latency`` (seconds) delays the whole response and must be a whole
    number of samples on the grid it is used with.
    """

    a1: float = 6.0
    a2: float = 12.0
    b1: float = 0.9
    b2: float = 0.9
    c: float = 0.35
    latency: float = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.c <= 1.0:
            raise InvalidArgumentError(f"c must lie in [0, 1], got {self.c}")
        if not np.isfinite(self.latency) or self.latency < 0:
            raise InvalidArgumentError(f"latency must be >= 0, got {self.latency}")

    def latency_samples(self, grid: TimeGrid) -> int:
        steps = self.latency / grid.delta
        rounded = int(round(steps))
        if abs(steps - rounded) > 1e-9:
            raise InvalidArgumentError(
                f"latency {self.latency}s is not a multiple of delta={grid.delta}"
            )
        return rounded


CANONICAL_HRF = HrfSpec()


@dataclass(frozen=True)
class FrequencyBand:
    """Open frequency interval ``(lower, upper)`` in Hz."""

    lower: float = 0.0
    upper: float = 0.15

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise InvalidArgumentError("band edges must be finite")
        if not 0.0 <= self.lower < self.upper:
            raise InvalidArgumentError(
                f"need 0 <= lower < upper, got ({self.lower}, {self.upper})"
            )

    def check_against(self, grid: TimeGrid) -> None:
        nyquist = 0.5 / grid.delta
        if self.upper > nyquist + 1e-12:
            raise InvalidArgumentError(
                f"band upper edge {self.upper} exceeds Nyquist {nyquist}"
            )

    def contains(self, freqs) -> np.ndarray:
        freqs = np.asarray(freqs, dtype=float)
        return (freqs > self.lower) & (freqs < self.upper)


def _same_grid(*signals: SampledSignal) -> TimeGrid:
    grid = signals[0].grid
    for sig in signals[1:]:
        if sig.grid != grid:
            raise InvalidArgumentError(f"grid mismatch: {grid} vs {sig.grid}")
    return grid


def boxcar_stimulus(intervals, grid: TimeGrid) -> SampledSignal:
    """Indicator of a union of half-open ``[start, end)`` intervals in seconds."""
    cleaned = sorted((float(a), float(b)) for a, b in intervals)
    for start, end in cleaned:
        if not (np.isfinite(start) and np.isfinite(end)) or end <= start:
            raise InvalidArgumentError(f"bad interval [{start}, {end})")
        if start < 0 or end > grid.duration + 1e-9:
            raise InvalidArgumentError(
                f"interval [{start}, {end}) outside [0, {grid.duration})"
            )
    for (_, prev_end), (next_start, _) in zip(cleaned, cleaned[1:]):
        if next_start < prev_end:
            raise InvalidArgumentError("stimulus intervals overlap")
    # Compare with a tiny tolerance so an edge that falls exactly on a sample
    # instant (e.g. 225 * 0.72 = 162) is classified as exact arithmetic would.
    times = grid.times
    tol = 1e-9 * max(1.0, grid.duration)
    values = np.zeros(grid.num_points)
    for start, end in cleaned:
        values[(times >= start - tol) & (times < end - tol)] = 1.0
    return SampledSignal(grid, values)


def double_gamma(times, spec: HrfSpec) -> np.ndarray:
    """Evaluate the double-gamma response at arbitrary times (seconds).

    The latency is applied here, so the response is zero for
    ``t <= spec.latency``.
    """
    t = np.asarray(times, dtype=float) - spec.latency
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    log_t = np.log(tp)
    first = np.exp(spec.a1 * np.log(spec.b1) + (spec.a1 - 1) * log_t - spec.b1 * tp - gammaln(spec.a1))
    second = np.exp(spec.a2 * np.log(spec.b2) + (spec.a2 - 1) * log_t - spec.b2 * tp - gammaln(spec.a2))
    out[pos] = first - spec.c * second
    return out


def canonical_hrf(spec: HrfSpec, grid: TimeGrid) -> SampledSignal:
    """Sample the double-gamma response on the grid (including its latency)."""
    spec.latency_samples(grid)
    return SampledSignal(grid, double_gamma(grid.times, spec))


def _cconv(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Normalized circular convolution along the last axis via the FFT."""
    m = f.shape[-1]
    return np.fft.irfft(np.fft.rfft(f, axis=-1) * np.fft.rfft(g, axis=-1), n=m, axis=-1) / m


def circular_convolve(f: SampledSignal, g: SampledSignal) -> SampledSignal:
    """``(1/(T+1)) sum_s f(s) g(t - s)`` with circular indexing."""
    grid = _same_grid(f, g)
    return SampledSignal(grid, _cconv(f.values, g.values))


def dft(f: SampledSignal, xi: float) -> complex:
    """Normalized Fourier transform at a single frequency (Hz)."""
    return complex(dft_many(f.values, f.grid, np.atleast_1d(xi))[0])


def dft_many(values: np.ndarray, grid: TimeGrid, freqs) -> np.ndarray:
    """Normalized Fourier transform of ``values`` (last axis) at each frequency."""
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    # Reduce frequencies to one period so the phase argument stays small.
    period = 1.0 / grid.delta
    reduced = np.mod(freqs, period)
    kernel = np.exp(-2j * np.pi * np.outer(reduced, grid.times))
    return values @ kernel.T / grid.num_points


def fourier_grid(grid: TimeGrid, band: FrequencyBand) -> np.ndarray:
    """Multiples ``j / ((T+1) delta)`` strictly inside ``band``, ascending."""
    return dense_grid(grid, band, oversample=1)


def dense_grid(grid: TimeGrid, band: FrequencyBand, oversample: int = 16) -> np.ndarray:
    """Uniform grid of spacing ``fundamental / oversample`` strictly inside ``band``.

    ``oversample=1`` gives the exact Fourier frequencies; larger values
    sample the continuous band more finely.
    """
    if int(oversample) != oversample or oversample < 1:
        raise InvalidArgumentError(f"oversample must be a positive integer, got {oversample}")
    band.check_against(grid)
    step = grid.fundamental / oversample
    first = int(np.floor(band.lower / step)) + 1
    last = int(np.ceil(band.upper / step)) - 1
    freqs = np.arange(first, last + 1) * step
    freqs = freqs[band.contains(freqs)]
    if freqs.size == 0:
        raise EmptyBandError(f"no grid frequency strictly inside ({band.lower}, {band.upper})")
    return freqs


def circular_shift(f: SampledSignal, lag_samples: int) -> SampledSignal:
    """``out(t) = f(t - lag)`` on the circular grid."""
    return SampledSignal(f.grid, np.roll(f.values, int(lag_samples)))


def time_average(f: SampledSignal) -> float:
    return float(np.mean(f.values))
