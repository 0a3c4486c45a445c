"""Two-channel AMUSE separation and task/reference splitting of a BOLD trace.

AMUSE whitens the lag-0 covariance of the channels and then diagonalizes the
symmetrized covariance of the whitened channels at a positive lag.  All
moments are full-period circular averages, so a circular shift of both
channels shifts the recovered sources and leaves the mixing matrix unchanged.

The batched functions (``*_batch``) operate on stacks of subjects and are what
the estimator uses; the single-signal functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .signal_core import (
    HrfSpec,
    SampledSignal,
    _same_grid,
    canonical_hrf,
    circular_convolve,
)

GAP_TOLERANCE = 1e-10
SINGULAR_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class AmuseDecomposition:
    """Result of separating two channels.

    ``mixing @ [s1, s2]`` reproduces the demeaned input channels.
    ``task_source_index`` is 1-based and ``None`` until a regressor has been
    used to pick the task-driven source.
    """

    mixing: np.ndarray
    sources: tuple
    eigenvalue_gap: float
    task_source_index: int | None = None

    @property
    def identifiable(self) -> bool:
        return self.eigenvalue_gap >= GAP_TOLERANCE


@dataclass(frozen=True, eq=False)
class ReferenceExtraction:
    """A BOLD trace split into its task-locked part and the remainder."""

    task_component: SampledSignal
    reference: SampledSignal
    decomposition: AmuseDecomposition


@dataclass(frozen=True)
class BatchSeparation:
    mixing: np.ndarray  # (n, 2, 2)
    sources: np.ndarray  # (n, 2, m)
    eigenvalue_gap: np.ndarray  # (n,)


def lagged_covariance(x1: SampledSignal, x2: SampledSignal, lag_samples: int) -> np.ndarray:
    """2x2 matrix of circular lagged products of the demeaned channels.

    Entry ``(i, j)`` is ``mean_t x_i(t) x_j(t + lag)``.
    """
    _same_grid(x1, x2)
    x = np.stack([x1.values, x2.values])
    return _lagged_cov(x[None], int(lag_samples))[0]


def _lagged_cov(x: np.ndarray, lag: int) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    ahead = np.roll(x, -lag, axis=-1)
    return np.einsum("nit,njt->nij", x, ahead) / x.shape[-1]


def amuse_batch(channels: np.ndarray, lag_samples: int = 1) -> BatchSeparation:
    """Separate a stack of two-channel signals of shape ``(n, 2, m)``."""
    if lag_samples < 1:
        raise InvalidArgumentError(f"lag must be >= 1, got {lag_samples}")
    x = np.asarray(channels, dtype=float)
    x = x - x.mean(axis=-1, keepdims=True)
    m = x.shape[-1]

    cov0 = np.einsum("nit,njt->nij", x, x) / m
    evals, evecs = np.linalg.eigh(cov0)
    scale = np.maximum(np.trace(cov0, axis1=1, axis2=2), np.finfo(float).tiny)
    bad = np.flatnonzero(evals[:, 0] <= SINGULAR_TOLERANCE * scale)
    if bad.size:
        err = DegenerateInputError(
            f"lag-0 covariance is singular for item(s) {bad.tolist()[:10]}"
        )
        err.items = bad.tolist()
        raise err
    whitener = np.swapaxes(evecs, 1, 2) / np.sqrt(evals)[:, :, None]
    z = np.einsum("nij,njt->nit", whitener, x)

    lagged = np.einsum("nit,njt->nij", z, np.roll(z, -lag_samples, axis=-1)) / m
    lagged = 0.5 * (lagged + np.swapaxes(lagged, 1, 2))
    lvals, rot = np.linalg.eigh(lagged)
    order = np.argsort(-lvals, axis=1, kind="stable")
    lvals = np.take_along_axis(lvals, order, axis=1)
    rot = np.take_along_axis(rot, order[:, None, :], axis=2)

    unmix = np.einsum("nji,njk->nik", rot, whitener)
    sources = np.einsum("nij,njt->nit", unmix, x)
    mixing = np.linalg.inv(unmix)

    # Unit variance holds already (whitened then orthogonally rotated);
    # rescale anyway to absorb rounding, then fix signs.
    sd = np.sqrt(np.mean(sources**2, axis=-1))
    peak = np.take_along_axis(sources, np.argmax(np.abs(sources), axis=-1)[..., None], axis=-1)[..., 0]
    factor = np.where(peak < 0, -1.0, 1.0) / sd
    sources = sources * factor[..., None]
    mixing = mixing / factor[:, None, :]
    return BatchSeparation(mixing, sources, np.abs(lvals[:, 0] - lvals[:, 1]))


def amuse_decompose(x1: SampledSignal, x2: SampledSignal, lag_samples: int = 1) -> AmuseDecomposition:
    grid = _same_grid(x1, x2)
    sep = amuse_batch(np.stack([x1.values, x2.values])[None], lag_samples)
    return AmuseDecomposition(
        mixing=sep.mixing[0],
        sources=(SampledSignal(grid, sep.sources[0, 0]), SampledSignal(grid, sep.sources[0, 1])),
        eigenvalue_gap=float(sep.eigenvalue_gap[0]),
    )


def best_lag(x1: SampledSignal, x2: SampledSignal, max_lag: int = 10) -> int:
    """Lag in ``1..max_lag`` with the widest eigenvalue gap (first one on ties)."""
    gaps = [amuse_decompose(x1, x2, lag).eigenvalue_gap for lag in range(1, max_lag + 1)]
    return int(np.argmax(gaps)) + 1


def _abs_corr_with(sources: np.ndarray, regressor: np.ndarray) -> np.ndarray:
    """|Pearson correlation| of each source (…, 2, m) with one regressor (m,)."""
    g = regressor - regressor.mean()
    s = sources - sources.mean(axis=-1, keepdims=True)
    num = np.abs(s @ g)
    den = np.sqrt(np.sum(s * s, axis=-1) * (g @ g))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def _check_regressor(values: np.ndarray) -> None:
    if np.ptp(values) == 0:
        raise InvalidArgumentError("regressor is constant; cannot select a task source")


def select_task_source(decomp: AmuseDecomposition, regressor: SampledSignal) -> int:
    """1-based index of the source most correlated (in absolute value) with the regressor."""
    _check_regressor(regressor.values)
    s = np.stack([src.values for src in decomp.sources])
    corr = _abs_corr_with(s, regressor.values)
    return int(np.argmax(corr)) + 1


def task_regressor(stimulus: SampledSignal, hrf: HrfSpec) -> SampledSignal:
    """Normalized circular convolution of the stimulus with the sampled response."""
    return circular_convolve(stimulus, canonical_hrf(hrf, stimulus.grid))


def _shift_rows(data: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Row ``i`` of the output is ``data[i]`` circularly delayed by ``shifts[i]``."""
    m = data.shape[-1]
    idx = np.mod(np.arange(m)[None, :] - np.asarray(shifts)[:, None], m)
    return np.take_along_axis(data, idx, axis=-1)


@dataclass(frozen=True)
class BatchExtraction:
    task_component: np.ndarray  # (n, m), native time
    reference: np.ndarray  # (n, m)
    task_source_index: np.ndarray  # (n,), 1-based
    eigenvalue_gap: np.ndarray  # (n,)


def extract_references_batch(
    bold: np.ndarray, regressor: np.ndarray, shifts, lag_samples: int = 1
) -> BatchExtraction:
    """Split each row of ``bold`` (n, m) into task component and reference.

    ``regressor`` is the task regressor on native time; it is centred on its
    time average and delayed along with each subject's trace.
    """
    bold = np.asarray(bold, dtype=float)
    regressor = np.asarray(regressor, dtype=float)
    _check_regressor(regressor)
    n = bold.shape[0]
    shifts = np.broadcast_to(np.asarray(shifts, dtype=np.int64), (n,))

    centred = regressor - regressor.mean()
    # Channel 2 is rescaled to unit variance for conditioning; AMUSE outputs
    # do not depend on per-channel scale.
    centred = centred / np.sqrt(np.mean(centred**2))
    x1 = _shift_rows(bold, shifts)
    x2 = _shift_rows(np.broadcast_to(centred, bold.shape), shifts)
    sep = amuse_batch(np.stack([x1, x2], axis=1), lag_samples)

    corr = np.abs(np.einsum("nit,nt->ni", sep.sources - sep.sources.mean(-1, keepdims=True), x2))
    corr /= np.sqrt(np.sum((sep.sources - sep.sources.mean(-1, keepdims=True)) ** 2, axis=-1))
    chosen = np.argmax(corr, axis=1)
    rows = np.arange(n)
    task_shifted = sep.mixing[rows, 0, chosen][:, None] * sep.sources[rows, chosen]
    task = _shift_rows(task_shifted, -shifts)
    return BatchExtraction(task, bold - task, chosen + 1, sep.eigenvalue_gap)


def extract_reference(
    bold: SampledSignal,
    stimulus: SampledSignal,
    hrf: HrfSpec,
    shift_samples: int = 0,
    lag_samples: int = 1,
) -> ReferenceExtraction:
    """Remove the task-locked AMUSE component from a single BOLD trace."""
    grid = _same_grid(bold, stimulus)
    regressor = task_regressor(stimulus, hrf).values
    _check_regressor(regressor)
    shift = int(shift_samples)

    x1 = np.roll(bold.values, shift)
    centred = regressor - regressor.mean()
    x2 = np.roll(centred / np.sqrt(np.mean(centred**2)), shift)
    decomp = amuse_decompose(SampledSignal(grid, x1), SampledSignal(grid, x2), lag_samples)
    index = select_task_source(decomp, SampledSignal(grid, x2))
    decomp = AmuseDecomposition(decomp.mixing, decomp.sources, decomp.eigenvalue_gap, index)

    task_shifted = decomp.mixing[0, index - 1] * decomp.sources[index - 1].values
    task = np.roll(task_shifted, -shift)
    return ReferenceExtraction(
        task_component=SampledSignal(grid, task),
        reference=SampledSignal(grid, bold.values - task),
        decomposition=decomp,
    )
