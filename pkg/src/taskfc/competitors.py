"""Baseline connectivity estimators.

Each method produces one value in ``[0, 1]`` per subject and aggregates them
by mean and by median.  Subjects for which a method is undefined (e.g. a
constant series) are excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .bss_amuse import task_regressor
from .errors import EstimationFailedError, InvalidArgumentError, RankDeficientError
from .ptfce import BoldPanel
from .signal_core import CANONICAL_HRF, FrequencyBand, HrfSpec, SampledSignal

METHODS = ("naive_pearson", "task_pearson", "beta_series", "coherence")


@dataclass(frozen=True, eq=False)
class MethodEstimate:
    method: str
    per_subject: np.ndarray  # NaN for excluded subjects
    mean_aggregate: float
    median_aggregate: float
    excluded: int = 0
    curve: tuple | None = None  # (freqs, subject-mean coherence) for coherence

    def aggregate(self, how: str) -> float:
        if how == "mean":
            return self.mean_aggregate
        if how == "median":
            return self.median_aggregate
        raise InvalidArgumentError(f"aggregate must be 'mean' or 'median', got {how!r}")


def _finish(method: str, values: np.ndarray, curve=None) -> MethodEstimate:
    values = np.asarray(values, dtype=float)
    kept = values[np.isfinite(values)]
    if kept.size == 0:
        raise EstimationFailedError(f"{method}: no subject produced a value")
    return MethodEstimate(
        method, values, float(np.mean(kept)), float(np.median(kept)), int(values.size - kept.size), curve
    )


def _abs_pearson(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise |Pearson correlation|; NaN where either row is constant."""
    # Contiguous rows keep the summation order, and so the result bits,
    # independent of how the caller sliced the panel.
    x, y = np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=float)
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean(axis=-1, keepdims=True)
    sxx = np.sum(xc * xc, axis=-1)
    syy = np.sum(yc * yc, axis=-1)
    num = np.abs(np.sum(xc * yc, axis=-1))
    ok = (sxx > 0) & (syy > 0)
    out = np.full(x.shape[:-1], np.nan)
    out[ok] = np.clip(num[ok] / np.sqrt(sxx[ok] * syy[ok]), 0.0, 1.0)
    return out


def _pair(panel: BoldPanel, k, l):
    ik, il = panel.node_index(k), panel.node_index(l)
    if ik == il:
        raise InvalidArgumentError("the two nodes must differ")
    return panel.data[:, ik], panel.data[:, il]


def naive_pearson(panel: BoldPanel, k, l) -> MethodEstimate:
    """|Pearson correlation| over the whole series, per subject."""
    x, y = _pair(panel, k, l)
    return _finish("naive_pearson", _abs_pearson(x, y))


def task_pearson(panel: BoldPanel, k, l, stimulus: SampledSignal) -> MethodEstimate:
    """|Pearson correlation| over the samples where the stimulus is on."""
    active = stimulus.values > 0
    if active.sum() < 3:
        raise InvalidArgumentError("stimulus needs at least 3 active samples")
    x, y = _pair(panel, k, l)
    return _finish("task_pearson", _abs_pearson(x[:, active], y[:, active]))


def stimulus_blocks(stimulus: SampledSignal) -> list:
    """Maximal runs of active samples as ``(first, stop)`` index pairs.

    A run that wraps around the end of the grid is treated as two runs.
    """
    on = np.concatenate([[0], (stimulus.values > 0).astype(int), [0]])
    edges = np.flatnonzero(np.diff(on))
    return list(zip(edges[::2], edges[1::2]))


def block_design(stimulus: SampledSignal, hrf: HrfSpec) -> np.ndarray:
    """Columns: one convolved regressor per block, then an intercept."""
    cols = []
    for first, stop in stimulus_blocks(stimulus):
        block = np.zeros(stimulus.grid.num_points)
        block[first:stop] = 1.0
        cols.append(task_regressor(stimulus.with_values(block), hrf).values)
    cols.append(np.ones(stimulus.grid.num_points))
    return np.column_stack(cols)


def block_betas(series: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Least-squares block amplitudes (intercept dropped) for each row of ``series``."""
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        # Name the first column that is a combination of the earlier ones.
        for j in range(1, design.shape[1] + 1):
            if np.linalg.matrix_rank(design[:, :j]) < j:
                what = "intercept" if j == design.shape[1] else f"block {j}"
                raise RankDeficientError(f"design matrix is rank deficient at {what}")
    centred = series - series.mean(axis=-1, keepdims=True)
    coef, *_ = np.linalg.lstsq(design, centred.T, rcond=None)
    return coef[:-1].T


def beta_series(panel: BoldPanel, k, l, stimulus: SampledSignal,
                hrf_k: HrfSpec = CANONICAL_HRF, hrf_l: HrfSpec = CANONICAL_HRF) -> MethodEstimate:
    """|Correlation| of per-block amplitudes between the two nodes.

    With only two blocks the correlation of two points is always 1 in
    absolute value; that degenerate value is returned as is.
    """
    blocks = stimulus_blocks(stimulus)
    if len(blocks) < 2:
        raise InvalidArgumentError(f"need at least 2 stimulus blocks, found {len(blocks)}")
    x, y = _pair(panel, k, l)
    bx = block_betas(x, block_design(stimulus, hrf_k))
    by = block_betas(y, block_design(stimulus, hrf_l))
    return _finish("beta_series", _abs_pearson(bx, by))


def welch_segment(num_points: int) -> int:
    return min(128, num_points // 2)


def coherence_fc(panel: BoldPanel, k, l, band: FrequencyBand = FrequencyBand()) -> MethodEstimate:
    """Band median of Welch magnitude coherence, per subject.

    Hann-windowed segments of ``min(128, (T+1)//2)`` samples with 50% overlap.
    """
    grid = panel.grid
    if grid.num_points < 64:
        raise InvalidArgumentError("coherence needs at least 64 time points")
    band.check_against(grid)
    nperseg = welch_segment(grid.num_points)
    if (grid.num_points - nperseg) // (nperseg // 2) + 1 < 2:
        raise InvalidArgumentError("series too short for two Welch segments")
    x, y = _pair(panel, k, l)
    fs = 1.0 / grid.delta
    opts = dict(fs=fs, window="hann", nperseg=nperseg, noverlap=nperseg // 2, axis=-1)
    freqs, sxy = sps.csd(x, y, **opts)
    _, sxx = sps.welch(x, **opts)
    _, syy = sps.welch(y, **opts)
    inside = band.contains(freqs)
    if not inside.any():
        raise InvalidArgumentError("no Welch frequency inside the band")
    sxy, sxx, syy = sxy[:, inside], sxx[:, inside], syy[:, inside]
    ok = (sxx > 0) & (syy > 0)
    coh = np.full(sxy.shape, np.nan)
    coh[ok] = np.clip(np.abs(sxy[ok]) / np.sqrt(sxx[ok] * syy[ok]), 0.0, 1.0)
    per_subject = np.full(coh.shape[0], np.nan)
    for i, row in enumerate(coh):
        kept = row[np.isfinite(row)]
        if kept.size:
            per_subject[i] = np.median(kept)
    with np.errstate(all="ignore"):
        curve = (freqs[inside], np.nanmean(coh, axis=0))
    return _finish("coherence", per_subject, curve)
