"""Population-level task-evoked connectivity from BOLD panels.

For a pair of nodes the estimator

1. delays each subject's traces by an independent uniform circular shift,
2. removes the task-locked AMUSE component of every trace to obtain a
   reference trace,
3. averages lagged cross-products of the BOLD traces and of the reference
   traces over subjects and takes their difference,
4. forms the spectral ratio ``|A_kl| / sqrt(|A_kk A_ll|)`` of the Fourier
   transforms of those differences, and
5. reports the lower median of the ratio over a frequency band.

The ratio is evaluated either on a dense grid over the band (default) or
only at multiples of the fundamental frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .bss_amuse import GAP_TOLERANCE, _shift_rows, extract_references_batch, task_regressor
from .errors import DegenerateInputError, EstimationFailedError, InvalidArgumentError
from .signal_core import (
    CANONICAL_HRF,
    FrequencyBand,
    HrfSpec,
    SampledSignal,
    TimeGrid,
    dense_grid,
    dft_many,
    fourier_grid,
)

DROP_TOLERANCE = 1e-14
DEFAULT_OVERSAMPLE = 16
GRID_MODES = ("dense", "fourier")


@dataclass(frozen=True, eq=False)
class BoldPanel:
    """BOLD traces for ``n`` subjects and ``K`` nodes on a common grid."""

    grid: TimeGrid
    node_labels: tuple
    data: np.ndarray = field(repr=False)
    subject_ids: tuple = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 3:
            raise InvalidArgumentError(f"panel data must be 3-d (n, K, T+1), got {data.shape}")
        n, k, m = data.shape
        if n < 2 or k < 2:
            raise InvalidArgumentError(f"need at least 2 subjects and 2 nodes, got n={n}, K={k}")
        if m != self.grid.num_points:
            raise InvalidArgumentError(f"panel has {m} time points, grid has {self.grid.num_points}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("panel contains non-finite values")
        labels = tuple(str(x) for x in self.node_labels)
        if len(labels) != k or len(set(labels)) != k:
            raise InvalidArgumentError("node labels must be unique and match the node count")
        subjects = self.subject_ids
        subjects = tuple(f"s{i}" for i in range(n)) if subjects is None else tuple(str(s) for s in subjects)
        if len(subjects) != n:
            raise InvalidArgumentError("subject id count does not match the panel")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "node_labels", labels)
        object.__setattr__(self, "subject_ids", subjects)

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[1]

    def node_index(self, label) -> int:
        try:
            return self.node_labels.index(str(label))
        except ValueError:
            raise InvalidArgumentError(f"unknown node {label!r}; have {list(self.node_labels)}") from None

    def with_data(self, data) -> "BoldPanel":
        return BoldPanel(self.grid, self.node_labels, data, self.subject_ids)


@dataclass(frozen=True, eq=False)
class ShiftAssignment:
    shifts: np.ndarray
    seed: int


@dataclass(frozen=True, eq=False)
class AutocovDifference:
    """Subject-averaged lagged product of BOLD minus that of the references, per lag."""

    grid: TimeGrid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PtfcEstimate:
    freqs: np.ndarray
    curve: np.ndarray  # NaN where the frequency was dropped
    estimate: float
    band: FrequencyBand
    dropped_frequencies: int
    node_pair: tuple
    seed: int
    grid_mode: str = "dense"
    non_identifiable_subjects: int = 0

    def kept_values(self) -> np.ndarray:
        return self.curve[np.isfinite(self.curve)]

    def to_dict(self) -> dict:
        return {
            "node_pair": list(self.node_pair),
            "estimate": self.estimate,
            "band": [self.band.lower, self.band.upper],
            "grid_mode": self.grid_mode,
            "seed": self.seed,
            "dropped_frequencies": self.dropped_frequencies,
            "non_identifiable_subjects": self.non_identifiable_subjects,
            "curve": [
                {"freq": float(f), "value": (float(v) if np.isfinite(v) else None)}
                for f, v in zip(self.freqs, self.curve)
            ],
        }


def lower_median(values) -> float:
    ordered = np.sort(np.asarray(values, dtype=float))
    if ordered.size == 0:
        raise EstimationFailedError("median of an empty set")
    return float(ordered[(ordered.size - 1) // 2])


def draw_shifts(n: int, grid: TimeGrid, seed: int) -> ShiftAssignment:
    """Uniform circular shifts in ``0..T``, one keyed stream per subject."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    seed = rng.check_seed(seed)
    shifts = np.array(
        [rng.stream(seed, rng.SHIFTS, i).integers(0, grid.num_points) for i in range(n)],
        dtype=np.int64,
    )
    shifts.setflags(write=False)
    return ShiftAssignment(shifts, seed)


def _as_rows(x) -> np.ndarray:
    if isinstance(x, SampledSignal):
        return x.values[None]
    if len(x) and isinstance(x[0], SampledSignal):
        return np.stack([s.values for s in x])
    return np.atleast_2d(np.asarray(x, dtype=float))


def _autocov_values(yk, yl, rk, rl, shifts) -> np.ndarray:
    """Lag profile of the subject-averaged BOLD-minus-reference cross products.

    Per lag ``s`` this is ``mean_t mean_subj [Y_k(t) Y_l(t+s) - R_k(t) R_l(t+s)]``
    on the shifted traces.  Trace means enter only through a constant that is
    computed separately from the mean differences to avoid cancellation of
    large baselines.
    """
    yk, yl, rk, rl = (_shift_rows(a, shifts) for a in (yk, yl, rk, rl))
    m = yk.shape[-1]
    myk, myl, mrk, mrl = (a.mean(axis=-1) for a in (yk, yl, rk, rl))
    constant = np.mean((myk - mrk) * myl + mrk * (myl - mrl))

    def spectrum(a, mean):
        return np.fft.rfft(a - mean[:, None], axis=-1)

    fyk, fyl, frk, frl = spectrum(yk, myk), spectrum(yl, myl), spectrum(rk, mrk), spectrum(rl, mrl)
    cross = np.mean(np.conj(fyk) * fyl - np.conj(frk) * frl, axis=0)
    return np.fft.irfft(cross, n=m) / m + constant


def autocov_difference(yk, yl, rk, rl, shifts: ShiftAssignment | Sequence[int],
                       grid: TimeGrid | None = None) -> AutocovDifference:
    """Autocovariance difference for one node pair.

    Each of ``yk, yl, rk, rl`` is a list of per-subject :class:`SampledSignal`
    or an ``(n, T+1)`` array; plain arrays need ``grid``.
    """
    for group in (yk, yl, rk, rl):
        if isinstance(group, SampledSignal):
            grid = group.grid
        elif len(group) and isinstance(group[0], SampledSignal):
            grid = group[0].grid
    arrays = [_as_rows(a) for a in (yk, yl, rk, rl)]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise InvalidArgumentError(f"input shapes differ: {[a.shape for a in arrays]}")
    shift_values = np.asarray(getattr(shifts, "shifts", shifts), dtype=np.int64)
    if shift_values.shape != (shape[0],):
        raise InvalidArgumentError(f"need {shape[0]} shifts, got {shift_values.shape}")
    if grid is None:
        raise InvalidArgumentError("a time grid is required for plain array inputs")
    if grid.num_points != shape[1]:
        raise InvalidArgumentError(f"signals have {shape[1]} samples, grid has {grid.num_points}")
    return AutocovDifference(grid, _autocov_values(*arrays, shift_values))


def spectral_ratio(akl: AutocovDifference, akk: AutocovDifference, all_: AutocovDifference, freqs):
    """Ratio ``|A_kl| / sqrt(|A_kk A_ll|)`` at each frequency.

    Returns ``(freqs, values)``; frequencies whose denominator falls below
    the drop tolerance carry NaN.
    """
    grid = akl.grid
    if akk.grid != grid or all_.grid != grid:
        raise InvalidArgumentError("autocovariance differences live on different grids")
    freqs = np.asarray(freqs, dtype=float)
    return freqs, _ratio(np.stack([akl.values, akk.values, all_.values]), grid, freqs)


def _ratio(stack: np.ndarray, grid: TimeGrid, freqs: np.ndarray) -> np.ndarray:
    hats = dft_many(stack, grid, freqs)
    num = np.abs(hats[0])
    den = np.sqrt(np.abs(hats[1] * hats[2]))
    out = np.full(freqs.shape, np.nan)
    keep = den >= DROP_TOLERANCE
    out[keep] = num[keep] / den[keep]
    return out


def evaluation_freqs(grid: TimeGrid, band: FrequencyBand, grid_mode: str = "dense",
                     oversample: int = DEFAULT_OVERSAMPLE) -> np.ndarray:
    if grid_mode == "dense":
        return dense_grid(grid, band, oversample)
    if grid_mode == "fourier":
        return fourier_grid(grid, band)
    raise InvalidArgumentError(f"grid_mode must be one of {GRID_MODES}, got {grid_mode!r}")


@dataclass(frozen=True, eq=False)
class PanelReferences:
    """Per-node reference traces for a whole panel under one shift assignment."""

    shifts: ShiftAssignment
    references: np.ndarray  # (n, K, T+1)
    non_identifiable: np.ndarray  # (K,) count of subjects with a tiny eigenvalue gap


def panel_references(panel: BoldPanel, stimulus: SampledSignal, hrfs, seed: int,
                     nodes=None, lag_samples: int = 1) -> PanelReferences:
    """Extract references for the requested nodes (all by default).

    ``hrfs`` maps node label to :class:`HrfSpec`, or is a sequence aligned
    with ``panel.node_labels``.
    """
    if stimulus.grid != panel.grid:
        raise InvalidArgumentError("stimulus and panel grids differ")
    if np.ptp(stimulus.values) == 0:
        raise InvalidArgumentError("stimulus is constant")
    shifts = draw_shifts(panel.n_subjects, panel.grid, seed)
    indices = range(panel.n_nodes) if nodes is None else [panel.node_index(x) for x in nodes]
    refs = np.full(panel.data.shape, np.nan)
    flagged = np.zeros(panel.n_nodes, dtype=int)
    for k in indices:
        label = panel.node_labels[k]
        spec = hrfs.get(label, CANONICAL_HRF) if isinstance(hrfs, dict) else hrfs[k]
        regressor = task_regressor(stimulus, spec).values
        try:
            out = extract_references_batch(panel.data[:, k], regressor, shifts.shifts, lag_samples)
        except DegenerateInputError as exc:
            names = [panel.subject_ids[i] for i in getattr(exc, "items", [])]
            raise DegenerateInputError(f"node {label!r}, subject(s) {names}: {exc}") from exc
        refs[:, k] = out.reference
        flagged[k] = int(np.sum(out.eigenvalue_gap < GAP_TOLERANCE))
    return PanelReferences(shifts, refs, flagged)


def estimate_from_references(panel: BoldPanel, references: np.ndarray, k: int, l: int,
                             shifts, freqs: np.ndarray):
    """Curve and lower median for node indices ``k, l`` given reference traces."""
    y, r = panel.data, references
    shift_values = np.asarray(getattr(shifts, "shifts", shifts), dtype=np.int64)
    stack = np.stack([
        _autocov_values(y[:, k], y[:, l], r[:, k], r[:, l], shift_values),
        _autocov_values(y[:, k], y[:, k], r[:, k], r[:, k], shift_values),
        _autocov_values(y[:, l], y[:, l], r[:, l], r[:, l], shift_values),
    ])
    curve = _ratio(stack, panel.grid, freqs)
    kept = curve[np.isfinite(curve)]
    if kept.size == 0:
        raise EstimationFailedError("every frequency in the band was dropped")
    return curve, lower_median(kept)


def ptfce_estimate(
    panel: BoldPanel,
    k,
    l,
    stimulus: SampledSignal,
    hrf_k: HrfSpec = CANONICAL_HRF,
    hrf_l: HrfSpec = CANONICAL_HRF,
    band: FrequencyBand = FrequencyBand(),
    seed: int = 0,
    grid_mode: str = "dense",
    oversample: int = DEFAULT_OVERSAMPLE,
    lag_samples: int = 1,
) -> PtfcEstimate:
    """Task-evoked connectivity estimate between nodes ``k`` and ``l`` (labels)."""
    ik, il = panel.node_index(k), panel.node_index(l)
    if ik == il:
        raise InvalidArgumentError("the two nodes must differ")
    freqs = evaluation_freqs(panel.grid, band, grid_mode, oversample)
    hrfs = {panel.node_labels[ik]: hrf_k, panel.node_labels[il]: hrf_l}
    refs = panel_references(panel, stimulus, hrfs, seed, nodes=[k, l], lag_samples=lag_samples)
    curve, est = estimate_from_references(panel, refs.references, ik, il, refs.shifts, freqs)
    return PtfcEstimate(
        freqs=freqs,
        curve=curve,
        estimate=est,
        band=band,
        dropped_frequencies=int(np.sum(~np.isfinite(curve))),
        node_pair=(panel.node_labels[ik], panel.node_labels[il]),
        seed=refs.shifts.seed,
        grid_mode=grid_mode,
        non_identifiable_subjects=int(refs.non_identifiable[[ik, il]].sum()),
    )


@dataclass(frozen=True, eq=False)
class PtfcMatrix:
    labels: tuple
    values: np.ndarray  # NaN marks a failed pair
    failures: dict
    estimates: dict


def ptfce_matrix(
    panel: BoldPanel,
    stimulus: SampledSignal,
    hrfs=None,
    band: FrequencyBand = FrequencyBand(),
    seed: int = 0,
    grid_mode: str = "dense",
    oversample: int = DEFAULT_OVERSAMPLE,
    lag_samples: int = 1,
) -> PtfcMatrix:
    """All-pairs estimates with references extracted once per node."""
    hrfs = {} if hrfs is None else hrfs
    freqs = evaluation_freqs(panel.grid, band, grid_mode, oversample)
    refs = panel_references(panel, stimulus, hrfs, seed, lag_samples=lag_samples)
    size = panel.n_nodes
    values = np.eye(size)
    failures, estimates = {}, {}
    for a in range(size):
        for b in range(a + 1, size):
            pair = (panel.node_labels[a], panel.node_labels[b])
            try:
                curve, est = estimate_from_references(panel, refs.references, a, b, refs.shifts, freqs)
            except EstimationFailedError as exc:
                values[a, b] = values[b, a] = np.nan
                failures[pair] = str(exc)
                continue
            values[a, b] = values[b, a] = est
            estimates[pair] = PtfcEstimate(
                freqs, curve, est, band, int(np.sum(~np.isfinite(curve))), pair,
                refs.shifts.seed, grid_mode, int(refs.non_identifiable[[a, b]].sum()),
            )
    return PtfcMatrix(panel.node_labels, values, failures, estimates)
