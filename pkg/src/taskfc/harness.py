"""Monte Carlo experiments and agreement statistics.

Replication ``r`` of an experiment with seed ``s`` draws its data, its
circular shifts and its tie-breaking coins from streams keyed by ``(s, r)``,
so results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import os
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import competitors, rng
from .errors import InvalidArgumentError, TaskFCError
from .ptfce import (
    BoldPanel,
    draw_shifts,
    estimate_from_references,
    evaluation_freqs,
    panel_references,
    ptfce_matrix,
)
from .signal_core import CANONICAL_HRF, FrequencyBand, HrfSpec, SampledSignal
from .simgen import MechanismConfig, generate, standard_stimuli

CI_MULTIPLIER = 1.6449  # 0.95 quantile of the standard normal
IDENTIFICATION_TARGETS = (0.4, 0.6)

AGGREGATES = ("mean", "median")
ALL_METHODS = ("ptfce",) + tuple(f"{m}:{a}" for m in competitors.METHODS for a in AGGREGATES)


@dataclass(frozen=True)
class EstimatorSettings:
    """How ptFCE is run inside experiments."""

    hrf: HrfSpec = CANONICAL_HRF
    band: FrequencyBand = field(default_factory=FrequencyBand)
    grid_mode: str = "dense"
    oversample: int = 16
    lag_samples: int = 1


def _check_methods(methods) -> tuple:
    methods = tuple(methods)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown or not methods:
        raise InvalidArgumentError(f"unknown method(s) {unknown}; choose from {ALL_METHODS}")
    return methods


def pairwise_estimates(panel: BoldPanel, stimulus: SampledSignal, method: str, pairs,
                       settings: EstimatorSettings, seed: int) -> list:
    """Estimates of one method for several node-label pairs."""
    if method == "ptfce":
        nodes = sorted({x for pair in pairs for x in pair}, key=panel.node_index)
        freqs = evaluation_freqs(panel.grid, settings.band, settings.grid_mode, settings.oversample)
        hrfs = {label: settings.hrf for label in nodes}
        refs = panel_references(panel, stimulus, hrfs, seed, nodes=nodes, lag_samples=settings.lag_samples)
        out = []
        for a, b in pairs:
            _, est = estimate_from_references(
                panel, refs.references, panel.node_index(a), panel.node_index(b), refs.shifts, freqs
            )
            out.append(est)
        return out
    name, agg = method.split(":")
    results = []
    for a, b in pairs:
        if name == "naive_pearson":
            res = competitors.naive_pearson(panel, a, b)
        elif name == "task_pearson":
            res = competitors.task_pearson(panel, a, b, stimulus)
        elif name == "beta_series":
            res = competitors.beta_series(panel, a, b, stimulus, settings.hrf, settings.hrf)
        else:
            res = competitors.coherence_fc(panel, a, b, settings.band)
        results.append(res.aggregate(agg))
    return results


# --------------------------------------------------------------------------
# Identification of the stronger connection


@dataclass(frozen=True)
class MethodRate:
    method: str
    correct: int
    reps: int
    failures: int

    @property
    def rate(self) -> float:
        return self.correct / self.reps

    @property
    def half_width(self) -> float:
        p = self.rate
        return CI_MULTIPLIER * np.sqrt(p * (1.0 - p) / self.reps)


@dataclass(frozen=True)
class IdentificationReport:
    mechanism: str
    n: int
    reps: int
    seed: int
    rates: dict  # method -> MethodRate

    def rows(self) -> list:
        return [
            {"method": m, "mechanism": self.mechanism, "n": self.n, "reps": self.reps,
             "correct": r.correct, "rate": r.rate, "half_width": r.half_width, "failures": r.failures}
            for m, r in self.rates.items()
        ]


def decide(weak: float, strong: float, coin: float) -> bool:
    """True when the weak pair is ranked below the strong pair; ties go to the coin."""
    if weak == strong:
        return coin < 0.5
    return weak < strong


def _identification_rep(args):
    mechanism, n, rep, seed, methods, settings = args
    config = MechanismConfig(mechanism, n, IDENTIFICATION_TARGETS, seed=rng.derive_seed(seed, rng.REPLICATION, rep))
    data = generate(config)
    stimulus = standard_stimuli(config.grid)[0]
    coins = rng.stream(seed, rng.COIN, rep).random(len(methods))
    shift_seed = rng.derive_seed(seed, rng.SHIFTS, rep)
    rows = []
    for method, coin in zip(methods, coins):
        try:
            weak, strong = pairwise_estimates(
                data.panel, stimulus, method, [("node1", "node2"), ("node2", "node3")], settings, shift_seed
            )
            rows.append((rep, method, weak, strong, int(decide(weak, strong, coin)), 0))
        except TaskFCError:
            rows.append((rep, method, float("nan"), float("nan"), 0, 1))
    return rows


LOG_FIELDS = ("run", "rep", "method", "weak", "strong", "correct", "failed")


def run_fingerprint(mechanism: str, n: int, seed: int, settings: EstimatorSettings) -> str:
    """Short digest identifying the experiment a log row belongs to."""
    text = repr((mechanism, int(n), int(seed), settings))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _read_log(path: Path, methods, run: str) -> dict:
    done = {}
    if path is None or not path.exists():
        return done
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("run") != run:
                raise InvalidArgumentError(
                    f"replication log {path} belongs to a different experiment; remove it or change --out"
                )
            done.setdefault(int(row["rep"]), []).append(
                (int(row["rep"]), row["method"], float(row["weak"]), float(row["strong"]),
                 int(row["correct"]), int(row["failed"]))
            )
    return {r: rows for r, rows in done.items() if sorted(x[1] for x in rows) == sorted(methods)}


def _map(func, jobs, workers: int):
    if workers <= 1:
        return map(func, jobs)
    pool = ProcessPoolExecutor(max_workers=workers)
    return _closing_map(pool, func, jobs)


def _closing_map(pool, func, jobs):
    with pool:
        yield from pool.map(func, jobs, chunksize=max(1, len(jobs) // (8 * pool._max_workers)))


def identification_experiment(mechanism: str, n: int, reps: int, methods=("ptfce",), seed: int = 0,
                              settings: EstimatorSettings = EstimatorSettings(),
                              log_path=None, workers: int = 1) -> IdentificationReport:
    """Rate at which each method ranks pair (1,2) below pair (2,3).

    When ``log_path`` is given, one row per (replication, method) is appended
    as soon as a replication finishes, and replications already present in
    the file are reused instead of recomputed.
    """
    if mechanism not in ("m1", "m2"):
        raise InvalidArgumentError("identification runs on m1 or m2")
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    methods = _check_methods(methods)
    seed = rng.check_seed(seed)
    log_path = Path(log_path) if log_path is not None else None
    run = run_fingerprint(mechanism, n, seed, settings)
    done = _read_log(log_path, methods, run)
    todo = [(mechanism, n, r, seed, methods, settings) for r in range(reps) if r not in done]

    writer = None
    if log_path is not None:
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        fh = log_path.open("a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_FIELDS)
    try:
        for rows in _map(_identification_rep, todo, workers):
            done[rows[0][0]] = rows
            if writer is not None:
                writer.writerows([[run] + [repr(v) if isinstance(v, float) else v for v in row] for row in rows])
                fh.flush()
    finally:
        if writer is not None:
            fh.close()

    rates = {}
    for method in methods:
        picked = [row for r in range(reps) for row in done[r] if row[1] == method]
        rates[method] = MethodRate(method, sum(x[4] for x in picked), reps, sum(x[5] for x in picked))
    return IdentificationReport(mechanism, n, reps, seed, rates)


# --------------------------------------------------------------------------
# Bias, spread and noise dependence of ptFCE on two-node data


def _m0_rep(args):
    rho, n, rep, seed, noise_scale, settings, oracle = args
    config = MechanismConfig("m0", n, (rho,), noise_scale=noise_scale,
                             seed=rng.derive_seed(seed, rng.REPLICATION, rep))
    data = generate(config)
    shift_seed = rng.derive_seed(seed, rng.SHIFTS, rep)
    if oracle:
        return oracle_estimate(data, settings, shift_seed)
    stimulus = standard_stimuli(config.grid)[0]
    return pairwise_estimates(data.panel, stimulus, "ptfce", [("node1", "node2")], settings, shift_seed)[0]


def oracle_curve(data, settings: EstimatorSettings = EstimatorSettings(), seed: int = 0, k: int = 0, l: int = 1):
    """Spectral-ratio curve and band median computed from the true reference traces.

    The reference is the BOLD trace minus the time-centred task term, which
    is the component the estimator itself tries to remove.  Returns
    ``(freqs, curve, estimate)`` for node indices ``k, l``.
    """
    panel = data.panel
    task = data.task_terms - data.task_terms.mean(axis=-1, keepdims=True)
    refs = panel.data - task
    freqs = evaluation_freqs(panel.grid, settings.band, settings.grid_mode, settings.oversample)
    shifts = draw_shifts(panel.n_subjects, panel.grid, seed)
    curve, est = estimate_from_references(panel, refs, k, l, shifts, freqs)
    return freqs, curve, est


def oracle_estimate(data, settings: EstimatorSettings = EstimatorSettings(), seed: int = 0) -> float:
    """Band median of :func:`oracle_curve` for the first two nodes."""
    return oracle_curve(data, settings, seed)[2]


def _m0_estimates(rho, n, reps, seed, noise_scale, settings, oracle, workers):
    jobs = [(rho, n, r, seed, noise_scale, settings, oracle) for r in range(reps)]
    return np.array(list(_map(_m0_rep, jobs, workers)))


def bias_experiment(rhos, ns, reps: int, seed: int = 0, settings: EstimatorSettings = EstimatorSettings(),
                    workers: int = 1) -> list:
    """Rows ``{rho, n, mean, sd, relative_bias}`` of ptFCE on two-node data."""
    rows = []
    for i, rho in enumerate(rhos):
        for j, n in enumerate(ns):
            sub_seed = rng.derive_seed(seed, i, j)
            est = _m0_estimates(rho, n, reps, sub_seed, 1.0, settings, False, workers)
            mean = float(est.mean())
            rows.append({
                "rho": rho, "n": n, "reps": reps, "mean": mean,
                "sd": float(est.std(ddof=1)) if reps > 1 else 0.0,
                "relative_bias": (mean - rho) / rho if rho else float("nan"),
            })
    return rows


def noise_sweep(lambdas, rho: float, n: int, reps: int, seed: int = 0,
                settings: EstimatorSettings = EstimatorSettings(), oracle: bool = False,
                workers: int = 1) -> list:
    """Rows ``{lambda, mean, sd}``; the same replication seeds are reused for every noise level."""
    rows = []
    for lam in lambdas:
        if lam < 0:
            raise InvalidArgumentError("noise scale must be >= 0")
        est = _m0_estimates(rho, n, reps, seed, float(lam), settings, oracle, workers)
        rows.append({"lambda": float(lam), "rho": rho, "n": n, "reps": reps, "mean": float(est.mean()),
                     "sd": float(est.std(ddof=1)) if reps > 1 else 0.0})
    return rows


# --------------------------------------------------------------------------
# Agreement between methods


def minmax_standardize(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    lo, hi = np.min(x), np.max(x)
    if not hi > lo:
        raise InvalidArgumentError("cannot standardize a constant sequence")
    return (x - lo) / (hi - lo)


def threshold_classify(values, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(values, dtype=float) > threshold


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    z_statistic: float
    p_value: float


def cohens_kappa(a, b) -> KappaResult:
    """Cohen's kappa for two boolean ratings with a one-sided large-sample test."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InvalidArgumentError("need two boolean sequences of equal length >= 2")
    size = a.size
    # Integer counts and rational arithmetic give the correctly rounded kappa.
    agree = Fraction(int(np.count_nonzero(a == b)), size)
    pa = Fraction(int(np.count_nonzero(a)), size)
    pb = Fraction(int(np.count_nonzero(b)), size)
    expected = pa * pb + (1 - pa) * (1 - pb)
    if expected == 1:
        raise InvalidArgumentError("kappa is undefined when expected agreement is 1")
    kappa = float((agree - expected) / (1 - expected))
    p_o, p_e = float(agree), float(expected)
    se = np.sqrt(p_e / (size * (1.0 - p_e)))
    z = kappa / se if se > 0 else float("inf")
    return KappaResult(float(kappa), p_o, p_e, float(z), float(stats.norm.sf(z)))


@dataclass(frozen=True, eq=False)
class ComparisonResult:
    methods: tuple
    pairs: tuple
    raw: dict  # method -> array over pairs (NaN when failed)
    standardized: dict
    classified: dict
    kappa: np.ndarray  # methods x methods, NaN when undefined
    kappa_details: dict
    degenerate: tuple = ()


def compare_methods(panel: BoldPanel, stimulus: SampledSignal, methods, seed: int = 0,
                    settings: EstimatorSettings = EstimatorSettings(), threshold: float = 0.5) -> ComparisonResult:
    """Estimate every node pair with each method, standardize, classify and cross-tabulate.

    A method whose estimates are all equal is listed in ``degenerate``; its
    row and column of the kappa matrix stay NaN.
    """
    methods = _check_methods(methods)
    labels = panel.node_labels
    pairs = tuple((labels[a], labels[b]) for a in range(len(labels)) for b in range(a + 1, len(labels)))
    raw, std, cls = {}, {}, {}
    degenerate = []
    for method in methods:
        if method == "ptfce":
            mat = ptfce_matrix(panel, stimulus, {x: settings.hrf for x in labels}, settings.band, seed,
                               settings.grid_mode, settings.oversample, settings.lag_samples)
            vals = np.array([mat.values[panel.node_index(a), panel.node_index(b)] for a, b in pairs])
        else:
            vals = np.array(pairwise_estimates(panel, stimulus, method, pairs, settings, seed), dtype=float)
        raw[method] = vals
        try:
            std[method] = minmax_standardize(vals)
        except InvalidArgumentError:
            # Constant (or failed) estimates cannot be standardized; such a
            # method gets no classification and no kappa entries.
            std[method] = np.full(vals.shape, np.nan)
            degenerate.append(method)
            cls[method] = None
            continue
        cls[method] = threshold_classify(std[method], threshold)
    size = len(methods)
    kappa = np.full((size, size), np.nan)
    details = {}
    for i in range(size):
        for j in range(size):
            if cls[methods[i]] is None or cls[methods[j]] is None:
                continue
            try:
                res = cohens_kappa(cls[methods[i]], cls[methods[j]])
            except InvalidArgumentError:
                continue
            kappa[i, j] = res.kappa
            details[(methods[i], methods[j])] = res
    return ComparisonResult(methods, pairs, raw, std, cls, kappa, details, tuple(degenerate))


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
