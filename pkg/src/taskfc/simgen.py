"""Synthetic block-design BOLD panels with known task-evoked connectivity.

Three generators are provided:

* ``m0``: two nodes; subject-level task amplitudes are bivariate normal with
  correlation ``rho``; nuisance tasks and white noise are added.
* ``m1``: the three-node version of ``m0`` with a chain of correlations
  ``(rho12, rho23)`` and independent amplitudes for nodes 1 and 3.
* ``m2``: three nodes with unit task amplitude for everyone; connectivity
  lives in the noise, which is correlated across nodes only while the task
  of interest is on.

Task regressors are discrete circular convolutions of boxcars with the
node's double-gamma response scaled to unit peak, ``sum_s N(s) h(t - s)``,
times ``signal_gain``.

Every subject draws from its own keyed random stream, so any subset of
subjects is reproduced exactly by a larger run with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import InvalidArgumentError
from .ptfce import BoldPanel
from .signal_core import (
    DEFAULT_GRID,
    HrfSpec,
    SampledSignal,
    TimeGrid,
    boxcar_stimulus,
    canonical_hrf,
    circular_convolve,
)

BASELINE = 9000.0
NOISE_VARIANCE = 30.0
TASK_VARIANCES = (2.0, 3.0, 2.0)
NUISANCE_CORRELATION = 0.3

TASK_INTERVALS = ((86.5, 98.5), (162.0, 174.0))
NUISANCE_INTERVALS = (
    ((71.35, 83.35), (177.125, 189.125)),
    ((11.0, 23.0), (116.63, 128.63)),
    ((26.13, 38.13), (146.88, 158.88)),
    ((56.26, 68.26), (131.75, 143.75)),
)
MIN_SPAN = 204.0

# Node-specific responses used to generate data; nodes 1 and 3 share one.
NODE_HRFS = (
    HrfSpec(4.0, 10.0, 0.8, 0.8, 0.4),
    HrfSpec(8.0, 14.0, 1.0, 1.0, 0.3),
    HrfSpec(4.0, 10.0, 0.8, 0.8, 0.4),
)

MECHANISMS = ("m0", "m1", "m2")
HRF_SCALINGS = ("unit_peak", "density")


@dataclass(frozen=True)
class MechanismConfig:
    mechanism: str = "m1"
    n: int = 308
    rho: tuple = (0.4, 0.6)
    noise_scale: float = 1.0
    seed: int = 0
    grid: TimeGrid = field(default=DEFAULT_GRID)
    signal_gain: float = 1.0
    hrf_scaling: str = "unit_peak"

    def __post_init__(self):
        if self.hrf_scaling not in HRF_SCALINGS:
            raise InvalidArgumentError(f"hrf_scaling must be one of {HRF_SCALINGS}, got {self.hrf_scaling!r}")
        if self.mechanism not in MECHANISMS:
            raise InvalidArgumentError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        rho = tuple(float(r) for r in np.atleast_1d(self.rho))
        need = 1 if self.mechanism == "m0" else 2
        if len(rho) != need:
            raise InvalidArgumentError(f"{self.mechanism} needs {need} rho value(s), got {len(rho)}")
        if any(not 0.0 <= r < 1.0 for r in rho):
            raise InvalidArgumentError(f"rho values must lie in [0, 1), got {rho}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidArgumentError(f"n must be an integer >= 2, got {self.n}")
        if not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise InvalidArgumentError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not np.isfinite(self.signal_gain):
            raise InvalidArgumentError("signal_gain must be finite")
        rng.check_seed(self.seed)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n", int(self.n))

    @property
    def n_nodes(self) -> int:
        return 2 if self.mechanism == "m0" else 3


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    panel: BoldPanel
    latent_betas: np.ndarray | None
    config: MechanismConfig
    # Noise-free task-of-interest part of every trace, for oracle checks.
    task_terms: np.ndarray = field(default=None, repr=False)


def standard_stimuli(grid: TimeGrid = DEFAULT_GRID):
    """Task of interest followed by the four nuisance tasks."""
    if grid.duration < MIN_SPAN:
        raise InvalidArgumentError(f"grid spans {grid.duration}s, need at least {MIN_SPAN}s")
    task = boxcar_stimulus(TASK_INTERVALS, grid)
    nuisance = tuple(boxcar_stimulus(iv, grid) for iv in NUISANCE_INTERVALS)
    return (task,) + nuisance


def summed_regressor(stimulus: SampledSignal, hrf: HrfSpec, scaling: str = "unit_peak") -> np.ndarray:
    """Un-normalized circular convolution ``sum_s N(s) h(t - s)``.

    With ``scaling="unit_peak"`` the sampled response is first divided by its
    maximum, so a subject amplitude is the peak BOLD change of a single-sample
    event.  ``"density"`` keeps the gamma-density amplitudes.
    """
    grid = stimulus.grid
    response = canonical_hrf(hrf, grid)
    if scaling == "unit_peak":
        response = response.with_values(response.values / np.max(response.values))
    elif scaling != "density":
        raise InvalidArgumentError(f"unknown hrf scaling {scaling!r}")
    return grid.num_points * circular_convolve(stimulus, response).values


def check_psd(cov: np.ndarray, what: str) -> None:
    eig = np.linalg.eigvalsh(cov)
    if eig[0] < -1e-12 * max(1.0, eig[-1]):
        raise InvalidArgumentError(f"{what} covariance is not positive semidefinite (min eigenvalue {eig[0]:.3g})")


def task_covariance(config: MechanismConfig) -> np.ndarray:
    """Covariance of the subject-level task amplitudes (m0, m1)."""
    if config.mechanism == "m0":
        (rho,) = config.rho
        s11, s22 = TASK_VARIANCES[:2]
        cov = np.array([[s11, rho * np.sqrt(s11 * s22)], [rho * np.sqrt(s11 * s22), s22]])
    elif config.mechanism == "m1":
        r12, r23 = config.rho
        root6 = np.sqrt(6.0)
        cov = np.diag(TASK_VARIANCES)
        cov[0, 1] = cov[1, 0] = r12 * root6
        cov[1, 2] = cov[2, 1] = r23 * root6
    else:
        raise InvalidArgumentError("m2 has no subject-level amplitudes")
    check_psd(cov, "task amplitude")
    return cov


def nuisance_covariance(n_nodes: int) -> np.ndarray:
    """Covariance of nuisance-task amplitudes; neighbours use 0.3 * sqrt(6)."""
    cov = np.diag(TASK_VARIANCES[:n_nodes])
    for i in range(n_nodes - 1):
        cov[i, i + 1] = cov[i + 1, i] = NUISANCE_CORRELATION * np.sqrt(6.0)
    check_psd(cov, "nuisance amplitude")
    return cov


def noise_covariance_during_task(config: MechanismConfig) -> np.ndarray:
    r12, r23 = config.rho
    v = NOISE_VARIANCE
    cov = np.array([[v, r12 * v, 0.0], [r12 * v, v, r23 * v], [0.0, r23 * v, v]])
    check_psd(cov, "task-period noise")
    return cov


def _cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower factor ``L`` with ``L L^T = cov``; tolerant of singular PSD input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _regressors(config: MechanismConfig):
    stimuli = standard_stimuli(config.grid)
    k = config.n_nodes
    mode = config.hrf_scaling
    task = np.stack([summed_regressor(stimuli[0], NODE_HRFS[i], mode) for i in range(k)])
    nuisance = np.stack([
        np.stack([summed_regressor(stim, NODE_HRFS[i], mode) for i in range(k)]) for stim in stimuli[1:]
    ])
    return stimuli[0], config.signal_gain * task, config.signal_gain * nuisance


def generate(config: MechanismConfig) -> SyntheticDataset:
    """Draw a dataset for any mechanism."""
    if config.mechanism == "m2":
        return generate_mechanism2(config)
    return _generate_amplitude_model(config)


def _generate_amplitude_model(config: MechanismConfig) -> SyntheticDataset:
    k, m, n = config.n_nodes, config.grid.num_points, config.n
    task_chol = _cholesky(task_covariance(config))
    nuis_chol = _cholesky(nuisance_covariance(k))
    _, task_reg, nuis_reg = _regressors(config)
    noise_sd = np.sqrt(NOISE_VARIANCE * config.noise_scale)

    betas = np.empty((n, k))
    data = np.empty((n, k, m))
    for i in range(n):
        gen = rng.stream(config.seed, rng.SUBJECT, i)
        beta = task_chol @ gen.standard_normal(k)
        nuis = gen.standard_normal((len(nuis_reg), k)) @ nuis_chol.T
        noise = gen.standard_normal((k, m))
        betas[i] = beta
        data[i] = (
            BASELINE
            + beta[:, None] * task_reg
            + np.einsum("gk,gkt->kt", nuis, nuis_reg)
            + noise_sd * noise
        )
    panel = BoldPanel(config.grid, tuple(f"node{j + 1}" for j in range(k)), data)
    task_terms = betas[:, :, None] * task_reg[None]
    return SyntheticDataset(panel, betas, config, task_terms)


def generate_mechanism0(config: MechanismConfig) -> SyntheticDataset:
    if config.mechanism != "m0":
        raise InvalidArgumentError("config is not for m0")
    return _generate_amplitude_model(config)


def generate_mechanism1(config: MechanismConfig) -> SyntheticDataset:
    if config.mechanism != "m1":
        raise InvalidArgumentError("config is not for m1")
    return _generate_amplitude_model(config)


def generate_mechanism2(config: MechanismConfig) -> SyntheticDataset:
    if config.mechanism != "m2":
        raise InvalidArgumentError("config is not for m2")
    k, m, n = 3, config.grid.num_points, config.n
    task_stim, task_reg, nuis_reg = _regressors(config)
    active = task_stim.values > 0
    on_chol = _cholesky(noise_covariance_during_task(config)) * np.sqrt(config.noise_scale)
    off_sd = np.sqrt(NOISE_VARIANCE * config.noise_scale)
    mean_signal = BASELINE + task_reg + nuis_reg.sum(axis=0)

    data = np.empty((n, k, m))
    for i in range(n):
        gen = rng.stream(config.seed, rng.SUBJECT, i)
        z = gen.standard_normal((m, k))
        noise = np.where(active[:, None], z @ on_chol.T, off_sd * z)
        data[i] = mean_signal + noise.T
    panel = BoldPanel(config.grid, ("node1", "node2", "node3"), data)
    task_terms = np.broadcast_to(task_reg, (n, k, m)).copy()
    return SyntheticDataset(panel, None, config, task_terms)


def flip_node_sign(config: MechanismConfig, node: int = 1) -> "SyntheticDataset":
    """Dataset identical to ``generate(config)`` except node ``node``'s task amplitude flips sign.

    ``node`` is 0-based.  Only meaningful for amplitude mechanisms.
    """
    base = generate(config)
    if base.latent_betas is None:
        raise InvalidArgumentError("m2 has no task amplitudes to flip")
    data = np.array(base.panel.data)
    data[:, node] -= 2.0 * base.task_terms[:, node]
    betas = base.latent_betas.copy()
    betas[:, node] *= -1
    terms = base.task_terms.copy()
    terms[:, node] *= -1
    return SyntheticDataset(base.panel.with_data(data), betas, config, terms)


def with_seed(config: MechanismConfig, seed: int) -> MechanismConfig:
    return replace(config, seed=seed)
