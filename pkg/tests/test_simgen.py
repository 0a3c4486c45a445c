import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from taskfc.errors import InvalidArgumentError
from taskfc.signal_core import DEFAULT_GRID, make_time_grid
from taskfc.simgen import (
    NODE_HRFS,
    MechanismConfig,
    flip_node_sign,
    generate,
    generate_mechanism0,
    generate_mechanism1,
    generate_mechanism2,
    standard_stimuli,
    summed_regressor,
    task_covariance,
)

NODE_HRF_PARAMS = ((4, 10, 0.8, 0.8, 0.4), (8, 14, 1, 1, 0.3))


class TestStimuli:
    def test_task_count(self):
        task = standard_stimuli(DEFAULT_GRID)[0]
        assert int(task.values.sum()) == oracles.count_active([(86.5, 98.5), (162.0, 174.0)], 0.72, 284)

    def test_pairwise_disjoint(self):
        stimuli = standard_stimuli(DEFAULT_GRID)
        for a, b in itertools.combinations(stimuli, 2):
            assert np.all(a.values * b.values == 0)

    def test_nuisance_two_at_tau_16(self):
        assert standard_stimuli(DEFAULT_GRID)[2].values[16] == 1.0

    def test_short_grid(self):
        with pytest.raises(InvalidArgumentError):
            standard_stimuli(make_time_grid(0.72, 200))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(mechanism="m3"),
            dict(mechanism="m0", rho=(0.2, 0.3)),
            dict(rho=(1.0, 0.2)),
            dict(rho=(-0.1, 0.2)),
            dict(n=1),
            dict(noise_scale=-1),
            dict(seed=-5),
            dict(hrf_scaling="other"),
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            MechanismConfig(**kwargs)

    def test_wrong_generator(self):
        with pytest.raises(InvalidArgumentError):
            generate_mechanism0(MechanismConfig("m1", n=2))
        with pytest.raises(InvalidArgumentError):
            generate_mechanism1(MechanismConfig("m0", n=2, rho=(0.3,)))
        with pytest.raises(InvalidArgumentError):
            generate_mechanism2(MechanismConfig("m1", n=2))


def oracle_regressor(stim_values, params):
    h = [oracles.double_gamma(t, *params) for t in DEFAULT_GRID.times]
    peak = max(h)
    return np.array(oracles.conv(list(stim_values), [v / peak for v in h])) * 284


class TestMechanism0:
    def test_baseline(self):
        data = generate(MechanismConfig("m0", n=308, rho=(0.5,), seed=1))
        assert abs(data.panel.data.mean() - 9000) <= 1

    def test_noiseless_reconstruction(self):
        cfg = MechanismConfig("m0", n=5, rho=(0.5,), seed=2, noise_scale=0.0)
        data = generate(cfg)
        stimuli = standard_stimuli(DEFAULT_GRID)
        for node, params in enumerate(NODE_HRF_PARAMS):
            task = oracle_regressor(stimuli[0].values, params)
            nuis = np.column_stack([oracle_regressor(s.values, params) for s in stimuli[1:]])
            for i in range(cfg.n):
                resid = data.panel.data[i, node] - 9000 - data.latent_betas[i, node] * task
                coef, *_ = np.linalg.lstsq(nuis, resid, rcond=None)
                assert np.abs(resid - nuis @ coef).max() < 1e-8

    def test_amplitude_correlation(self):
        # A coarse grid keeps 10^5 subjects cheap; amplitudes do not depend on it.
        grid = make_time_grid(4.0, 52)
        data = generate(MechanismConfig("m0", n=100_000, rho=(0.25,), seed=3, grid=grid))
        b = data.latent_betas
        assert abs(abs(np.corrcoef(b[:, 0], b[:, 1])[0, 1]) - 0.25) <= 0.01
        assert np.var(b[:, 0]) == pytest.approx(2.0, rel=0.03)
        assert np.var(b[:, 1]) == pytest.approx(3.0, rel=0.03)


class TestMechanism1:
    def test_valid_default(self):
        cov = task_covariance(MechanismConfig("m1", n=2, rho=(0.4, 0.6)))
        assert np.linalg.eigvalsh(cov).min() > 0
        assert cov[0, 2] == 0

    def test_outer_nodes_uncorrelated(self):
        grid = make_time_grid(4.0, 52)
        data = generate(MechanismConfig("m1", n=100_000, seed=4, grid=grid))
        b = data.latent_betas
        assert abs(np.corrcoef(b[:, 0], b[:, 2])[0, 1]) <= 0.01

    def test_psd_decision_matches_closed_form(self):
        # Eigenvalues of [[2, a, 0], [a, 3, a], [0, a, 2]]: 2 and 2.5 +- sqrt(0.25 + 2 a^2).
        a = 0.9 * np.sqrt(6.0)
        smallest = min(2.0, 2.5 - np.sqrt(0.25 + 2 * a * a))
        assert smallest < 0
        with pytest.raises(InvalidArgumentError):
            generate(MechanismConfig("m1", n=2, rho=(0.9, 0.9)))

    @given(st.floats(0, 0.99), st.floats(0, 0.99))
    def test_psd_check_agrees_with_closed_form(self, r12, r23):
        a, b = r12 * np.sqrt(6.0), r23 * np.sqrt(6.0)
        cov = np.array([[2, a, 0], [a, 3, b], [0, b, 2]])
        # determinant test for a 3x3 with positive leading minors 2 and 6 - a^2
        det = 2 * (6 - b * b) - a * a * 2
        cfg = MechanismConfig("m1", n=2, rho=(r12, r23))
        if 6 - a * a > 1e-9 and det > 1e-9:
            np.testing.assert_array_equal(task_covariance(cfg), cov)
        elif 6 - a * a < -1e-9 or det < -1e-9:
            with pytest.raises(InvalidArgumentError):
                task_covariance(cfg)


@pytest.fixture(scope="module")
def m2_data():
    return generate(MechanismConfig("m2", n=3031, rho=(0.4, 0.6), seed=5))


class TestMechanism2:
    def test_no_betas(self, m2_data):
        assert m2_data.latent_betas is None

    def test_noise_correlation(self, m2_data):
        active = standard_stimuli(DEFAULT_GRID)[0].values > 0
        noise = m2_data.panel.data - m2_data.panel.data.mean(axis=0)
        on = noise[:, :, active].transpose(1, 0, 2).reshape(3, -1)
        off = noise[:, :, ~active].transpose(1, 0, 2).reshape(3, -1)
        assert on.shape[1] >= 100_000
        c_on = np.corrcoef(on)
        c_off = np.corrcoef(off)
        assert abs(c_on[0, 1] - 0.4) <= 0.02
        assert abs(c_on[1, 2] - 0.6) <= 0.02
        assert abs(c_on[0, 2]) <= 0.02
        assert np.abs(c_off[np.triu_indices(3, 1)]).max() <= 0.02

    def test_flip_rejected(self):
        with pytest.raises(InvalidArgumentError):
            flip_node_sign(MechanismConfig("m2", n=2))


class TestDeterminism:
    @pytest.mark.parametrize("mech,rho", [("m0", (0.5,)), ("m1", (0.4, 0.6)), ("m2", (0.4, 0.6))])
    def test_bit_identical(self, mech, rho):
        cfg = MechanismConfig(mech, n=6, rho=rho, seed=77)
        assert np.array_equal(generate(cfg).panel.data, generate(cfg).panel.data)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**64 - 1), st.sampled_from(["m0", "m1", "m2"]))
    def test_subject_prefix_matches_larger_run(self, n, seed, mech):
        rho = (0.5,) if mech == "m0" else (0.4, 0.6)
        small = generate(MechanismConfig(mech, n=n, rho=rho, seed=seed))
        large = generate(MechanismConfig(mech, n=n + 5, rho=rho, seed=seed))
        assert np.array_equal(small.panel.data, large.panel.data[:n])

    def test_flip_only_changes_one_node(self):
        cfg = MechanismConfig("m1", n=4, seed=8)
        base, flipped = generate(cfg), flip_node_sign(cfg, 1)
        assert np.array_equal(base.panel.data[:, [0, 2]], flipped.panel.data[:, [0, 2]])
        np.testing.assert_allclose(flipped.latent_betas[:, 1], -base.latent_betas[:, 1])


class TestRegressor:
    def test_unit_peak_matches_oracle(self):
        stim = standard_stimuli(DEFAULT_GRID)[0]
        got = summed_regressor(stim, NODE_HRFS[1], "unit_peak")
        np.testing.assert_allclose(got, oracle_regressor(stim.values, NODE_HRF_PARAMS[1]), atol=1e-10)

    def test_unknown_scaling(self):
        with pytest.raises(InvalidArgumentError):
            summed_regressor(standard_stimuli(DEFAULT_GRID)[0], NODE_HRFS[0], "nope")
