import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from taskfc.errors import EmptyBandError, InvalidArgumentError
from taskfc.signal_core import (
    CANONICAL_HRF,
    DEFAULT_GRID,
    FrequencyBand,
    HrfSpec,
    SampledSignal,
    boxcar_stimulus,
    canonical_hrf,
    circular_convolve,
    circular_shift,
    dense_grid,
    dft,
    fourier_grid,
    make_time_grid,
    time_average,
)

TASK = [(86.5, 98.5), (162.0, 174.0)]


def sig(values, delta=1.0):
    values = np.asarray(values, dtype=float)
    return SampledSignal(make_time_grid(delta, len(values)), values)


finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def vectors(size):
    return st.lists(finite, min_size=size, max_size=size)


class TestTimeGrid:
    def test_default_lattice(self):
        grid = make_time_grid(0.72, 284)
        assert grid.last_index == 283
        assert grid.num_points == 284

    def test_minimal_grid(self):
        assert make_time_grid(1.0, 2).last_index == 1

    @pytest.mark.parametrize("delta,points", [(0.72, 0), (0.72, 1), (0.0, 10), (-1.0, 10)])
    def test_rejects_bad_arguments(self, delta, points):
        with pytest.raises(InvalidArgumentError):
            make_time_grid(delta, points)

    def test_wrap(self):
        grid = make_time_grid(1.0, 5)
        assert list(grid.wrap(np.array([-1, 5, 7, 0]))) == [4, 0, 2, 0]


class TestBoxcar:
    def test_task_stimulus_count_matches_exact_enumeration(self):
        stim = boxcar_stimulus(TASK, DEFAULT_GRID)
        expected = oracles.count_active(TASK, 0.72, 284)
        assert expected == 33
        assert int(stim.values.sum()) == expected

    def test_edge_on_sample_instant_is_included(self):
        # 225 * 0.72 == 162 exactly
        stim = boxcar_stimulus(TASK, DEFAULT_GRID)
        assert stim.values[225] == 1.0
        assert stim.values[224] == 0.0

    def test_empty(self):
        assert boxcar_stimulus([], DEFAULT_GRID).values.sum() == 0

    def test_full_period(self):
        stim = boxcar_stimulus([(0.0, DEFAULT_GRID.duration)], DEFAULT_GRID)
        assert np.all(stim.values == 1.0)

    def test_overlap_rejected(self):
        with pytest.raises(InvalidArgumentError):
            boxcar_stimulus([(0, 10), (5, 20)], DEFAULT_GRID)

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidArgumentError):
            boxcar_stimulus([(200, 300)], DEFAULT_GRID)

    def test_order_free(self):
        a = boxcar_stimulus(TASK, DEFAULT_GRID).values
        b = boxcar_stimulus(TASK[::-1], DEFAULT_GRID).values
        assert np.array_equal(a, b)


class TestCanonicalHrf:
    def test_zero_at_origin(self):
        assert canonical_hrf(CANONICAL_HRF, DEFAULT_GRID).values[0] == 0.0

    def test_matches_closed_form(self):
        values = canonical_hrf(CANONICAL_HRF, DEFAULT_GRID).values
        ref = [oracles.double_gamma(t, 6, 12, 0.9, 0.9, 0.35) for t in DEFAULT_GRID.times]
        np.testing.assert_allclose(values, ref, rtol=0, atol=1e-12)

    def test_peak_location(self):
        spec = HrfSpec(4, 10, 0.8, 0.8, 0.4)
        analytic_first_term = (spec.a1 - 1) / spec.b1
        assert analytic_first_term == pytest.approx(3.75)
        fine = np.arange(0, 30, 1e-3)
        dense_peak = fine[np.argmax([oracles.double_gamma(t, 4, 10, 0.8, 0.8, 0.4) for t in fine])]
        sampled = canonical_hrf(spec, DEFAULT_GRID)
        sampled_peak = DEFAULT_GRID.times[np.argmax(sampled.values)]
        assert abs(sampled_peak - dense_peak) <= DEFAULT_GRID.delta
        assert abs(dense_peak - analytic_first_term) < 0.1

    def test_latency_delays_response(self):
        base = canonical_hrf(CANONICAL_HRF, DEFAULT_GRID).values
        late = canonical_hrf(HrfSpec(latency=3 * 0.72), DEFAULT_GRID).values
        np.testing.assert_allclose(late[3:], base[:-3], atol=1e-12)
        assert np.all(late[:4] == 0.0)

    def test_latency_must_be_whole_samples(self):
        with pytest.raises(InvalidArgumentError):
            canonical_hrf(HrfSpec(latency=1.0), DEFAULT_GRID)

    @pytest.mark.parametrize("kwargs", [dict(a1=0), dict(b2=-1), dict(c=1.5)])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            HrfSpec(**kwargs)


class TestConvolution:
    def test_scaled_impulse_is_identity(self):
        g = np.random.default_rng(0).normal(size=7)
        f = np.zeros(7)
        f[0] = 7.0
        np.testing.assert_allclose(circular_convolve(sig(f), sig(g)).values, g, atol=1e-12)

    def test_constant_gives_mean(self):
        g = np.random.default_rng(1).normal(size=9)
        out = circular_convolve(sig(np.ones(9)), sig(g)).values
        np.testing.assert_allclose(out, np.full(9, g.mean()), atol=1e-12)

    def test_small_case_against_double_loop(self):
        f, g = [1, 2, 0, 0, 0], [1, 0, 3, 0, 0]
        expected = oracles.conv(f, g)
        np.testing.assert_allclose(circular_convolve(sig(f), sig(g)).values, expected, atol=1e-12)
        np.testing.assert_allclose(expected, [0.2, 0.4, 0.6, 1.2, 0.0], atol=1e-15)

    def test_grid_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            circular_convolve(sig(np.ones(4), 1.0), sig(np.ones(4), 2.0))

    @given(vectors(12), vectors(12))
    def test_commutes(self, f, g):
        a = circular_convolve(sig(f), sig(g)).values
        b = circular_convolve(sig(g), sig(f)).values
        np.testing.assert_allclose(a, b, atol=1e-12 * max(1.0, np.abs(a).max()))

    @settings(max_examples=50)
    @given(vectors(16), vectors(16), st.integers(1, 15))
    def test_convolution_theorem_on_fourier_grid(self, f, g, j):
        delta = 0.5
        xi = j / (16 * delta)
        conv = circular_convolve(sig(f, delta), sig(g, delta))
        lhs = dft(conv, xi)
        rhs = dft(sig(f, delta), xi) * dft(sig(g, delta), xi)
        scale = max(1.0, np.abs(f).max() * np.abs(g).max())
        assert abs(lhs - rhs) <= 1e-10 * scale


class TestDft:
    def test_constant_at_zero(self):
        assert dft(sig(np.full(10, 3.5), 0.72), 0.0) == pytest.approx(3.5, abs=1e-12)

    def test_constant_at_fundamental(self):
        grid_sig = sig(np.full(284, 2.0), 0.72)
        assert abs(dft(grid_sig, 1 / (284 * 0.72))) < 1e-12

    def test_against_direct_sum(self):
        f = np.random.default_rng(3).normal(size=8)
        for j in range(8):
            xi = j / (8 * 0.72)
            assert abs(dft(sig(f, 0.72), xi) - oracles.dft(list(f), 0.72, xi)) < 1e-12

    @given(vectors(10), st.floats(-5, 5))
    def test_periodic(self, f, xi):
        s = sig(f, 0.72)
        scale = max(1.0, np.abs(f).max())
        assert abs(dft(s, xi) - dft(s, xi + 1 / 0.72)) <= 1e-12 * scale * 10


class TestFrequencyGrids:
    def test_default_band_multiples(self):
        freqs = fourier_grid(DEFAULT_GRID, FrequencyBand())
        expected = [j / 204.48 for j in range(1, 31)]
        np.testing.assert_allclose(freqs, expected, rtol=1e-12)

    def test_empty_band(self):
        band = FrequencyBand(0.0, 1 / DEFAULT_GRID.duration)
        with pytest.raises(EmptyBandError):
            fourier_grid(DEFAULT_GRID, band)

    def test_small_enumeration(self):
        freqs = fourier_grid(make_time_grid(1.0, 10), FrequencyBand(0, 0.25))
        np.testing.assert_allclose(freqs, [0.1, 0.2])

    def test_dense_grid_contains_fourier_grid(self):
        dense = dense_grid(DEFAULT_GRID, FrequencyBand(), 16)
        coarse = fourier_grid(DEFAULT_GRID, FrequencyBand())
        # step = 1 / (16 * 204.48); 0.15 / step = 490.75 so indices 1..490
        assert dense.size == 490
        np.testing.assert_allclose(dense[15::16], coarse, rtol=1e-12)
        assert dense.min() > 0 and dense.max() < 0.15

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(InvalidArgumentError):
            fourier_grid(DEFAULT_GRID, FrequencyBand(0, 0.8))

    @pytest.mark.parametrize("lo,hi", [(0.2, 0.1), (-0.1, 0.1), (0.1, 0.1)])
    def test_invalid_band(self, lo, hi):
        with pytest.raises(InvalidArgumentError):
            FrequencyBand(lo, hi)


class TestShiftAndAverage:
    def test_identity_shifts(self):
        s = sig([1, 2, 3, 4])
        assert np.array_equal(circular_shift(s, 0).values, s.values)
        assert np.array_equal(circular_shift(s, 4).values, s.values)

    def test_rotation(self):
        assert list(circular_shift(sig([1, 2, 3, 4]), 1).values) == [4, 1, 2, 3]

    @given(vectors(9), st.integers(-20, 20), st.integers(-20, 20))
    def test_shifts_compose(self, f, a, b):
        s = sig(f)
        twice = circular_shift(circular_shift(s, a), b).values
        assert np.array_equal(twice, circular_shift(s, a + b).values)

    @given(vectors(9), st.integers(-20, 20))
    def test_average_shift_invariant(self, f, lag):
        s = sig(f)
        assert time_average(circular_shift(s, lag)) == pytest.approx(time_average(s), abs=1e-12)

    def test_constant_average(self):
        assert time_average(sig(np.full(5, 2.5))) == 2.5

    def test_task_stimulus_average(self):
        assert time_average(boxcar_stimulus(TASK, DEFAULT_GRID)) == pytest.approx(33 / 284)


class TestSampledSignal:
    def test_length_checked(self):
        with pytest.raises(InvalidArgumentError):
            SampledSignal(make_time_grid(1.0, 4), [1.0, 2.0])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SampledSignal(make_time_grid(1.0, 2), [1.0, np.nan])

    def test_values_are_read_only(self):
        s = sig([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0
