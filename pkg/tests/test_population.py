"""Tests for the Poisson population code."""

import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from neurorating.core.errors import ValidationError
from neurorating.core.models import Population, RatingScale, TuningCurve
from neurorating.core.population import (
    build_population,
    expected_response,
    rate_matrix,
    sample_response,
    sample_responses,
    tuning_rate,
)


class TestTuningRate:
    """Test the single-neuron tuning curve."""

    def test_peak_value(self) -> None:
        """Test the rate at the preferred value against the closed form."""
        curve = TuningCurve(gain=10.0, baseline=1.0, preferred=3.0, width=1.0)

        assert tuning_rate(curve, 3.0) == pytest.approx(4.98942, abs=1e-5)
        assert tuning_rate(curve, 3.0) == pytest.approx(1.0 + 10.0 / math.sqrt(2 * math.pi))

    def test_zero_gain_is_baseline(self) -> None:
        """Test zero gain leaves only the baseline."""
        curve = TuningCurve(gain=0.0, baseline=2.0, preferred=3.0, width=1.0)

        for s in (-10.0, 1.0, 3.0, 42.0):
            assert tuning_rate(curve, s) == 2.0

    def test_symmetric_about_preferred(self) -> None:
        """Test f(s_p + d) == f(s_p - d)."""
        curve = TuningCurve(gain=7.0, baseline=0.3, preferred=2.5, width=0.8)

        above = tuning_rate(curve, 2.5 + 0.7)

        assert above == pytest.approx(tuning_rate(curve, 2.5 - 0.7), rel=1e-12)

    def test_never_below_baseline(self) -> None:
        """Test rates never drop below f0."""
        curve = TuningCurve(gain=5.0, baseline=0.5, preferred=3.0, width=0.5)

        assert all(tuning_rate(curve, s) >= 0.5 for s in np.linspace(-5, 10, 31))


class TestBuildPopulation:
    """Test population construction."""

    def test_one_neuron_per_category(self) -> None:
        """Test five neurons over [1, 5] sit on the categories."""
        population = build_population(5)

        np.testing.assert_allclose(population.preferred, [1, 2, 3, 4, 5])

    def test_margin_extends_spacing(self) -> None:
        """Test nine neurons with margin 1 are spaced 0.75 apart over [0, 6]."""
        population = build_population(9, margin=1.0)

        np.testing.assert_allclose(population.preferred, np.arange(9) * 0.75)

    def test_single_neuron_at_midpoint(self) -> None:
        """Test one neuron sits at the scale midpoint."""
        assert build_population(1).preferred.tolist() == [3.0]

    def test_zero_neurons(self) -> None:
        """Test rejecting an empty population."""
        with pytest.raises(ValidationError, match=">= 1"):
            build_population(0)

    def test_invalid_curve_parameters(self) -> None:
        """Test invalid shared parameters are rejected."""
        with pytest.raises(ValidationError):
            build_population(5, width=-1.0)

    def test_custom_scale(self) -> None:
        """Test populations follow a custom scale."""
        population = build_population(3, scale=RatingScale.stars(0, 10))

        np.testing.assert_allclose(population.preferred, [0, 5, 10])


class TestExpectedResponse:
    """Test expected population responses."""

    def test_zero_gain_is_constant(self) -> None:
        """Test zero gain gives the constant baseline vector."""
        population = build_population(7, gain=0.0, baseline=0.8)

        np.testing.assert_array_equal(expected_response(population, 2.2), np.full(7, 0.8))

    def test_maximum_at_matching_neuron(self, population: Population) -> None:
        """Test the neuron whose preferred value equals s responds most."""
        k = 8
        response = expected_response(population, float(population.preferred[k]))

        assert int(np.argmax(response)) == k

    def test_matches_single_neuron_rates(self, small_population: Population) -> None:
        """Test each entry equals that neuron's tuning rate."""
        response = expected_response(small_population, 3.0)
        expected = [tuning_rate(c, 3.0) for c in small_population.curves]

        np.testing.assert_allclose(response, expected, rtol=1e-12)

    def test_rate_matrix_shape(self, population: Population) -> None:
        """Test the (G, N) layout of the rate matrix."""
        rates = rate_matrix(population, np.array([1.0, 2.0, 3.0]))

        assert rates.shape == (3, 21)
        np.testing.assert_allclose(rates[2], expected_response(population, 3.0))


    def test_counts_follow_expected_response(self, population: Population) -> None:
        """Test sampled counts rank-correlate with the expected response near a neuron."""
        s = float(population.preferred[10])
        counts = sample_responses(population, s, 200, np.random.default_rng(31))
        expected = expected_response(population, s)

        correlations = [spearmanr(row, expected)[0] for row in counts]

        assert np.mean(np.asarray(correlations) > 0) >= 0.95
        assert np.mean(correlations) > 0.3


class TestSampleResponse:
    """Test Poisson response sampling."""

    def test_deterministic_for_seed(self, population: Population) -> None:
        """Test the same seed gives the same response."""
        first = sample_response(population, 3.0, np.random.default_rng(7))
        second = sample_response(population, 3.0, np.random.default_rng(7))

        assert first == second
        assert len(first) == population.size

    def test_batch_shape_and_sign(self, population: Population, rng: np.random.Generator) -> None:
        """Test batch sampling returns non-negative integer counts."""
        counts = sample_responses(population, 2.0, 50, rng)

        assert counts.shape == (50, 21)
        assert counts.min() >= 0
        assert np.issubdtype(counts.dtype, np.integer)

    def test_zero_rate_never_spikes(self) -> None:
        """Test a silent neuron (g = f0 = 0) never spikes."""
        population = build_population(3, gain=0.0, baseline=0.0)
        counts = sample_responses(population, 3.0, 100, np.random.default_rng(0))

        assert counts.sum() == 0

    @pytest.mark.slow
    def test_poisson_calibration(self, population: Population) -> None:
        """Test sample means and variances match the Poisson rates at s=3."""
        n = 20_000
        counts = sample_responses(population, 3.0, n, np.random.default_rng(2024))
        rates = expected_response(population, 3.0)
        means = counts.mean(axis=0)
        variances = counts.var(axis=0, ddof=1)

        assert np.all(np.abs(means - rates) <= 3 * np.sqrt(rates / n))
        busy = rates >= 1.0
        assert np.all(np.abs(variances[busy] - means[busy]) <= 0.1 * means[busy])
