"""Poisson population code: tuning curves, expected rates and noisy responses."""

import logging

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .models import Population, PopulationResponse, RatingScale, TuningCurve

logger = logging.getLogger(__name__)


def tuning_rate(curve: TuningCurve, s: float) -> float:
    """Expected spike count of one neuron for stimulus ``s``.

    Args:
        curve: Tuning curve.
        s: Stimulus value in scale units.

    Returns:
        ``g * N(s; s_p, w^2) + f0`` where N is the normalized Gaussian density.
    """
    density = norm.pdf(s, loc=curve.preferred, scale=curve.width)
    return float(curve.gain * density + curve.baseline)


def build_population(
    n: int,
    scale: RatingScale | None = None,
    margin: float = 0.0,
    gain: float = 10.0,
    baseline: float = 0.5,
    width: float = 1.0,
) -> Population:
    """Build a homogeneous population with uniformly spaced preferred values.

    Args:
        n: Number of neurons.
        scale: Rating scale (defaults to 1-5 stars).
        margin: How far preferred values extend beyond the scale ends.
        gain: Shared gain g.
        baseline: Shared baseline f0.
        width: Shared width w.

    Returns:
        Population whose preferred values tile [min - margin, max + margin];
        a single neuron sits at the midpoint.

    Raises:
        ValidationError: If n < 1 or a curve parameter is invalid.
    """
    if n < 1:
        raise ValidationError(f"Population size must be >= 1: {n}")
    scale = scale or RatingScale()
    lo, hi = scale.minimum - margin, scale.maximum + margin
    preferred = np.array([0.5 * (lo + hi)]) if n == 1 else np.linspace(lo, hi, n)
    curves = tuple(
        TuningCurve(gain=gain, baseline=baseline, preferred=float(p), width=width)
        for p in preferred
    )
    logger.debug(f"Built population of {n} neurons over [{lo}, {hi}]")
    return Population(curves=curves, scale=scale, margin=margin)


def rate_matrix(population: Population, s_values: np.ndarray) -> np.ndarray:
    """Expected counts for many stimulus values at once.

    Args:
        population: Population of tuning curves.
        s_values: Array of G stimulus values.

    Returns:
        Array of shape (G, N) with entry [j, i] = f_i(s_j).
    """
    s = np.atleast_1d(np.asarray(s_values, dtype=float))[:, None]
    density = norm.pdf(s, loc=population.preferred[None, :], scale=population.widths[None, :])
    return population.gains[None, :] * density + population.baselines[None, :]


def expected_response(population: Population, s: float) -> np.ndarray:
    """Expected population response (Poisson means) for stimulus ``s``.

    Returns:
        Array of N expected counts, entry i equal to ``tuning_rate(curve_i, s)``.
    """
    return rate_matrix(population, np.array([s]))[0]


def sample_responses(
    population: Population, s: float, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw independent Poisson population responses.

    Args:
        population: Population of tuning curves.
        s: Stimulus value.
        n_trials: Number of trials.
        rng: Seeded generator.

    Returns:
        Integer array of shape (n_trials, N).
    """
    rates = expected_response(population, s)
    return rng.poisson(rates, size=(n_trials, population.size))


def sample_response(
    population: Population, s: float, rng: np.random.Generator
) -> PopulationResponse:
    """Draw one noisy population response for stimulus ``s``."""
    counts = sample_responses(population, s, 1, rng)[0]
    return PopulationResponse(tuple(int(c) for c in counts))
