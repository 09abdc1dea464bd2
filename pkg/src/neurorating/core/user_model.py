"""Per-user generative model: encode, decode and discretize, by Monte Carlo."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..utils.rng import derive_rng, derive_seed, trial_blocks
from .decoders import decode_batch, discretize_many
from .errors import DegenerateResponseError, ValidationError
from .models import (
    DEFAULT_GRID_STEP,
    DecoderSpec,
    DecoderVariant,
    Prior,
    RatingScale,
    SearchGrid,
    UserModel,
)
from .population import build_population, expected_response, rate_matrix, sample_responses

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RatingPMF:
    """Probability of each rating category."""

    categories: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "categories", tuple(float(c) for c in self.categories))
        if len(probs) != len(self.categories):
            raise ValidationError("A pmf needs one probability per category")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValidationError(f"Probabilities must be non-negative and sum to 1: {probs}")

    @classmethod
    def from_ratings(cls, ratings: Sequence[float] | np.ndarray, scale: RatingScale) -> "RatingPMF":
        """Empirical pmf of a set of category ratings.

        Raises:
            ValidationError: If no ratings are given.
        """
        values = np.asarray(ratings, dtype=float)
        if values.size == 0:
            raise ValidationError("Cannot build a pmf from zero ratings")
        cats = scale.category_array
        index = np.argmin(np.abs(values[:, None] - cats[None, :]), axis=1)
        counts = np.bincount(index, minlength=cats.size)
        return cls(scale.categories, tuple((counts / values.size).tolist()))

    def as_array(self) -> np.ndarray:
        """Probabilities as a float array."""
        return np.asarray(self.probabilities)

    @property
    def mean(self) -> float:
        """Expected rating."""
        return float(np.dot(self.as_array(), self.categories))


@dataclass(frozen=True)
class ReliabilityProfile:
    """Decoder reliability across latent values.

    ``fractions`` are MSE divided by maxMSE, the squared scale span.
    """

    s_values: tuple[float, ...]
    mse: tuple[float, ...]
    fractions: tuple[float, ...]
    variances: tuple[float, ...]
    continuous: bool = False


def build_user_model(
    variant: DecoderVariant | str,
    *,
    n_neurons: int = 21,
    scale: RatingScale | None = None,
    margin: float = 0.0,
    gain: float = 10.0,
    baseline: float = 0.5,
    width: float = 1.0,
    prior: Prior | None = None,
    grid_step: float = DEFAULT_GRID_STEP,
    label: str | None = None,
) -> UserModel:
    """Build a user model with a homogeneous population.

    Args:
        variant: Decoder variant.
        n_neurons: Population size N.
        scale: Rating scale (defaults to 1-5 stars).
        margin: Preferred-value margin beyond the scale ends.
        gain: Shared gain g.
        baseline: Shared baseline f0.
        width: Shared width w.
        prior: Prior for MAD (uniform if omitted).
        grid_step: Search grid step for MLD/MAD.
        label: Optional user identifier.

    Returns:
        A validated user model.
    """
    population = build_population(
        n_neurons, scale=scale, margin=margin, gain=gain, baseline=baseline, width=width
    )
    variant = DecoderVariant.parse(variant)
    grid = SearchGrid.covering(population, grid_step) if variant.uses_grid else None
    spec = DecoderSpec(variant, prior=prior if variant is DecoderVariant.MAD else None, grid=grid)
    return UserModel(population=population, decoder=spec, label=label)


def _check_stimulus(model: UserModel, s: float) -> None:
    lo, hi = model.population.extended_range
    if not np.isfinite(s) or s < lo - 1e-9 or s > hi + 1e-9:
        raise ValidationError(f"Latent value {s} outside the extended scale range [{lo}, {hi}]")


def _decode_counts(
    model: UserModel, counts: np.ndarray, rates: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    if model.decoder.variant is DecoderVariant.WAD:
        silent = counts.sum(axis=1) == 0
        if silent.any():
            logger.debug(f"Resampling {int(silent.sum())} all-zero responses")
            counts[silent] = rng.poisson(rates[silent])
            if np.any(counts.sum(axis=1) == 0):
                raise DegenerateResponseError(
                    "Population stayed silent twice; rates are too low to decode"
                )
    return decode_batch(model.decoder, model.population, counts, rng)


def _draw_estimates(
    model: UserModel, s: float, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    population = model.population
    counts = sample_responses(population, s, n_trials, rng)
    rates = np.broadcast_to(expected_response(population, s), counts.shape)
    return _decode_counts(model, counts, rates, rng)


def simulate_ratings(
    model: UserModel, s: float, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    """Simulate repeated ratings from one generator stream.

    Returns:
        Array of n_trials category ratings.
    """
    _check_stimulus(model, s)
    return discretize_many(_draw_estimates(model, s, n_trials, rng), model.scale)


def simulate_rating(model: UserModel, s: float, rng: np.random.Generator) -> float:
    """Simulate one rating: sample a response, decode it and discretize.

    Raises:
        DegenerateResponseError: If a WAD response is silent twice in a row.
    """
    return float(simulate_ratings(model, s, 1, rng)[0])


def simulate_estimates(model: UserModel, s: float, n_trials: int, seed: int) -> np.ndarray:
    """Continuous decoder estimates over many trials.

    Trials are drawn in fixed-size blocks, each from its own (seed, block) stream.
    """
    if n_trials < 1:
        raise ValidationError(f"Number of trials must be >= 1: {n_trials}")
    _check_stimulus(model, s)
    parts = [
        _draw_estimates(model, s, size, derive_rng(seed, block))
        for block, size in trial_blocks(n_trials)
    ]
    return np.concatenate(parts)


def rating_pmf_mc(model: UserModel, s: float, n_trials: int, seed: int) -> RatingPMF:
    """Monte Carlo estimate of the rating pmf at latent value ``s``."""
    ratings = discretize_many(simulate_estimates(model, s, n_trials, seed), model.scale)
    return RatingPMF.from_ratings(ratings, model.scale)


def pmf_variance(pmf: RatingPMF, scale: RatingScale | None = None) -> float:
    """Variance of a rating pmf in squared scale units.

    Args:
        pmf: Rating pmf.
        scale: Scale whose categories the pmf is defined on (defaults to the pmf's own).
    """
    cats = scale.category_array if scale is not None else np.asarray(pmf.categories)
    probs = pmf.as_array()
    mean = float(np.dot(probs, cats))
    return float(np.dot(probs, (cats - mean) ** 2))


def reliability_profile(
    model: UserModel,
    s_values: Sequence[float],
    n_trials: int,
    seed: int,
    continuous: bool = False,
) -> ReliabilityProfile:
    """Mean squared error of decoded ratings against the latent value.

    Args:
        model: User model.
        s_values: Latent values inside [scale.min, scale.max].
        n_trials: Trials per latent value (>= 100).
        seed: Base seed; point j uses a stream derived from (seed, j).
        continuous: Score continuous estimates instead of discrete ratings.

    Returns:
        Profile with MSE, maxMSE fraction and estimator variance per latent value.
    """
    if n_trials < 100:
        raise ValidationError(f"Reliability needs at least 100 trials per point: {n_trials}")
    scale = model.scale
    max_mse = scale.span**2
    mse, fractions, variances = [], [], []
    for index, s in enumerate(s_values):
        if s < scale.minimum or s > scale.maximum:
            raise ValidationError(f"Reliability latent value {s} outside the scale")
        estimates = simulate_estimates(model, s, n_trials, derive_seed(seed, index))
        values = estimates if continuous else discretize_many(estimates, scale)
        error = float(np.mean((values - s) ** 2))
        mse.append(error)
        fractions.append(min(error / max_mse, 1.0))
        variances.append(float(np.var(values)))
    logger.info(f"Computed reliability profile over {len(mse)} latent values")
    return ReliabilityProfile(
        s_values=tuple(float(s) for s in s_values),
        mse=tuple(mse),
        fractions=tuple(fractions),
        variances=tuple(variances),
        continuous=continuous,
    )


def rating_pmf_table(
    model: UserModel, s_values: np.ndarray, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    """Monte Carlo rating pmfs at many latent values from one generator stream.

    Args:
        model: User model.
        s_values: G latent values inside the extended scale range.
        n_trials: Trials per latent value.
        rng: Seeded generator; the table is a pure function of its state.

    Returns:
        Array of shape (G, C) whose row j is the rating pmf at ``s_values[j]``.
    """
    values = np.atleast_1d(np.asarray(s_values, dtype=float))
    for s in (values.min(), values.max()):
        _check_stimulus(model, float(s))
    rates = np.repeat(rate_matrix(model.population, values), n_trials, axis=0)
    counts = rng.poisson(rates)
    ratings = discretize_many(_decode_counts(model, counts, rates, rng), model.scale)
    cats = model.scale.category_array
    index = np.searchsorted(cats, ratings)
    rows = np.repeat(np.arange(values.size), n_trials)
    table = np.bincount(rows * cats.size + index, minlength=values.size * cats.size)
    return table.reshape(values.size, cats.size) / n_trials
