"""Cohort simulation and repeated-rating statistics.

Covers the re-rating experiment statistics: how many response categories each
(user, item) pair used, the per-pair rating variances, and a Pareto maximum
likelihood fit of the positive variances.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import pareto

from ..utils.rng import derive_rng, stable_key
from .errors import DegenerateFitError, ValidationError
from .models import DecoderVariant, Prior, RatingObservation, RatingScale, UserModel
from .user_model import build_user_model, simulate_ratings

logger = logging.getLogger(__name__)

OBSERVATION_COLUMNS = ["user_id", "item_id", "trial", "rating"]


@dataclass(frozen=True)
class Archetype:
    """Named parameter-plus-decoder configuration for a class of rating behavior."""

    variant: DecoderVariant
    gain: float
    baseline: float = 0.5
    width: float = 1.0
    prior_sd: float | None = None


ARCHETYPES: dict[str, Archetype] = {
    # low uncertainty at the extremes, more in the middle
    "extreme": Archetype(DecoderVariant.MVD, gain=40.0),
    # uncertainty minimal for middle ratings
    "moderate": Archetype(DecoderVariant.WAD, gain=15.0),
    # high uncertainty over the whole scale
    "uncertain": Archetype(DecoderVariant.MLD, gain=5.0),
    # whole scale, stabilised by a prior around the scale centre
    "stable": Archetype(DecoderVariant.MAD, gain=5.0, prior_sd=0.75),
}


@dataclass(frozen=True)
class VarianceSample:
    """Rating variance of one (user, item) pair across trials."""

    user_id: str
    item_id: str
    variance: float
    n_trials: int


@dataclass(frozen=True)
class ParetoFit:
    """Maximum likelihood Pareto fit of positive variances."""

    x_m: float
    alpha: float
    n_used: int
    n_excluded: int

    def to_dict(self) -> dict[str, float | int]:
        """Convert fit to dictionary."""
        return {
            "x_m": self.x_m,
            "alpha": self.alpha,
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }


@dataclass(frozen=True)
class ConstantRaterSummary:
    """Share of constant raters at two granularities."""

    pair_fraction: float  # (user, item) pairs rated identically in every trial
    user_fraction: float  # users constant on all of their items
    n_pairs: int
    n_users: int


def archetype_model(
    name: str,
    label: str | None = None,
    scale: RatingScale | None = None,
    n_neurons: int = 21,
    margin: float = 0.0,
    grid_step: float = 1e-2,
) -> UserModel:
    """Build the user model of a named archetype.

    Raises:
        ValidationError: If the archetype is unknown.
    """
    if name not in ARCHETYPES:
        raise ValidationError(f"Unknown archetype '{name}' (expected one of {sorted(ARCHETYPES)})")
    archetype = ARCHETYPES[name]
    scale = scale or RatingScale()
    prior = None
    if archetype.prior_sd is not None:
        prior = Prior.gaussian(scale.midpoint, archetype.prior_sd)
    return build_user_model(
        archetype.variant,
        n_neurons=n_neurons,
        scale=scale,
        margin=margin,
        gain=archetype.gain,
        baseline=archetype.baseline,
        width=archetype.width,
        prior=prior,
        grid_step=grid_step,
        label=label,
    )


def draw_latent_values(
    user_ids: Sequence[str], item_ids: Sequence[str], scale: RatingScale, seed: int
) -> dict[str, dict[str, float]]:
    """Draw latent item values uniformly over the scale, one stream per user."""
    latent: dict[str, dict[str, float]] = {}
    for user in user_ids:
        rng = derive_rng(seed, stable_key(user))
        values = rng.uniform(scale.minimum, scale.maximum, size=len(item_ids))
        latent[user] = {item: float(v) for item, v in zip(item_ids, values, strict=True)}
    return latent


def simulate_cohort(
    models: Sequence[UserModel],
    latent_values: Mapping[str, Mapping[str, float]],
    n_trials: int,
    seed: int,
) -> list[RatingObservation]:
    """Simulate repeated ratings for every (user, item) pair.

    Args:
        models: One labelled user model per user.
        latent_values: Latent value per user id and item id.
        n_trials: Trials per pair.
        seed: Base seed; each pair draws from a (seed, user, item) stream.

    Returns:
        Observations ordered by user, item and trial.

    Raises:
        ValidationError: If a model is unlabelled or lacks latent values.
    """
    if n_trials < 1:
        raise ValidationError(f"Number of trials must be >= 1: {n_trials}")
    observations: list[RatingObservation] = []
    logger.info(f"Simulating cohort of {len(models)} users with {n_trials} trials per item")
    for model in models:
        if model.label is None:
            raise ValidationError("Cohort user models need a label (user id)")
        if model.label not in latent_values:
            raise ValidationError(f"No latent values for user '{model.label}'")
        scale = model.scale
        for item, s in latent_values[model.label].items():
            if s < scale.minimum or s > scale.maximum:
                raise ValidationError(f"Latent value {s} of ({model.label}, {item}) off scale")
            rng = derive_rng(seed, stable_key(model.label), stable_key(item))
            ratings = simulate_ratings(model, s, n_trials, rng)
            observations.extend(
                RatingObservation(model.label, item, trial, float(rating))
                for trial, rating in enumerate(ratings, start=1)
            )
    return observations


def observations_frame(observations: Sequence[RatingObservation]) -> pd.DataFrame:
    """Tabulate observations with the standard column order."""
    return pd.DataFrame(
        [(o.user_id, o.item_id, o.trial, o.rating) for o in observations],
        columns=OBSERVATION_COLUMNS,
    ).astype({"user_id": str, "item_id": str, "trial": int, "rating": float})


def category_usage_histogram(
    observations: Sequence[RatingObservation], scale: RatingScale | None = None
) -> dict[int, int]:
    """Count (user, item) pairs by the number of distinct categories used.

    Returns:
        Mapping from 1..len(categories) to pair counts; bin 1 holds constant raters.
    """
    scale = scale or RatingScale()
    bins = dict.fromkeys(range(1, len(scale.categories) + 1), 0)
    if not observations:
        return bins
    distinct = observations_frame(observations).groupby(["user_id", "item_id"])["rating"].nunique()
    for used, count in distinct.value_counts().items():
        bins[int(used)] = int(count)
    return bins


def constant_rater_fractions(observations: Sequence[RatingObservation]) -> ConstantRaterSummary:
    """Fraction of constant (user, item) pairs and of users constant on all items."""
    if not observations:
        raise ValidationError("No observations to summarize")
    frame = observations_frame(observations)
    constant = frame.groupby(["user_id", "item_id"])["rating"].nunique() == 1
    per_user = constant.groupby(level="user_id").all()
    return ConstantRaterSummary(
        pair_fraction=float(constant.mean()),
        user_fraction=float(per_user.mean()),
        n_pairs=int(constant.size),
        n_users=int(per_user.size),
    )


def short_pair_count(observations: Sequence[RatingObservation], min_trials: int = 2) -> int:
    """Number of (user, item) pairs with fewer than ``min_trials`` trials."""
    if not observations:
        return 0
    sizes = observations_frame(observations).groupby(["user_id", "item_id"]).size()
    return int((sizes < min_trials).sum())


def variance_samples(
    observations: Sequence[RatingObservation], ddof: int = 0
) -> list[VarianceSample]:
    """Rating variance of every (user, item) pair across its trials.

    Args:
        observations: Rating observations.
        ddof: 0 for population variance (divide by n), 1 for sample variance.

    Returns:
        One sample per pair with at least two trials, ordered by user and item.
    """
    if ddof not in (0, 1):
        raise ValidationError(f"ddof must be 0 or 1: {ddof}")
    if not observations:
        return []
    grouped = observations_frame(observations).groupby(["user_id", "item_id"])["rating"]
    stats = grouped.agg(variance=lambda r: float(np.var(r.to_numpy(), ddof=ddof)), n="size")
    skipped = int((stats["n"] < 2).sum())
    if skipped:
        logger.warning(f"Skipped {skipped} pairs with fewer than 2 trials")
    stats = stats[stats["n"] >= 2]
    return [
        VarianceSample(str(user), str(item), float(row["variance"]), int(row["n"]))
        for (user, item), row in stats.iterrows()
    ]


def per_user_variances(samples: Sequence[VarianceSample]) -> dict[str, float]:
    """Mean pair variance per user."""
    if not samples:
        return {}
    frame = pd.DataFrame([(s.user_id, s.variance) for s in samples], columns=["user_id", "v"])
    return {str(u): float(v) for u, v in frame.groupby("user_id")["v"].mean().items()}


def pareto_ml_fit(samples: Sequence[float] | np.ndarray) -> ParetoFit:
    """Maximum likelihood Pareto fit with ``x_m = min`` and closed-form alpha.

    Zero samples lie outside the Pareto support; they are excluded and counted.

    Raises:
        ValidationError: If any sample is negative.
        DegenerateFitError: If fewer than two positive samples remain or all are equal.
    """
    values = np.asarray(samples, dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValidationError("Pareto samples must be finite and non-negative")
    positive = values[values > 0]
    excluded = int(values.size - positive.size)
    if positive.size < 2:
        raise DegenerateFitError(f"Pareto fit needs >= 2 positive samples, got {positive.size}")
    x_m = float(positive.min())
    log_sum = float(np.sum(np.log(positive / x_m)))
    if log_sum <= 0:
        raise DegenerateFitError("All positive samples are equal; Pareto alpha diverges")
    alpha = positive.size / log_sum
    logger.info(f"Pareto fit: x_m={x_m:.6g}, alpha={alpha:.6g} ({excluded} zero samples excluded)")
    return ParetoFit(x_m=x_m, alpha=float(alpha), n_used=int(positive.size), n_excluded=excluded)


def pareto_log_likelihood(samples: Sequence[float] | np.ndarray, x_m: float, alpha: float) -> float:
    """Pareto log-likelihood of positive samples (``-inf`` below ``x_m``)."""
    values = np.asarray(samples, dtype=float)
    return float(np.sum(pareto.logpdf(values, alpha, scale=x_m)))
