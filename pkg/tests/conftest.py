"""Test configuration and fixtures."""

from pathlib import Path

import numpy as np
import pytest

from neurorating.core.models import (
    DecoderVariant,
    Population,
    RatingObservation,
    RatingScale,
    UserModel,
)
from neurorating.core.population import build_population
from neurorating.core.user_model import build_user_model


@pytest.fixture
def scale() -> RatingScale:
    """Provide the default 1-5 star scale."""
    return RatingScale()


@pytest.fixture
def population(scale: RatingScale) -> Population:
    """Provide the default 21-neuron population over the star scale."""
    return build_population(21, scale=scale)


@pytest.fixture
def small_population(scale: RatingScale) -> Population:
    """Provide a 5-neuron population with one neuron per category."""
    return build_population(5, scale=scale, gain=10.0, baseline=1.0, width=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    """Provide a seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def mld_model() -> UserModel:
    """Provide an MLD user model with a coarse grid."""
    return build_user_model(DecoderVariant.MLD, grid_step=1e-2, label="mld")


@pytest.fixture
def wad_model() -> UserModel:
    """Provide the default WAD user model."""
    return build_user_model(DecoderVariant.WAD, label="wad")


@pytest.fixture
def observations() -> list[RatingObservation]:
    """Provide two users re-rating two items three times.

    u1 is constant on i1 and varies on i2; u2 varies on both items.
    """
    rows = [
        ("u1", "i1", [3, 3, 3]),
        ("u1", "i2", [2, 3, 4]),
        ("u2", "i1", [1, 2, 1]),
        ("u2", "i2", [5, 4, 5]),
    ]
    return [
        RatingObservation(user, item, trial, float(rating))
        for user, item, ratings in rows
        for trial, rating in enumerate(ratings, start=1)
    ]


@pytest.fixture
def ratings_csv(tmp_path: Path, observations: list[RatingObservation]) -> Path:
    """Write the observation fixture to a CSV file.

    Returns:
        Path to the ratings CSV.
    """
    path = tmp_path / "ratings.csv"
    lines = ["user_id,item_id,trial,rating"]
    lines += [f"{o.user_id},{o.item_id},{o.trial},{int(o.rating)}" for o in observations]
    path.write_text("\n".join(lines) + "\n")
    return path
