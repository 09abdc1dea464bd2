"""Plot-data emission: every figure-style output is written as a CSV table."""

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import pareto

from ..utils.rng import derive_rng
from .clustering import ClusterResult
from .cohort import ParetoFit, VarianceSample
from .datasets import write_csv
from .decoders import Estimate, decode, log_likelihood_grid
from .errors import ValidationError
from .models import DecoderVariant, PopulationResponse, SearchGrid, UserModel
from .population import rate_matrix, sample_response
from .user_model import RatingPMF, ReliabilityProfile

logger = logging.getLogger(__name__)

RASTER_COLUMNS = ["trial", "neuron_index", "preferred_value", "count"]


def raster_responses(
    model: UserModel, s: float, n_trials: int, seed: int
) -> list[PopulationResponse]:
    """Sample the responses shown in a raster; trial t draws from the (seed, t) stream."""
    if n_trials < 1:
        raise ValidationError(f"Number of trials must be >= 1: {n_trials}")
    return [
        sample_response(model.population, s, derive_rng(seed, trial))
        for trial in range(1, n_trials + 1)
    ]


def emit_raster(model: UserModel, s: float, n_trials: int, seed: int, path: str | Path) -> Path:
    """Write a spike raster: one row per (trial, neuron).

    Args:
        model: User model whose population encodes ``s``.
        s: Latent value.
        n_trials: Number of sampled responses.
        seed: Base seed; trial t uses the stream derived from (seed, t).
        path: Output CSV path.

    Returns:
        The written path.
    """
    preferred = model.population.preferred
    rows = [
        (trial, index + 1, float(preferred[index]), count)
        for trial, response in enumerate(raster_responses(model, s, n_trials, seed), start=1)
        for index, count in enumerate(response.counts)
    ]
    logger.info(f"Raster of {n_trials} trials x {model.population.size} neurons at s={s}")
    return write_csv(pd.DataFrame(rows, columns=RASTER_COLUMNS), path)


def profile_grid(model: UserModel) -> SearchGrid:
    """Grid of a decoder profile: the decoder's own grid, else one covering the population."""
    if model.decoder.grid is not None:
        return model.decoder.grid
    return SearchGrid.covering(model.population)


def decoder_profile(model: UserModel, response: PopulationResponse) -> pd.DataFrame:
    """Expected activity, log-likelihood and (for MAD) log-posterior over the grid.

    ``expected_activity`` is the summed expected population count at each ``s``.
    """
    grid = profile_grid(model)
    values = grid.values
    counts = np.asarray(response.counts)[None, :]
    frame = pd.DataFrame(
        {
            "s": values,
            "expected_activity": rate_matrix(model.population, values).sum(axis=1),
            "log_likelihood": log_likelihood_grid(model.population, counts, values)[0],
        }
    )
    if model.decoder.variant is DecoderVariant.MAD and model.decoder.prior is not None:
        frame["log_posterior"] = frame["log_likelihood"] + model.decoder.prior.evaluate(values)
    return frame


def emit_decoder_profile(
    model: UserModel,
    response: PopulationResponse,
    path: str | Path,
    rng: np.random.Generator,
    estimate_path: str | Path | None = None,
) -> tuple[Path, Path]:
    """Write the decoder profile of one response plus a one-row estimate record.

    Args:
        model: User model.
        response: Population response to decode.
        path: Profile CSV path.
        rng: Generator for MVD tie-breaking.
        estimate_path: Estimate CSV path (defaults to ``estimate.csv`` next to ``path``).

    Returns:
        Paths of the profile and the estimate files.
    """
    profile = write_csv(decoder_profile(model, response), path)
    estimate = decode(model.decoder, model.population, response, rng)
    target = Path(estimate_path) if estimate_path else profile.with_name("estimate.csv")
    record = pd.DataFrame(
        [(model.decoder.variant.value, estimate.value, estimate.rating)],
        columns=["decoder", "estimate", "rating"],
    )
    return profile, write_csv(record, target)


def emit_estimates(estimates: Mapping[str, Estimate], path: str | Path) -> Path:
    """Write one row per decoder: continuous estimate and discrete rating."""
    rows = [(name, e.value, e.rating) for name, e in estimates.items()]
    return write_csv(pd.DataFrame(rows, columns=["decoder", "estimate", "rating"]), path)


def emit_pmf(pmf: RatingPMF, path: str | Path) -> Path:
    """Write a rating pmf."""
    frame = pd.DataFrame({"rating": pmf.categories, "probability": pmf.probabilities})
    return write_csv(frame, path)


def emit_reliability(profile: ReliabilityProfile, path: str | Path) -> Path:
    """Write a reliability profile (MSE and maxMSE fraction per latent value)."""
    frame = pd.DataFrame(
        {
            "s": profile.s_values,
            "mse": profile.mse,
            "max_mse_fraction": profile.fractions,
            "variance": profile.variances,
        }
    )
    return write_csv(frame, path)


def emit_category_histogram(bins: Mapping[int, int], path: str | Path) -> Path:
    """Write pair counts by number of distinct categories used."""
    frame = pd.DataFrame(sorted(bins.items()), columns=["categories_used", "pairs"])
    return write_csv(frame, path)


def emit_variances(samples: Sequence[VarianceSample], path: str | Path) -> Path:
    """Write per-pair rating variances."""
    rows = [(v.user_id, v.item_id, v.variance, v.n_trials) for v in samples]
    frame = pd.DataFrame(rows, columns=["user_id", "item_id", "variance", "n_trials"])
    return write_csv(frame, path)


def emit_user_variances(variances: Mapping[str, float], path: str | Path) -> Path:
    """Write the mean pair variance of each user."""
    frame = pd.DataFrame(sorted(variances.items()), columns=["user_id", "mean_variance"])
    return write_csv(frame, path)


def emit_pareto_density(
    fit: ParetoFit, samples: Sequence[float], path: str | Path, n_bins: int = 20
) -> Path:
    """Write a variance histogram (density) beside the fitted Pareto density."""
    values = np.asarray([v for v in samples if v > 0], dtype=float)
    density, edges = np.histogram(values, bins=n_bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fitted = pareto.pdf(centers, fit.alpha, scale=fit.x_m)
    frame = pd.DataFrame(
        {"bin_lo": edges[:-1], "bin_hi": edges[1:], "density": density, "pareto_density": fitted}
    )
    return write_csv(frame, path)


def emit_assignments(result: ClusterResult, path: str | Path) -> Path:
    """Write cluster assignments sorted by user id."""
    frame = pd.DataFrame(sorted(result.assignments.items()), columns=["user_id", "cluster"])
    return write_csv(frame, path)
