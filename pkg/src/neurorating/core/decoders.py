"""Decoder functions translating population responses into ratings.

Four decoders are provided: mode value (MVD), weighted average (WAD), maximum
likelihood (MLD) and maximum a posteriori (MAD). Each has a single-response form
returning an ``Estimate`` and a batch form working on a (trials, N) count matrix.
MLD and MAD scan a ``SearchGrid`` exhaustively; ties go to the smallest stimulus.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import DegenerateResponseError, UndecodableResponseError, ValidationError
from .models import (
    DecoderSpec,
    DecoderVariant,
    Population,
    PopulationResponse,
    Prior,
    RatingScale,
    SearchGrid,
)
from .population import rate_matrix

logger = logging.getLogger(__name__)

# Upper bound on (trials x grid points) evaluated per chunk.
_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True, eq=False)
class Estimate:
    """Decoded stimulus estimate and the resulting discrete rating."""

    value: float
    rating: float
    diagnostics: np.ndarray | None = None


def discretize_many(values: np.ndarray, scale: RatingScale) -> np.ndarray:
    """Map continuous estimates to categories: clip, then round to nearest.

    Exact midpoints between two categories round up.

    Raises:
        ValidationError: If any value is not finite.
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(values)):
        raise ValidationError("Cannot discretize a non-finite estimate")
    cats = scale.category_array
    clipped = np.clip(values, scale.minimum, scale.maximum)
    dist = np.abs(cats[None, :] - clipped[:, None])
    near = dist <= dist.min(axis=1, keepdims=True) + 1e-12
    last = cats.size - 1 - np.argmax(near[:, ::-1], axis=1)
    return cats[last]


def discretize(value: float, scale: RatingScale) -> float:
    """Discretize one continuous estimate to a scale category."""
    return float(discretize_many(np.array([value]), scale)[0])


def _as_matrix(population: Population, counts: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(counts))
    if matrix.shape[1] != population.size:
        raise ValidationError(
            f"Response length {matrix.shape[1]} does not match population size {population.size}"
        )
    return matrix


def _estimate(population: Population, value: float, curve: np.ndarray | None = None) -> Estimate:
    return Estimate(value=value, rating=discretize(value, population.scale), diagnostics=curve)


def decode_mvd_batch(
    population: Population, counts: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Mode value decoding of many responses.

    The preferred value of a maximal-count neuron is returned; ties among maxima
    are broken uniformly at random.
    """
    matrix = _as_matrix(population, counts)
    keys = rng.random(matrix.shape)
    tied = matrix == matrix.max(axis=1, keepdims=True)
    winners = np.argmax(np.where(tied, keys, -1.0), axis=1)
    return population.preferred[winners]


def decode_mvd(
    population: Population, response: PopulationResponse, rng: np.random.Generator
) -> Estimate:
    """Mode value decoder: ``s_hat = s_p[argmax r]`` with random tie-break."""
    value = float(decode_mvd_batch(population, response.as_array(), rng)[0])
    return _estimate(population, value)


def decode_wad_batch(population: Population, counts: np.ndarray) -> np.ndarray:
    """Weighted average decoding of many responses.

    Raises:
        DegenerateResponseError: If any response has no spikes at all.
    """
    matrix = _as_matrix(population, counts)
    totals = matrix.sum(axis=1)
    if np.any(totals == 0):
        raise DegenerateResponseError("Weighted average undefined for an all-zero response")
    return (matrix @ population.preferred) / totals


def decode_wad(population: Population, response: PopulationResponse) -> Estimate:
    """Weighted average decoder: ``s_hat = sum(r_i s_p,i) / sum(r_i)``."""
    value = float(decode_wad_batch(population, response.as_array())[0])
    return _estimate(population, value)


def log_likelihood_grid(
    population: Population, counts: np.ndarray, s_values: np.ndarray
) -> np.ndarray:
    """Poisson log-likelihood of many responses at many stimulus values.

    The ``log r_i!`` term is omitted; it does not depend on ``s``.

    Returns:
        Array of shape (trials, G); ``-inf`` where a spiking neuron has zero rate.
    """
    matrix = _as_matrix(population, counts).astype(float)
    rates = rate_matrix(population, s_values)
    silent = rates <= 0
    log_rates = np.log(np.where(silent, 1.0, rates))
    result = matrix @ log_rates.T - rates.sum(axis=1)[None, :]
    if silent.any():
        impossible = (matrix > 0).astype(float) @ silent.T.astype(float) > 0
        result = np.where(impossible, -np.inf, result)
    return result


def log_likelihood(population: Population, response: PopulationResponse, s: float) -> float:
    """Log-likelihood ``sum_i [r_i ln f_i(s) - f_i(s)]`` of one response.

    The constant ``-sum ln r_i!`` is dropped. Returns ``-inf`` when a neuron
    with zero expected rate has spiked.
    """
    counts = _as_matrix(population, response.as_array())[0]
    rates = rate_matrix(population, np.array([s]))[0]
    return float(np.sum(xlogy(counts, rates) - rates))


def log_posterior(
    population: Population, response: PopulationResponse, prior: Prior, s: float
) -> float:
    """Unnormalized log posterior: log-likelihood plus log prior at ``s``."""
    return log_likelihood(population, response, s) + float(prior.evaluate(s))


def _grid_argmax(
    population: Population,
    counts: np.ndarray,
    grid: SearchGrid,
    prior: Prior | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    matrix = _as_matrix(population, counts)
    values = grid.values
    prior_logs = prior.evaluate(values) if prior is not None else None
    chunk = max(1, _CHUNK_CELLS // values.size)
    estimates = np.empty(matrix.shape[0])
    last_curve = None
    for start in range(0, matrix.shape[0], chunk):
        curves = log_likelihood_grid(population, matrix[start : start + chunk], values)
        if prior_logs is not None:
            curves = curves + prior_logs[None, :]
        best = np.argmax(curves, axis=1)
        if np.any(np.isneginf(curves[np.arange(curves.shape[0]), best])):
            raise UndecodableResponseError("All grid points have zero likelihood")
        estimates[start : start + chunk] = values[best]
        last_curve = curves[-1]
    single = last_curve if matrix.shape[0] == 1 else None
    return estimates, single


def decode_mld_batch(population: Population, counts: np.ndarray, grid: SearchGrid) -> np.ndarray:
    """Maximum likelihood decoding of many responses by exhaustive grid scan."""
    return _grid_argmax(population, counts, grid, None)[0]


def decode_mld(population: Population, response: PopulationResponse, grid: SearchGrid) -> Estimate:
    """Maximum likelihood decoder; diagnostics hold the log-likelihood profile."""
    estimates, curve = _grid_argmax(population, response.as_array(), grid, None)
    return _estimate(population, float(estimates[0]), curve)


def decode_mad_batch(
    population: Population, counts: np.ndarray, prior: Prior | None, grid: SearchGrid
) -> np.ndarray:
    """Maximum a posteriori decoding of many responses (uniform prior if None)."""
    return _grid_argmax(population, counts, grid, prior or Prior.uniform())[0]


def decode_mad(
    population: Population,
    response: PopulationResponse,
    prior: Prior | None,
    grid: SearchGrid,
) -> Estimate:
    """Maximum a posteriori decoder; diagnostics hold the log-posterior profile."""
    estimates, curve = _grid_argmax(
        population, response.as_array(), grid, prior or Prior.uniform()
    )
    return _estimate(population, float(estimates[0]), curve)


def _require_grid(spec: DecoderSpec, population: Population) -> SearchGrid:
    return spec.grid if spec.grid is not None else SearchGrid.covering(population)


def decode_batch(
    spec: DecoderSpec,
    population: Population,
    counts: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Decode many responses with the decoder named by ``spec``.

    Returns:
        Array of continuous estimates, one per response row.
    """
    variant = spec.variant
    if variant is DecoderVariant.MVD:
        return decode_mvd_batch(population, counts, rng)
    if variant is DecoderVariant.WAD:
        return decode_wad_batch(population, counts)
    if variant is DecoderVariant.MLD:
        return decode_mld_batch(population, counts, _require_grid(spec, population))
    return decode_mad_batch(population, counts, spec.prior, _require_grid(spec, population))


def decode(
    spec: DecoderSpec,
    population: Population,
    response: PopulationResponse,
    rng: np.random.Generator,
) -> Estimate:
    """Decode one response with the decoder named by ``spec``."""
    variant = spec.variant
    if variant is DecoderVariant.MVD:
        return decode_mvd(population, response, rng)
    if variant is DecoderVariant.WAD:
        return decode_wad(population, response)
    if variant is DecoderVariant.MLD:
        return decode_mld(population, response, _require_grid(spec, population))
    return decode_mad(population, response, spec.prior, _require_grid(spec, population))
