"""Fitting user models to repeated rating logs.

The objective compares the empirical rating pmf of each item with the model pmfs
over a grid of latent values through the Kullback-Leibler divergence from the
epsilon-smoothed model. Model pmfs are tabulated by Monte Carlo from a fixed
stream, so the objective is deterministic in the parameters (common random
numbers).

Parameters and decoder are scored with the latent value of every item integrated
out over the grid (a soft minimum of the item's divergences at temperature
``1 / n_trials``), which is the multinomial marginal likelihood up to constants
that depend only on the data. Reported latent values are still the per-item
minimizers.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, rel_entr

from ..utils.rng import derive_rng, derive_seed, stable_key
from .errors import DegenerateResponseError, ValidationError
from .models import (
    DecoderVariant,
    Prior,
    RatingObservation,
    RatingScale,
    SearchGrid,
    UserModel,
)
from .user_model import RatingPMF, build_user_model, rating_pmf_table

logger = logging.getLogger(__name__)

# Objective value for parameter settings whose responses cannot be decoded.
_INFEASIBLE = 1e6

_SEARCHED = ("gain", "width", "baseline")


class _BudgetExhausted(Exception):
    """Raised inside the objective once the evaluation budget is used up."""


@dataclass(frozen=True)
class FitConfig:
    """Settings of the per-user model search."""

    decoders: tuple[DecoderVariant, ...] = tuple(DecoderVariant)
    gain_bounds: tuple[float, float] = (1.0, 500.0)
    baseline_bounds: tuple[float, float] = (0.0, 5.0)
    width_bounds: tuple[float, float] = (0.2, 3.0)
    initial_gain: float = 10.0
    initial_baseline: float = 0.5
    initial_width: float = 1.0
    n_neurons: int = 21
    margin: float = 1.0
    trials_per_eval: int = 200
    epsilon: float = 1e-3
    budget: int = 120  # objective evaluations per candidate decoder
    max_rounds: int = 4
    tolerance: float = 1e-3
    latent_step: float = 0.1
    grid_step: float = 5e-2
    mad_prior_sd: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        decoders = tuple(DecoderVariant.parse(d) for d in self.decoders)
        object.__setattr__(self, "decoders", decoders)
        if not decoders:
            raise ValidationError("At least one candidate decoder is required")
        if len(set(decoders)) != len(decoders):
            raise ValidationError(f"Candidate decoders repeat: {[d.value for d in decoders]}")
        for name, low in (("gain", 0.0), ("baseline", 0.0), ("width", 0.0)):
            lo, hi = getattr(self, f"{name}_bounds")
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValidationError(f"Empty {name} bounds: [{lo}, {hi}]")
            if lo < low or (name == "width" and lo <= 0):
                raise ValidationError(f"{name} bounds must lie in the valid range: [{lo}, {hi}]")
        if self.epsilon <= 0:
            raise ValidationError(f"Smoothing epsilon must be > 0: {self.epsilon}")
        if self.budget < 1:
            raise ValidationError(f"Search budget must be >= 1: {self.budget}")
        if self.trials_per_eval < 1:
            raise ValidationError(f"Trials per evaluation must be >= 1: {self.trials_per_eval}")
        if self.n_neurons < 1 or self.margin < 0:
            raise ValidationError("Fitting needs n_neurons >= 1 and margin >= 0")
        if self.latent_step <= 0 or self.grid_step <= 0:
            raise ValidationError("Latent and grid steps must be > 0")

    def clipped_start(self) -> dict[str, float]:
        """Initial parameters moved inside the bounds."""
        return {
            name: float(np.clip(getattr(self, f"initial_{name}"), *getattr(self, f"{name}_bounds")))
            for name in _SEARCHED
        }

    def to_dict(self) -> dict[str, Any]:
        """Convert config to dictionary."""
        return {
            "decoders": [d.value for d in self.decoders],
            "gain_bounds": list(self.gain_bounds),
            "baseline_bounds": list(self.baseline_bounds),
            "width_bounds": list(self.width_bounds),
            "initial_gain": self.initial_gain,
            "initial_baseline": self.initial_baseline,
            "initial_width": self.initial_width,
            "n_neurons": self.n_neurons,
            "margin": self.margin,
            "trials_per_eval": self.trials_per_eval,
            "epsilon": self.epsilon,
            "budget": self.budget,
            "max_rounds": self.max_rounds,
            "tolerance": self.tolerance,
            "latent_step": self.latent_step,
            "grid_step": self.grid_step,
            "mad_prior_sd": self.mad_prior_sd,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class CandidateScore:
    """Best parameters and divergence reached by one candidate decoder."""

    variant: DecoderVariant
    divergence: float
    gain: float
    baseline: float
    width: float
    evaluations: int

    def to_dict(self) -> dict[str, Any]:
        """Convert candidate score to dictionary."""
        return {
            "variant": self.variant.value,
            "divergence": self.divergence,
            "gain": self.gain,
            "baseline": self.baseline,
            "width": self.width,
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CandidateScore":
        """Create candidate score from dictionary."""
        return cls(
            variant=DecoderVariant.parse(data["variant"]),
            divergence=float(data["divergence"]),
            gain=float(data["gain"]),
            baseline=float(data["baseline"]),
            width=float(data["width"]),
            evaluations=int(data["evaluations"]),
        )


@dataclass(frozen=True)
class FitResult:
    """Fitted neural parameters, decoder and latent values of one user."""

    user_id: str
    variant: DecoderVariant
    gain: float
    baseline: float
    width: float
    n_neurons: int
    margin: float
    scale: RatingScale
    latent_values: dict[str, float]
    divergence: float
    evaluations: int
    prior: Prior | None = None
    candidates: tuple[CandidateScore, ...] = ()
    mean_model_variance: float = 0.0
    sparse_data: bool = False
    grid_step: float = 5e-2

    def __post_init__(self) -> None:
        if self.divergence < 0:
            raise ValidationError(f"Divergence must be >= 0: {self.divergence}")
        lo, hi = self.scale.minimum - self.margin, self.scale.maximum + self.margin
        for item, s in self.latent_values.items():
            if s < lo - 1e-9 or s > hi + 1e-9:
                raise ValidationError(f"Latent value {s} of item '{item}' outside [{lo}, {hi}]")

    def to_user_model(self) -> UserModel:
        """Rebuild the fitted user model."""
        return build_user_model(
            self.variant,
            n_neurons=self.n_neurons,
            scale=self.scale,
            margin=self.margin,
            gain=self.gain,
            baseline=self.baseline,
            width=self.width,
            prior=self.prior,
            grid_step=self.grid_step,
            label=self.user_id,
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert fit result to dictionary."""
        return {
            "user_id": self.user_id,
            "variant": self.variant.value,
            "gain": self.gain,
            "baseline": self.baseline,
            "width": self.width,
            "n_neurons": self.n_neurons,
            "margin": self.margin,
            "scale": self.scale.to_dict(),
            "latent_values": dict(self.latent_values),
            "divergence": self.divergence,
            "evaluations": self.evaluations,
            "prior": self.prior.to_dict() if self.prior else None,
            "candidates": [c.to_dict() for c in self.candidates],
            "mean_model_variance": self.mean_model_variance,
            "sparse_data": self.sparse_data,
            "grid_step": self.grid_step,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitResult":
        """Create fit result from dictionary."""
        return cls(
            user_id=str(data["user_id"]),
            variant=DecoderVariant.parse(data["variant"]),
            gain=float(data["gain"]),
            baseline=float(data["baseline"]),
            width=float(data["width"]),
            n_neurons=int(data["n_neurons"]),
            margin=float(data["margin"]),
            scale=RatingScale.from_dict(data["scale"]),
            latent_values={str(k): float(v) for k, v in data["latent_values"].items()},
            divergence=float(data["divergence"]),
            evaluations=int(data["evaluations"]),
            prior=Prior.from_dict(data["prior"]) if data.get("prior") else None,
            candidates=tuple(CandidateScore.from_dict(c) for c in data.get("candidates", [])),
            mean_model_variance=float(data.get("mean_model_variance", 0.0)),
            sparse_data=bool(data.get("sparse_data", False)),
            grid_step=float(data.get("grid_step", 5e-2)),
        )


def divergence(empirical: RatingPMF, model: RatingPMF, epsilon: float = 1e-3) -> float:
    """Kullback-Leibler divergence of the empirical pmf from the smoothed model pmf.

    The model pmf gets ``epsilon`` added to every category and is renormalized;
    the empirical pmf is used as is, with ``0 * log 0 = 0``. The score is finite,
    non-negative and zero iff the empirical pmf equals the smoothed model.

    Raises:
        ValidationError: If the category sets differ or epsilon is not positive.
    """
    if empirical.categories != model.categories:
        raise ValidationError("Divergence needs pmfs over the same categories")
    if epsilon <= 0:
        raise ValidationError(f"Smoothing epsilon must be > 0: {epsilon}")
    value = divergence_matrix(empirical.as_array()[None, :], model.as_array()[None, :], epsilon)
    return float(value[0, 0])


def divergence_matrix(empirical: np.ndarray, table: np.ndarray, epsilon: float) -> np.ndarray:
    """Divergences of I empirical pmfs from G smoothed model pmfs.

    Args:
        empirical: Array (I, C) of empirical pmfs.
        table: Array (G, C) of model pmfs.
        epsilon: Smoothing constant.

    Returns:
        Array (I, G) of non-negative divergences.
    """
    smoothed = table + epsilon
    smoothed = smoothed / smoothed.sum(axis=-1, keepdims=True)
    scores = rel_entr(empirical[:, None, :], smoothed[None, :, :]).sum(axis=-1)
    return np.maximum(scores, 0.0)


def marginal_divergence(scores: np.ndarray, trials: Sequence[int]) -> np.ndarray:
    """Per-item divergence with the latent value integrated out over the grid.

    For an item rated ``n`` times the value is ``-log(mean(exp(-n * d))) / n``
    over the item's divergences ``d``; it lies between the minimum and the mean
    of ``d``.

    Args:
        scores: Array (I, G) of divergences from ``divergence_matrix``.
        trials: Number of trials behind each of the I empirical pmfs.

    Returns:
        Array (I,) of non-negative scores.
    """
    n = np.asarray(trials, dtype=float)
    if n.shape != (scores.shape[0],) or np.any(n < 1):
        raise ValidationError("Need one trial count >= 1 per empirical pmf")
    log_mean = logsumexp(-n[:, None] * scores, axis=1) - math.log(scores.shape[1])
    return np.maximum(-log_mean / n, scores.min(axis=1))


def latent_grid(scale: RatingScale, margin: float, step: float) -> SearchGrid:
    """Latent-value grid spanning the extended scale range."""
    return SearchGrid(scale.minimum - margin, scale.maximum + margin, step)


def latent_objective(
    model: UserModel, empirical: RatingPMF, config: FitConfig, seed: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Divergence of an empirical pmf from the model pmf at every latent grid point.

    Returns:
        Pair (grid values, divergences).
    """
    grid = latent_grid(model.scale, model.population.margin, config.latent_step)
    stream = derive_rng(config.seed if seed is None else seed)
    table = rating_pmf_table(model, grid.values, config.trials_per_eval, stream)
    scores = divergence_matrix(empirical.as_array()[None, :], table, config.epsilon)[0]
    return grid.values, scores


def fit_latent_value(
    model: UserModel, empirical: RatingPMF, config: FitConfig, seed: int | None = None
) -> float:
    """Latent value whose model pmf is closest to the empirical pmf.

    The minimum is taken over the latent grid; ties go to the middle tied grid
    point (the lower of the two middle ones for an even count), so a plateau of
    equally good values is represented by its centre.
    """
    values, scores = latent_objective(model, empirical, config, seed)
    return float(values[int(central_argmin(scores))])


def central_argmin(scores: np.ndarray) -> np.ndarray:
    """Index of the middle minimizer along the last axis."""
    minimal = scores == scores.min(axis=-1, keepdims=True)
    ranks = np.cumsum(minimal, axis=-1)
    middle = (minimal.sum(axis=-1, keepdims=True) + 1) // 2
    return np.argmax(minimal & (ranks == middle), axis=-1)


@dataclass
class _Evaluation:
    value: float
    params: dict[str, float]
    latent_index: np.ndarray
    table: np.ndarray | None


@dataclass
class _CandidateSearch:
    """Coordinate search for one candidate decoder with an evaluation budget."""

    variant: DecoderVariant
    empirical: np.ndarray
    trials: Sequence[int]
    scale: RatingScale
    config: FitConfig
    seed: int
    evaluations: int = 0
    best: _Evaluation | None = None
    cache: dict[tuple[float, float, float], float] = field(default_factory=dict)
    grid: SearchGrid = field(init=False)
    prior: Prior | None = field(init=False)

    def __post_init__(self) -> None:
        cfg = self.config
        self.grid = latent_grid(self.scale, cfg.margin, cfg.latent_step)
        self.prior = (
            Prior.gaussian(self.scale.midpoint, cfg.mad_prior_sd)
            if self.variant is DecoderVariant.MAD
            else None
        )

    def model(self, params: dict[str, float]) -> UserModel:
        cfg = self.config
        return build_user_model(
            self.variant,
            n_neurons=cfg.n_neurons,
            scale=self.scale,
            margin=cfg.margin,
            prior=self.prior,
            grid_step=cfg.grid_step,
            **params,
        )

    def evaluate(self, params: dict[str, float]) -> float:
        key = (params["gain"], params["baseline"], params["width"])
        if key in self.cache:
            return self.cache[key]
        if self.evaluations >= self.config.budget:
            raise _BudgetExhausted
        self.evaluations += 1
        stream = derive_rng(self.seed)
        try:
            table = rating_pmf_table(
                self.model(params), self.grid.values, self.config.trials_per_eval, stream
            )
        except DegenerateResponseError:
            logger.debug(f"{self.variant.value}: undecodable responses at {params}")
            self.cache[key] = _INFEASIBLE
            if self.best is None:
                self.best = _Evaluation(_INFEASIBLE, dict(params), np.zeros(0, dtype=int), None)
            return _INFEASIBLE
        scores = divergence_matrix(self.empirical, table, self.config.epsilon)
        value = float(marginal_divergence(scores, self.trials).sum())
        self.cache[key] = value
        if self.best is None or value < self.best.value:
            self.best = _Evaluation(value, dict(params), central_argmin(scores), table)
        return value

    @property
    def result(self) -> _Evaluation:
        if self.best is None:
            raise _BudgetExhausted
        return self.best

    def line_search(self, name: str) -> None:
        lo, hi = getattr(self.config, f"{name}_bounds")
        if hi - lo <= 1e-12:
            return
        base = dict(self.result.params)
        log_space = name in ("gain", "width") and lo > 0
        to_param: Callable[[float], float] = math.exp if log_space else float
        bounds = (math.log(lo), math.log(hi)) if log_space else (lo, hi)

        def objective(x: float) -> float:
            value = float(np.clip(to_param(x), lo, hi))
            return self.evaluate({**base, name: value})

        remaining = self.config.budget - self.evaluations
        minimize_scalar(
            objective,
            bounds=bounds,
            method="bounded",
            options={"maxiter": max(1, remaining), "xatol": 1e-3},
        )

    def run(self) -> _Evaluation:
        self.evaluate(self.config.clipped_start())
        previous = self.result.value
        for round_index in range(self.config.max_rounds):
            try:
                for name in _SEARCHED:
                    self.line_search(name)
            except _BudgetExhausted:
                logger.debug(f"{self.variant.value}: budget exhausted in round {round_index + 1}")
                break
            current = self.result.value
            improvement = (previous - current) / max(abs(previous), 1e-12)
            logger.debug(
                f"{self.variant.value}: round {round_index + 1} objective {current:.6g} "
                f"({self.evaluations} evaluations)"
            )
            if improvement < self.config.tolerance:
                break
            previous = current
        return self.result


def _empirical_pmfs(
    observations: Sequence[RatingObservation], scale: RatingScale
) -> tuple[str, list[str], np.ndarray, list[int]]:
    if not observations:
        raise ValidationError("Cannot fit a user model without observations")
    users = {o.user_id for o in observations}
    if len(users) != 1:
        raise ValidationError(f"Observations must belong to one user, got {sorted(users)}")
    by_item: dict[str, list[float]] = {}
    for obs in observations:
        by_item.setdefault(obs.item_id, []).append(obs.rating)
    items = sorted(by_item)
    pmfs = np.vstack([RatingPMF.from_ratings(by_item[i], scale).as_array() for i in items])
    trials = [len(by_item[i]) for i in items]
    return users.pop(), items, pmfs, trials


def fit_user_model(
    observations: Sequence[RatingObservation], scale: RatingScale, config: FitConfig
) -> FitResult:
    """Fit neural parameters, latent values and decoder to one user's ratings.

    For every candidate decoder a coordinate search brackets gain, width and
    baseline in turn within their bounds, minimizing the summed divergence of the
    items with their latent values integrated out (see ``marginal_divergence``).
    The search stops at the evaluation budget or when a round improves the score
    by less than ``config.tolerance`` (relative). The candidate with the lowest
    score wins; ties go to the earlier candidate. The latent value reported for
    an item is the grid point minimizing its divergence under the winning model.

    Args:
        observations: Ratings of a single user.
        scale: Rating scale.
        config: Search settings.

    Returns:
        The fitted result including every candidate's best score.

    Raises:
        ValidationError: If there are no observations or they span several users.
    """
    user_id, items, empirical, trials = _empirical_pmfs(observations, scale)
    sparse = len(items) < 2 or min(trials) < 2
    if sparse:
        logger.warning(
            f"User '{user_id}' has sparse data ({len(items)} items, min {min(trials)} trials)"
        )
    user_seed = derive_seed(config.seed, stable_key(user_id))
    logger.info(f"Fitting user '{user_id}' on {len(items)} items")

    searches = []
    for index, variant in enumerate(config.decoders):
        search = _CandidateSearch(
            variant, empirical, trials, scale, config, derive_seed(user_seed, index)
        )
        search.run()
        searches.append(search)
    candidates = tuple(
        CandidateScore(
            variant=s.variant,
            divergence=s.result.value,
            evaluations=s.evaluations,
            **s.result.params,
        )
        for s in searches
    )
    winner_index = min(range(len(searches)), key=lambda i: candidates[i].divergence)
    winner = searches[winner_index]
    best = winner.result
    if best.table is None or best.value >= _INFEASIBLE:
        raise DegenerateResponseError(f"No candidate decoder could reproduce user '{user_id}'")

    cats = scale.category_array
    rows = best.table[best.latent_index]
    means = rows @ cats
    variances = rows @ cats**2 - means**2
    values = winner.grid.values
    latent = {item: float(values[j]) for item, j in zip(items, best.latent_index, strict=True)}
    logger.info(
        f"User '{user_id}': {winner.variant.value} wins with divergence {best.value:.6g}"
    )
    return FitResult(
        user_id=user_id,
        variant=winner.variant,
        gain=best.params["gain"],
        baseline=best.params["baseline"],
        width=best.params["width"],
        n_neurons=config.n_neurons,
        margin=config.margin,
        scale=scale,
        latent_values=latent,
        divergence=best.value,
        evaluations=sum(s.evaluations for s in searches),
        prior=winner.prior,
        candidates=candidates,
        mean_model_variance=float(np.mean(np.maximum(variances, 0.0))),
        sparse_data=sparse,
        grid_step=config.grid_step,
    )


def fit_cohort(
    observations: Sequence[RatingObservation], scale: RatingScale, config: FitConfig
) -> list[FitResult]:
    """Fit every user in a set of observations, ordered by user id."""
    by_user: dict[str, list[RatingObservation]] = {}
    for obs in observations:
        by_user.setdefault(obs.user_id, []).append(obs)
    if not by_user:
        raise ValidationError("Cannot fit a cohort without observations")
    return [fit_user_model(by_user[user], scale, config) for user in sorted(by_user)]
