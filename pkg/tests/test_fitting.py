"""Tests for fitting user models to rating logs."""

import math
import time

import numpy as np
import pytest

from neurorating.core.clustering import cluster_users, featurize
from neurorating.core.cohort import archetype_model, draw_latent_values, simulate_cohort
from neurorating.core.errors import ValidationError
from neurorating.core.fitting import (
    CandidateScore,
    FitConfig,
    FitResult,
    central_argmin,
    divergence,
    divergence_matrix,
    fit_cohort,
    fit_latent_value,
    fit_user_model,
    latent_grid,
    latent_objective,
    marginal_divergence,
)
from neurorating.core.models import (
    DecoderVariant,
    Prior,
    RatingObservation,
    RatingScale,
    UserModel,
)
from neurorating.core.user_model import (
    RatingPMF,
    build_user_model,
    pmf_variance,
    rating_pmf_mc,
)


@pytest.fixture
def quick_config() -> FitConfig:
    """Provide a small, fast search configuration."""
    return FitConfig(
        decoders=(DecoderVariant.MVD, DecoderVariant.WAD),
        trials_per_eval=40,
        budget=8,
        max_rounds=2,
        latent_step=0.25,
        seed=3,
    )


def _user(observations: list[RatingObservation], user_id: str) -> list[RatingObservation]:
    return [o for o in observations if o.user_id == user_id]


class TestDivergence:
    """Test the smoothed Kullback-Leibler divergence."""

    def test_identical_is_zero(self, scale: RatingScale) -> None:
        """Test an empirical pmf equal to the smoothed model scores zero."""
        model = np.array([0.0, 0.2, 0.5, 0.3, 0.0])
        smoothed = (model + 1e-3) / (model + 1e-3).sum()
        empirical = RatingPMF(scale.categories, tuple(smoothed))

        value = divergence(empirical, RatingPMF(scale.categories, tuple(model)), epsilon=1e-3)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_identical_with_vanishing_epsilon(self, scale: RatingScale) -> None:
        """Test identical pmfs score zero as the smoothing vanishes."""
        pmf = RatingPMF(scale.categories, (0.1, 0.2, 0.4, 0.2, 0.1))

        assert divergence(pmf, pmf, epsilon=1e-12) == pytest.approx(0.0, abs=1e-9)

    def test_only_model_is_smoothed(self, scale: RatingScale) -> None:
        """Test the closed form with empirical zeros contributing nothing."""
        empirical = RatingPMF(scale.categories, (0.0, 0.0, 1.0, 0.0, 0.0))
        model = RatingPMF(scale.categories, (0.0, 0.5, 0.0, 0.5, 0.0))

        assert divergence(empirical, model, epsilon=1e-3) == pytest.approx(6.912743, abs=1e-6)
        assert divergence(empirical, model, epsilon=1e-3) == pytest.approx(math.log(1005.0))

    def test_one_hot_against_uniform(self, scale: RatingScale) -> None:
        """Test a one-hot pmf against the uniform pmf tends to ln 5."""
        one_hot = RatingPMF(scale.categories, (0.0, 0.0, 1.0, 0.0, 0.0))
        uniform = RatingPMF(scale.categories, (0.2,) * 5)

        assert divergence(one_hot, uniform, epsilon=1e-9) == pytest.approx(math.log(5), rel=1e-6)

    def test_finite_with_zeros(self, scale: RatingScale) -> None:
        """Test disjoint supports still give a finite positive value."""
        first = RatingPMF(scale.categories, (1.0, 0.0, 0.0, 0.0, 0.0))
        second = RatingPMF(scale.categories, (0.0, 0.0, 0.0, 0.0, 1.0))

        value = divergence(first, second)
        assert math.isfinite(value)
        assert value > 0

    def test_non_negative(self, scale: RatingScale) -> None:
        """Test random pmf pairs never score below zero."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, q = rng.dirichlet(np.ones(5), size=2)
            p, q = p / p.sum(), q / q.sum()
            first = RatingPMF(scale.categories, tuple(p))
            second = RatingPMF(scale.categories, tuple(q))
            assert divergence(first, second) >= 0.0

    def test_category_mismatch(self, scale: RatingScale) -> None:
        """Test rejecting pmfs over different categories."""
        other = RatingPMF((0.0, 1.0), (0.5, 0.5))

        with pytest.raises(ValidationError, match="same categories"):
            divergence(RatingPMF(scale.categories, (0.2,) * 5), other)

    def test_epsilon_must_be_positive(self, scale: RatingScale) -> None:
        """Test rejecting zero smoothing."""
        pmf = RatingPMF(scale.categories, (0.2,) * 5)

        with pytest.raises(ValidationError, match="epsilon"):
            divergence(pmf, pmf, epsilon=0.0)

    def test_matrix_matches_pairwise(self, scale: RatingScale) -> None:
        """Test the (I, G) matrix agrees with pairwise divergences."""
        rng = np.random.default_rng(1)
        empirical = rng.dirichlet(np.ones(5), size=3)
        table = rng.dirichlet(np.ones(5), size=4)
        matrix = divergence_matrix(empirical, table, 1e-3)

        assert matrix.shape == (3, 4)
        first = RatingPMF(scale.categories, tuple(empirical[2] / empirical[2].sum()))
        second = RatingPMF(scale.categories, tuple(table[1] / table[1].sum()))
        assert matrix[2, 1] == pytest.approx(divergence(first, second), rel=1e-9)


class TestMarginalDivergence:
    """Test the latent-marginalised item score."""

    def test_between_minimum_and_mean(self) -> None:
        """Test the score lies between the minimum and the mean divergence."""
        scores = np.random.default_rng(2).uniform(0.0, 3.0, size=(6, 40))
        marginal = marginal_divergence(scores, [5, 5, 3, 1, 10, 2])

        assert np.all(marginal >= scores.min(axis=1) - 1e-12)
        assert np.all(marginal <= scores.mean(axis=1) + 1e-12)

    def test_closed_form(self) -> None:
        """Test one item against the log-mean-exp formula."""
        scores = np.array([[0.0, 1.0, 2.0]])
        expected = -math.log((1.0 + math.exp(-2.0) + math.exp(-4.0)) / 3.0) / 2.0

        assert marginal_divergence(scores, [2])[0] == pytest.approx(expected)

    def test_broad_fit_beats_narrow_fit(self) -> None:
        """Test a pmf matched over many latent values scores below one matched once."""
        broad = np.array([[0.0] * 10 + [5.0] * 30])
        narrow = np.array([[0.0] + [5.0] * 39])

        assert marginal_divergence(broad, [5])[0] < marginal_divergence(narrow, [5])[0]
        assert broad.min() == narrow.min()

    def test_trial_counts_checked(self) -> None:
        """Test rejecting a missing or zero trial count."""
        with pytest.raises(ValidationError, match="trial count"):
            marginal_divergence(np.zeros((2, 3)), [5])
        with pytest.raises(ValidationError, match="trial count"):
            marginal_divergence(np.zeros((2, 3)), [5, 0])


class TestCentralArgmin:
    """Test the tie rule of the latent search."""

    def test_middle_of_plateau(self) -> None:
        """Test a run of tied minima resolves to its middle point."""
        assert central_argmin(np.array([3.0, 1.0, 1.0, 1.0, 2.0])) == 2
        assert central_argmin(np.array([1.0, 1.0, 2.0, 1.0, 1.0])) == 1

    def test_rows(self) -> None:
        """Test each row of a matrix is resolved separately."""
        scores = np.array([[0.0, 1.0, 2.0], [2.0, 0.5, 0.5]])

        np.testing.assert_array_equal(central_argmin(scores), [0, 1])


class TestFitLatentValue:
    """Test the latent-value search for a fixed model."""

    def test_extreme_ratings(self, scale: RatingScale) -> None:
        """Test all-5 and all-1 ratings map to the scale ends."""
        model = build_user_model("MLD", gain=40.0, grid_step=1e-2)
        config = FitConfig(trials_per_eval=200, latent_step=0.1, seed=1)

        high = fit_latent_value(model, RatingPMF.from_ratings([5, 5, 5], scale), config)
        low = fit_latent_value(model, RatingPMF.from_ratings([1, 1, 1], scale), config)

        assert high >= 4.5
        assert low <= 1.5

    def test_objective_minimum(self, scale: RatingScale) -> None:
        """Test the fitted value minimizes the returned objective."""
        model = build_user_model("MVD", gain=20.0)
        config = FitConfig(trials_per_eval=100, latent_step=0.2)
        empirical = RatingPMF.from_ratings([3, 3, 4], scale)

        values, scores = latent_objective(model, empirical, config, seed=5)
        fitted = fit_latent_value(model, empirical, config, seed=5)

        assert values[0] == 1.0
        assert values[-1] == 5.0
        assert scores[np.flatnonzero(values == fitted)[0]] == scores.min()
        assert np.all(scores >= 0)

    def test_deterministic(self, scale: RatingScale, wad_model: UserModel) -> None:
        """Test the same seed gives the same latent value."""
        empirical = RatingPMF.from_ratings([2, 3, 2], scale)
        config = FitConfig(trials_per_eval=50, latent_step=0.2)

        assert fit_latent_value(wad_model, empirical, config, 4) == fit_latent_value(
            wad_model, empirical, config, 4
        )

    def test_recovers_generating_value(self, scale: RatingScale, wad_model: UserModel) -> None:
        """Test an empirical pmf simulated at 3.5 is placed within 0.2 of 3.5."""
        empirical = rating_pmf_mc(wad_model, 3.5, n_trials=5000, seed=21)
        config = FitConfig(trials_per_eval=2000, latent_step=0.05, seed=22)

        assert abs(fit_latent_value(wad_model, empirical, config) - 3.5) <= 0.2

    def test_more_trials_not_worse(self, scale: RatingScale, wad_model: UserModel) -> None:
        """Test ten times the trials per evaluation does not raise the recovery error."""
        truths = (1.7, 2.6, 3.5, 4.2)
        step = 0.05

        def mean_error(trials: int) -> float:
            config = FitConfig(trials_per_eval=trials, latent_step=step, seed=23)
            errors = []
            for k, s in enumerate(truths):
                empirical = rating_pmf_mc(wad_model, s, 5000, seed=k)
                errors.append(abs(fit_latent_value(wad_model, empirical, config) - s))
            return float(np.mean(errors))

        assert mean_error(10_000) <= 1.1 * mean_error(1000) + step

    def test_latent_grid(self, scale: RatingScale) -> None:
        """Test the latent grid spans the extended range."""
        grid = latent_grid(scale, 1.0, 0.5)

        assert grid.values[0] == 0.0
        assert grid.values[-1] == 6.0
        assert grid.values.size == 13


class TestFitConfig:
    """Test FitConfig validation."""

    def test_defaults(self) -> None:
        """Test the default search covers every decoder."""
        config = FitConfig()

        assert config.decoders == tuple(DecoderVariant)
        assert config.to_dict()["decoders"] == ["MVD", "WAD", "MLD", "MAD"]

    def test_decoder_names_parsed(self) -> None:
        """Test decoder names are parsed from strings."""
        assert FitConfig(decoders=("mld", "wad")).decoders == (
            DecoderVariant.MLD,
            DecoderVariant.WAD,
        )

    @pytest.mark.parametrize(
        ("kwargs", "message"),
        [
            ({"decoders": ()}, "At least one"),
            ({"decoders": ("MVD", "mvd")}, "repeat"),
            ({"gain_bounds": (10.0, 1.0)}, "Empty gain bounds"),
            ({"baseline_bounds": (0.0, math.inf)}, "Empty baseline bounds"),
            ({"width_bounds": (0.0, 2.0)}, "valid range"),
            ({"epsilon": 0.0}, "epsilon"),
            ({"budget": 0}, "budget"),
        ],
    )
    def test_invalid(self, kwargs: dict, message: str) -> None:
        """Test rejecting invalid search settings."""
        with pytest.raises(ValidationError, match=message):
            FitConfig(**kwargs)

    def test_clipped_start(self) -> None:
        """Test initial values outside the bounds are clipped."""
        start = FitConfig(initial_gain=1000.0, initial_width=0.01).clipped_start()

        assert start == {"gain": 500.0, "width": 0.2, "baseline": 0.5}


class TestFitResult:
    """Test FitResult dataclass."""

    def _result(self, scale: RatingScale, **overrides) -> FitResult:
        values = {
            "user_id": "u1",
            "variant": DecoderVariant.MAD,
            "gain": 12.0,
            "baseline": 0.4,
            "width": 0.9,
            "n_neurons": 21,
            "margin": 1.0,
            "scale": scale,
            "latent_values": {"i1": 0.5, "i2": 5.5},
            "divergence": 0.25,
            "evaluations": 17,
            "prior": Prior.gaussian(3.0, 1.0),
            "candidates": (CandidateScore(DecoderVariant.MAD, 0.25, 12.0, 0.4, 0.9, 17),),
            "mean_model_variance": 0.3,
        }
        values.update(overrides)
        return FitResult(**values)

    def test_dict_roundtrip(self, scale: RatingScale) -> None:
        """Test to_dict/from_dict of a fit result."""
        result = self._result(scale)

        assert FitResult.from_dict(result.to_dict()) == result

    def test_to_user_model(self, scale: RatingScale) -> None:
        """Test rebuilding the fitted user model."""
        model = self._result(scale).to_user_model()

        assert model.label == "u1"
        assert model.decoder.variant is DecoderVariant.MAD
        assert model.population.margin == 1.0
        assert model.decoder.prior == Prior.gaussian(3.0, 1.0)

    def test_negative_divergence(self, scale: RatingScale) -> None:
        """Test rejecting a negative divergence."""
        with pytest.raises(ValidationError, match="Divergence"):
            self._result(scale, divergence=-0.1)

    def test_latent_value_outside_range(self, scale: RatingScale) -> None:
        """Test rejecting latent values beyond the margin."""
        with pytest.raises(ValidationError, match="outside"):
            self._result(scale, latent_values={"i1": 6.5})


class TestFitUserModel:
    """Test the per-user model search."""

    def test_result_fields(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test the winner, latent values and evaluation count of a fit."""
        result = fit_user_model(_user(observations, "u1"), scale, quick_config)

        assert result.user_id == "u1"
        assert set(result.latent_values) == {"i1", "i2"}
        assert all(0.0 <= s <= 6.0 for s in result.latent_values.values())
        assert [c.variant for c in result.candidates] == [DecoderVariant.MVD, DecoderVariant.WAD]
        assert all(c.evaluations <= quick_config.budget for c in result.candidates)
        assert result.evaluations == sum(c.evaluations for c in result.candidates)
        assert not result.sparse_data

    def test_winner_is_minimum(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test the reported decoder has the lowest candidate divergence."""
        result = fit_user_model(_user(observations, "u2"), scale, quick_config)
        best = min(result.candidates, key=lambda c: c.divergence)

        assert result.variant is best.variant
        assert result.divergence == best.divergence
        assert result.divergence >= 0.0
        assert result.mean_model_variance >= 0.0

    def test_parameters_within_bounds(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test fitted parameters stay inside their bounds."""
        result = fit_user_model(_user(observations, "u1"), scale, quick_config)

        assert 1.0 <= result.gain <= 500.0
        assert 0.0 <= result.baseline <= 5.0
        assert 0.2 <= result.width <= 3.0

    def test_deterministic(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test refitting with the same seed reproduces the result."""
        first = fit_user_model(_user(observations, "u1"), scale, quick_config)
        second = fit_user_model(_user(observations, "u1"), scale, quick_config)

        assert first == second

    def test_fixed_bounds_skip_search(
        self, observations: list[RatingObservation], scale: RatingScale
    ) -> None:
        """Test collapsed bounds pin a parameter at its value."""
        config = FitConfig(
            decoders=("WAD",),
            gain_bounds=(25.0, 25.0),
            width_bounds=(1.0, 1.0),
            trials_per_eval=30,
            budget=6,
            latent_step=0.5,
        )
        result = fit_user_model(_user(observations, "u2"), scale, config)

        assert result.gain == 25.0
        assert result.width == 1.0

    def test_constant_rater(self, scale: RatingScale) -> None:
        """Test a rater who never changes a rating gets a precise high-gain model."""
        observations = [
            RatingObservation("c1", f"i{item:02d}", trial, float(item % 5 + 1))
            for item in range(10)
            for trial in range(1, 6)
        ]
        config = FitConfig(trials_per_eval=100, budget=20, latent_step=0.2, seed=4)
        result = fit_user_model(observations, scale, config)

        assert result.gain >= 40.0
        assert result.mean_model_variance <= 0.05
        model = result.to_user_model()
        for index, s in enumerate(result.latent_values.values()):
            assert pmf_variance(rating_pmf_mc(model, s, 2000, seed=index)) <= 0.05

    def test_sparse_data_flag(self, scale: RatingScale, quick_config: FitConfig) -> None:
        """Test a single item rated once is flagged as sparse."""
        result = fit_user_model([RatingObservation("u9", "i1", 1, 4.0)], scale, quick_config)

        assert result.sparse_data

    def test_several_users(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test rejecting observations of more than one user."""
        with pytest.raises(ValidationError, match="one user"):
            fit_user_model(observations, scale, quick_config)

    def test_no_observations(self, scale: RatingScale, quick_config: FitConfig) -> None:
        """Test rejecting an empty rating log."""
        with pytest.raises(ValidationError, match="without observations"):
            fit_user_model([], scale, quick_config)

    def test_fit_cohort_order(
        self,
        observations: list[RatingObservation],
        scale: RatingScale,
        quick_config: FitConfig,
    ) -> None:
        """Test cohort fits come back in user-id order."""
        results = fit_cohort(list(reversed(observations)), scale, quick_config)

        assert [r.user_id for r in results] == ["u1", "u2"]


@pytest.mark.slow
class TestSyntheticRecovery:
    """Test recovering archetypes from simulated rating logs."""

    def test_recovers_decoders_and_clusters(self, scale: RatingScale) -> None:
        """Test decoder recovery and k=2 clustering on two simulated archetypes."""
        users = [f"u{i:02d}" for i in range(50)]
        items = [f"i{j:02d}" for j in range(20)]
        truth = {user: "extreme" if i % 2 == 0 else "moderate" for i, user in enumerate(users)}
        models = [archetype_model(truth[user], label=user, margin=1.0) for user in users]
        latent = draw_latent_values(users, items, scale, seed=11)
        observations = simulate_cohort(models, latent, n_trials=5, seed=12)

        config = FitConfig(trials_per_eval=200, budget=40, latent_step=0.2, seed=13)
        start = time.perf_counter()
        fits = fit_cohort(observations, scale, config)
        elapsed = time.perf_counter() - start

        assert config.decoders == tuple(DecoderVariant)
        assert elapsed < 120.0
        expected = {"extreme": DecoderVariant.MVD, "moderate": DecoderVariant.WAD}
        recovered = np.mean([fit.variant is expected[truth[fit.user_id]] for fit in fits])

        assert recovered >= 0.8

        clusters = cluster_users(featurize(fits), k=2, restarts=10, seed=14)
        labels = [clusters.assignments[user] for user in users]
        archetype = [0 if truth[user] == "extreme" else 1 for user in users]
        agreement = np.mean(np.equal(labels, archetype))

        assert max(agreement, 1.0 - agreement) >= 0.9

    def test_recovers_precise_weighted_average_user(self, scale: RatingScale) -> None:
        """Test a WAD user with gain 30 is recovered as WAD with gain and width within 50%."""
        items = [f"i{j:02d}" for j in range(20)]
        model = build_user_model(
            DecoderVariant.WAD, margin=1.0, gain=30.0, baseline=0.5, width=1.0, label="w1"
        )
        latent = draw_latent_values(["w1"], items, scale, seed=31)
        observations = simulate_cohort([model], latent, n_trials=5, seed=32)

        config = FitConfig(trials_per_eval=200, budget=40, latent_step=0.2, seed=33)
        result = fit_user_model(observations, scale, config)

        assert [c.variant for c in result.candidates] == list(DecoderVariant)
        assert result.variant is DecoderVariant.WAD
        assert abs(result.gain - 30.0) <= 15.0
        assert abs(result.width - 1.0) <= 0.5
