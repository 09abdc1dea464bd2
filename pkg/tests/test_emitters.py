"""Tests for plot-data emitters."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from neurorating.core.clustering import ClusterResult
from neurorating.core.cohort import ParetoFit, VarianceSample
from neurorating.core.decoders import decode_mld
from neurorating.core.emitters import (
    decoder_profile,
    emit_assignments,
    emit_category_histogram,
    emit_decoder_profile,
    emit_pareto_density,
    emit_pmf,
    emit_raster,
    emit_reliability,
    emit_variances,
    raster_responses,
)
from neurorating.core.errors import ValidationError
from neurorating.core.models import PopulationResponse, Prior, RatingScale, UserModel
from neurorating.core.user_model import RatingPMF, ReliabilityProfile, build_user_model

# Symmetric response centred on the neuron preferring 3.
_PEAKED = PopulationResponse((0,) * 8 + (3, 5, 6, 5, 3) + (0,) * 8)


class TestRaster:
    """Test spike raster emission."""

    def test_rows(self, tmp_path: Path, wad_model: UserModel) -> None:
        """Test one row per (trial, neuron) with 1-based indices."""
        path = emit_raster(wad_model, 3.0, 4, seed=1, path=tmp_path / "raster.csv")
        frame = pd.read_csv(path)

        assert list(frame.columns) == ["trial", "neuron_index", "preferred_value", "count"]
        assert len(frame) == 4 * 21
        assert frame["trial"].unique().tolist() == [1, 2, 3, 4]
        assert frame["neuron_index"].min() == 1
        assert frame.loc[frame["neuron_index"] == 21, "preferred_value"].iloc[0] == 5.0

    def test_trials_independent_of_count(self, wad_model: UserModel) -> None:
        """Test asking for more trials keeps the earlier ones."""
        short = raster_responses(wad_model, 2.0, 3, seed=7)
        long = raster_responses(wad_model, 2.0, 6, seed=7)

        assert long[:3] == short

    def test_byte_identical(self, tmp_path: Path, wad_model: UserModel) -> None:
        """Test reruns write identical files."""
        first = emit_raster(wad_model, 3.0, 5, 2, tmp_path / "a.csv").read_bytes()
        second = emit_raster(wad_model, 3.0, 5, 2, tmp_path / "b.csv").read_bytes()

        assert first == second

    def test_zero_trials(self, wad_model: UserModel) -> None:
        """Test rejecting an empty raster."""
        with pytest.raises(ValidationError, match=">= 1"):
            raster_responses(wad_model, 3.0, 0, seed=0)


class TestDecoderProfile:
    """Test decoder profile emission."""

    def test_profile_maximum_is_mld_estimate(self, mld_model: UserModel) -> None:
        """Test the log-likelihood profile peaks at the MLD estimate."""
        response = PopulationResponse((0,) * 8 + (3, 5, 6, 4, 2) + (0,) * 8)
        frame = decoder_profile(mld_model, response)
        estimate = decode_mld(mld_model.population, response, mld_model.decoder.grid)

        assert frame["s"].iloc[int(frame["log_likelihood"].idxmax())] == estimate.value
        assert "log_posterior" not in frame.columns

    def test_uniform_posterior_is_likelihood(self) -> None:
        """Test a uniform-prior MAD posterior equals the likelihood up to a constant."""
        model = build_user_model("MAD", grid_step=0.05)
        frame = decoder_profile(model, PopulationResponse((1,) * 21))

        offset = frame["log_posterior"] - frame["log_likelihood"]
        np.testing.assert_allclose(offset, offset.iloc[0])

    def test_expected_activity(self, wad_model: UserModel) -> None:
        """Test expected activity is positive and the grid covers the scale."""
        frame = decoder_profile(wad_model, PopulationResponse((0,) * 21))

        assert frame["s"].iloc[0] == 1.0
        assert frame["s"].iloc[-1] == 5.0
        assert (frame["expected_activity"] > 0).all()

    def test_estimate_file(self, tmp_path: Path) -> None:
        """Test the estimate record written beside the profile."""
        model = build_user_model("MVD")
        response = PopulationResponse((0,) * 15 + (9,) + (0,) * 5)
        profile, estimate = emit_decoder_profile(
            model, response, tmp_path / "profile.csv", np.random.default_rng(0)
        )

        assert estimate == tmp_path / "estimate.csv"
        record = pd.read_csv(estimate)
        assert record.to_dict("records") == [{"decoder": "MVD", "estimate": 4.0, "rating": 4.0}]
        assert profile.exists()

    def test_mad_profile_has_posterior(self, tmp_path: Path) -> None:
        """Test a Gaussian-prior MAD profile includes the log posterior."""
        model = build_user_model("MAD", prior=Prior.gaussian(3.0, 0.5), grid_step=0.05)
        profile, _ = emit_decoder_profile(
            model, _PEAKED, tmp_path / "p.csv", np.random.default_rng(0)
        )

        frame = pd.read_csv(profile)
        assert frame["s"].iloc[int(frame["log_posterior"].idxmax())] == pytest.approx(3.0)


class TestTableEmitters:
    """Test the remaining table emitters."""

    def test_pmf(self, tmp_path: Path, scale: RatingScale) -> None:
        """Test the pmf table."""
        pmf = RatingPMF(scale.categories, (0.0, 0.25, 0.5, 0.25, 0.0))
        frame = pd.read_csv(emit_pmf(pmf, tmp_path / "pmf.csv"))

        assert frame["probability"].tolist() == [0.0, 0.25, 0.5, 0.25, 0.0]

    def test_reliability(self, tmp_path: Path) -> None:
        """Test the reliability table columns."""
        profile = ReliabilityProfile((1.0, 3.0), (0.5, 0.1), (0.5 / 16, 0.1 / 16), (0.4, 0.1))
        frame = pd.read_csv(emit_reliability(profile, tmp_path / "reliability.csv"))

        assert list(frame.columns) == ["s", "mse", "max_mse_fraction", "variance"]
        assert frame["max_mse_fraction"].iloc[0] == pytest.approx(0.03125)

    def test_histogram_and_variances(self, tmp_path: Path) -> None:
        """Test the histogram and variance tables."""
        hist = pd.read_csv(emit_category_histogram({2: 3, 1: 5}, tmp_path / "h.csv"))
        var = pd.read_csv(
            emit_variances([VarianceSample("u", "i", 0.25, 4)], tmp_path / "v.csv"),
            dtype={"user_id": str, "item_id": str},
        )

        assert hist.to_dict("list") == {"categories_used": [1, 2], "pairs": [5, 3]}
        assert var.to_dict("records") == [
            {"user_id": "u", "item_id": "i", "variance": 0.25, "n_trials": 4}
        ]

    def test_pareto_density(self, tmp_path: Path) -> None:
        """Test the empirical density integrates to one beside the fitted curve."""
        samples = [0.0, 0.5, 0.6, 0.9, 1.5, 3.0]
        fit = ParetoFit(x_m=0.5, alpha=1.2, n_used=5, n_excluded=1)
        frame = pd.read_csv(emit_pareto_density(fit, samples, tmp_path / "d.csv", n_bins=5))

        widths = frame["bin_hi"] - frame["bin_lo"]
        assert float((frame["density"] * widths).sum()) == pytest.approx(1.0)
        assert (frame["pareto_density"] >= 0).all()
        assert len(frame) == 5

    def test_assignments_sorted(self, tmp_path: Path) -> None:
        """Test assignments are written in user-id order."""
        result = ClusterResult(
            k=2, assignments={"b": 1, "a": 0}, centroids=np.zeros((2, 1)), wcss=0.0, seed=0
        )
        frame = pd.read_csv(emit_assignments(result, tmp_path / "assignments.csv"))

        assert frame["user_id"].tolist() == ["a", "b"]
