"""Configuration management for neurorating.

Values are layered: dataclass defaults, then ``NEURORATING_*`` environment
variables, then a ``--config`` JSON file, then explicit command-line flags.
"""

import argparse
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from ..core.errors import ValidationError
from ..core.fitting import FitConfig
from ..core.models import DecoderVariant, Prior, RatingScale, UserModel
from ..core.user_model import build_user_model

ENV_PREFIX = "NEURORATING_"

_OPTIONAL_FLOATS = {"prior_mean", "prior_sd"}


@dataclass
class Config:
    """Configuration settings for neurorating runs."""

    # Rating scale
    scale_min: float = 1.0
    scale_max: float = 5.0
    categories: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    # Population and decoder
    n_neurons: int = 21
    margin: float = 0.0
    gain: float = 10.0
    baseline: float = 0.5
    width: float = 1.0
    decoder: str = "MLD"
    grid_step: float = 1e-3
    prior_mean: float | None = None  # defaults to the scale midpoint
    prior_sd: float | None = None  # None means a uniform prior

    # Monte Carlo
    n_trials: int = 5
    seed: int = 0

    # Fitting
    fit_decoders: str = "MVD,WAD,MLD,MAD"
    fit_trials: int = 200
    fit_epsilon: float = 1e-3
    fit_budget: int = 120
    fit_max_rounds: int = 4
    fit_gain_min: float = 1.0
    fit_gain_max: float = 500.0
    fit_baseline_min: float = 0.0
    fit_baseline_max: float = 5.0
    fit_width_min: float = 0.2
    fit_width_max: float = 3.0
    fit_margin: float = 1.0
    fit_latent_step: float = 0.1
    fit_grid_step: float = 5e-2
    fit_prior_sd: float = 1.0

    # Clustering and statistics
    k: int = 2
    restarts: int = 10
    decoder_weight: float = 1.0
    ddof: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace, base: "Config | None" = None) -> "Config":
        """Overlay explicitly given command-line arguments on a base configuration.

        Args:
            args: Parsed command-line arguments; ``None`` values are ignored.
            base: Configuration to overlay (defaults to ``Config()``).

        Returns:
            Configuration instance.
        """
        base = base or cls()
        overrides = {f.name: getattr(args, f.name, None) for f in fields(cls)}
        return base.merged(**overrides)

    @classmethod
    def from_env(cls) -> "Config":
        """Create configuration from ``NEURORATING_*`` environment variables.

        Returns:
            Configuration instance.
        """
        values: dict[str, Any] = {}
        for f in fields(cls):
            text = os.getenv(ENV_PREFIX + f.name.upper())
            if text is not None:
                values[f.name] = _parse_value(f.name, text)
        return cls().merged(**values)

    @classmethod
    def from_json(cls, path: str | Path, base: "Config | None" = None) -> "Config":
        """Overlay a JSON configuration file on a base configuration.

        Raises:
            ValidationError: If the file cannot be read or names unknown settings.
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ValidationError(f"Config file {path} must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"Unknown config settings in {path}: {unknown}")
        return (base or cls()).merged(**data)

    def merged(self, **overrides: Any) -> "Config":
        """Return a copy with the non-None overrides applied."""
        values = {k: v for k, v in overrides.items() if v is not None}
        if ("scale_min" in values or "scale_max" in values) and "categories" not in values:
            lo = values.get("scale_min", self.scale_min)
            hi = values.get("scale_max", self.scale_max)
            if float(lo).is_integer() and float(hi).is_integer():
                values["categories"] = tuple(float(c) for c in range(int(lo), int(hi) + 1))
        if "categories" in values:
            values["categories"] = tuple(float(c) for c in values["categories"])
        return replace(self, **values)

    def scale(self) -> RatingScale:
        """Rating scale described by this configuration."""
        return RatingScale(self.scale_min, self.scale_max, self.categories)

    def prior(self) -> Prior | None:
        """MAD prior (Gaussian when ``prior_sd`` is set, otherwise uniform)."""
        if self.prior_sd is None:
            return None
        mean = self.prior_mean if self.prior_mean is not None else self.scale().midpoint
        return Prior.gaussian(mean, self.prior_sd)

    def user_model(self, decoder: str | None = None, label: str | None = None) -> UserModel:
        """Build the user model described by this configuration."""
        return build_user_model(
            DecoderVariant.parse(decoder or self.decoder),
            n_neurons=self.n_neurons,
            scale=self.scale(),
            margin=self.margin,
            gain=self.gain,
            baseline=self.baseline,
            width=self.width,
            prior=self.prior(),
            grid_step=self.grid_step,
            label=label,
        )

    def to_fit_config(self) -> FitConfig:
        """Fitting settings derived from this configuration."""
        return FitConfig(
            decoders=tuple(
                DecoderVariant.parse(name) for name in self.fit_decoders.split(",") if name.strip()
            ),
            gain_bounds=(self.fit_gain_min, self.fit_gain_max),
            baseline_bounds=(self.fit_baseline_min, self.fit_baseline_max),
            width_bounds=(self.fit_width_min, self.fit_width_max),
            initial_gain=self.gain,
            initial_baseline=self.baseline,
            initial_width=self.width,
            n_neurons=self.n_neurons,
            margin=self.fit_margin,
            trials_per_eval=self.fit_trials,
            epsilon=self.fit_epsilon,
            budget=self.fit_budget,
            max_rounds=self.fit_max_rounds,
            latent_step=self.fit_latent_step,
            grid_step=self.fit_grid_step,
            mad_prior_sd=self.fit_prior_sd,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert configuration to dictionary.

        Returns:
            Dictionary representation of configuration.
        """
        data = asdict(self)
        data["categories"] = list(self.categories)
        return data


def _parse_value(name: str, text: str) -> Any:
    default = getattr(Config, name)
    try:
        if name == "categories":
            return tuple(float(c) for c in text.split(","))
        if name in _OPTIONAL_FLOATS:
            return float(text)
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise ValidationError(f"Invalid value for {ENV_PREFIX}{name.upper()}: {text!r}") from e
    return text
