"""Data models for population codes, decoders and user models.

All records that are persisted as JSON carry a ``to_dict``/``from_dict`` pair.
Validation happens at construction time and raises ``ValidationError``.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np
from scipy.stats import norm

from .errors import ValidationError

DEFAULT_GRID_STEP = 1e-3
_TOL = 1e-9


class DecoderVariant(Enum):
    """Enumeration of decoder functions."""

    MVD = "MVD"  # mode value: preferred value of the most active neuron
    WAD = "WAD"  # weighted average of preferred values
    MLD = "MLD"  # maximum likelihood
    MAD = "MAD"  # maximum a posteriori

    @classmethod
    def parse(cls, text: "str | DecoderVariant") -> "DecoderVariant":
        """Parse a decoder name case-insensitively.

        Args:
            text: Decoder name such as "mld" or an existing variant.

        Returns:
            The matching variant.

        Raises:
            ValidationError: If the name is unknown.
        """
        if isinstance(text, DecoderVariant):
            return text
        try:
            return cls(text.strip().upper())
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValidationError(f"Unknown decoder '{text}' (expected one of {names})") from None

    @property
    def uses_grid(self) -> bool:
        """Whether the decoder searches a stimulus grid."""
        return self in (DecoderVariant.MLD, DecoderVariant.MAD)


class PriorKind(Enum):
    """Representation of a stimulus prior."""

    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class RatingScale:
    """Discrete rating scale, e.g. 1 to 5 stars."""

    minimum: float = 1.0
    maximum: float = 5.0
    categories: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    def __post_init__(self) -> None:
        cats = tuple(float(c) for c in self.categories)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "minimum", float(self.minimum))
        object.__setattr__(self, "maximum", float(self.maximum))
        if not self.minimum < self.maximum:
            raise ValidationError(f"Scale min must be below max: {self.minimum} >= {self.maximum}")
        if len(cats) < 2 or any(b <= a for a, b in zip(cats, cats[1:], strict=False)):
            raise ValidationError(f"Scale categories must be strictly increasing: {cats}")
        if cats[0] != self.minimum or cats[-1] != self.maximum:
            raise ValidationError("First and last category must equal the scale min and max")

    @classmethod
    def stars(cls, low: int = 1, high: int = 5) -> "RatingScale":
        """Create an integer star scale.

        Args:
            low: Lowest star count.
            high: Highest star count.

        Returns:
            Scale with one category per integer in [low, high].
        """
        return cls(float(low), float(high), tuple(float(c) for c in range(low, high + 1)))

    @property
    def span(self) -> float:
        """Width of the scale (max - min)."""
        return self.maximum - self.minimum

    @property
    def midpoint(self) -> float:
        """Centre of the scale."""
        return 0.5 * (self.minimum + self.maximum)

    @property
    def category_array(self) -> np.ndarray:
        """Categories as a float array."""
        return np.asarray(self.categories, dtype=float)

    def index_of(self, value: float) -> int:
        """Return the index of a category value.

        Raises:
            ValidationError: If the value is not a category.
        """
        for index, category in enumerate(self.categories):
            if abs(category - value) <= _TOL:
                return index
        raise ValidationError(f"Rating {value} is not a category of scale {self.categories}")

    def coerce(self, value: float) -> float:
        """Coerce a numeric rating to the exact category value."""
        return self.categories[self.index_of(value)]

    def to_dict(self) -> dict[str, Any]:
        """Convert scale to dictionary."""
        return {"min": self.minimum, "max": self.maximum, "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RatingScale":
        """Create scale from dictionary."""
        return cls(data["min"], data["max"], tuple(data["categories"]))


@dataclass(frozen=True)
class TuningCurve:
    """Bell-shaped tuning curve ``f(s) = g * N(s; s_p, w^2) + f0``.

    The Gaussian part is the normalized density, so the peak height is
    ``g / (w * sqrt(2 pi)) + f0`` and not ``g + f0``.
    """

    gain: float
    baseline: float
    preferred: float
    width: float

    def __post_init__(self) -> None:
        for name in ("gain", "baseline", "preferred", "width"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"Tuning curve {name} must be finite: {value}")
            object.__setattr__(self, name, value)
        if self.gain < 0:
            raise ValidationError(f"Tuning curve gain must be >= 0: {self.gain}")
        if self.baseline < 0:
            raise ValidationError(f"Tuning curve baseline must be >= 0: {self.baseline}")
        if self.width <= 0:
            raise ValidationError(f"Tuning curve width must be > 0: {self.width}")

    @property
    def peak(self) -> float:
        """Expected count at the preferred stimulus."""
        return float(self.gain * norm.pdf(0.0, scale=self.width) + self.baseline)

    def to_dict(self) -> dict[str, float]:
        """Convert curve to dictionary."""
        return {"g": self.gain, "f0": self.baseline, "s_p": self.preferred, "w": self.width}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TuningCurve":
        """Create curve from dictionary."""
        return cls(gain=data["g"], baseline=data["f0"], preferred=data["s_p"], width=data["w"])


@dataclass(frozen=True)
class Population:
    """A population of tuning curves tiling a rating scale."""

    curves: tuple[TuningCurve, ...]
    scale: RatingScale = field(default_factory=RatingScale)
    margin: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "margin", float(self.margin))
        if not self.curves:
            raise ValidationError("A population needs at least one neuron")
        if self.margin < 0:
            raise ValidationError(f"Population margin must be >= 0: {self.margin}")
        prefs = [c.preferred for c in self.curves]
        if any(b < a for a, b in zip(prefs, prefs[1:], strict=False)):
            raise ValidationError("Preferred values must be sorted ascending")
        lo, hi = self.extended_range
        if prefs[0] < lo - _TOL or prefs[-1] > hi + _TOL:
            raise ValidationError(
                f"Preferred values must lie in [{lo}, {hi}]: got [{prefs[0]}, {prefs[-1]}]"
            )

    @property
    def size(self) -> int:
        """Number of neurons N."""
        return len(self.curves)

    @property
    def extended_range(self) -> tuple[float, float]:
        """Scale range widened by the margin on both ends."""
        return self.scale.minimum - self.margin, self.scale.maximum + self.margin

    @cached_property
    def preferred(self) -> np.ndarray:
        """Preferred values s_p, one per neuron."""
        return np.array([c.preferred for c in self.curves])

    @cached_property
    def gains(self) -> np.ndarray:
        """Gains g, one per neuron."""
        return np.array([c.gain for c in self.curves])

    @cached_property
    def baselines(self) -> np.ndarray:
        """Baselines f0, one per neuron."""
        return np.array([c.baseline for c in self.curves])

    @cached_property
    def widths(self) -> np.ndarray:
        """Widths w, one per neuron."""
        return np.array([c.width for c in self.curves])

    def to_dict(self) -> dict[str, Any]:
        """Convert population to dictionary."""
        return {
            "scale": self.scale.to_dict(),
            "margin": self.margin,
            "curves": [c.to_dict() for c in self.curves],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Population":
        """Create population from dictionary."""
        return cls(
            curves=tuple(TuningCurve.from_dict(c) for c in data["curves"]),
            scale=RatingScale.from_dict(data["scale"]),
            margin=data["margin"],
        )


@dataclass(frozen=True)
class PopulationResponse:
    """Spike counts of one cognition trial, one per neuron."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValidationError(f"Spike counts must be non-negative: {counts}")
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        """Total spike count."""
        return sum(self.counts)

    def as_array(self) -> np.ndarray:
        """Counts as an integer array."""
        return np.asarray(self.counts, dtype=np.int64)


@dataclass(frozen=True)
class SearchGrid:
    """Regular grid of candidate stimulus values for MLD/MAD."""

    lo: float
    hi: float
    step: float = DEFAULT_GRID_STEP

    def __post_init__(self) -> None:
        for name in ("lo", "hi", "step"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.lo < self.hi:
            raise ValidationError(f"Grid lo must be below hi: {self.lo} >= {self.hi}")
        if self.step <= 0:
            raise ValidationError(f"Grid step must be > 0: {self.step}")
        if (self.hi - self.lo) / self.step < 2:
            raise ValidationError("Grid must contain at least three points")

    @classmethod
    def covering(cls, population: Population, step: float = DEFAULT_GRID_STEP) -> "SearchGrid":
        """Create the grid spanning a population's extended scale range.

        When ``step`` does not divide the range, the last point lies beyond its
        upper end.
        """
        lo, hi = population.extended_range
        if step <= 0:
            raise ValidationError(f"Grid step must be > 0: {step}")
        n_steps = math.ceil((hi - lo) / step - 1e-9)
        return cls(lo, lo + n_steps * step, step)

    @cached_property
    def values(self) -> np.ndarray:
        """Grid points in ascending order."""
        n_steps = (self.hi - self.lo) / self.step
        rounded = round(n_steps)
        if abs(n_steps - rounded) < 1e-6:
            return np.linspace(self.lo, self.hi, rounded + 1)
        return self.lo + self.step * np.arange(math.floor(n_steps) + 1)

    def covers(self, lo: float, hi: float) -> bool:
        """Whether the grid spans [lo, hi]."""
        values = self.values
        return bool(values[0] <= lo + _TOL and values[-1] >= hi - _TOL)

    def to_dict(self) -> dict[str, float]:
        """Convert grid to dictionary."""
        return {"lo": self.lo, "hi": self.hi, "step": self.step}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SearchGrid":
        """Create grid from dictionary."""
        return cls(data["lo"], data["hi"], data["step"])


@dataclass(frozen=True)
class Prior:
    """Prior belief over the stimulus, for the MAP decoder.

    Tabulated priors hold log-densities at given points (``-inf`` marks zero
    probability) and are evaluated at the nearest tabulated point.
    """

    kind: PriorKind = PriorKind.UNIFORM
    mean: float | None = None
    sd: float | None = None
    points: tuple[float, ...] = ()
    log_density: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is PriorKind.GAUSSIAN:
            if self.mean is None or self.sd is None:
                raise ValidationError("Gaussian prior needs mean and sd")
            if not math.isfinite(self.mean) or not self.sd > 0:
                raise ValidationError(f"Gaussian prior needs finite mean and sd > 0: {self.sd}")
        if self.kind is PriorKind.TABULATED:
            points = tuple(float(p) for p in self.points)
            logs = tuple(float(v) for v in self.log_density)
            object.__setattr__(self, "points", points)
            object.__setattr__(self, "log_density", logs)
            if len(points) != len(logs) or not points:
                raise ValidationError("Tabulated prior needs one log-density per point")
            if any(b <= a for a, b in zip(points, points[1:], strict=False)):
                raise ValidationError("Tabulated prior points must be strictly increasing")
            if any(math.isnan(v) or v == math.inf for v in logs):
                raise ValidationError("Tabulated prior log-densities must be finite or -inf")
            if all(v == -math.inf for v in logs):
                raise ValidationError("Tabulated prior must give some point nonzero probability")

    @classmethod
    def uniform(cls) -> "Prior":
        """Flat prior (MAP then equals ML)."""
        return cls(PriorKind.UNIFORM)

    @classmethod
    def gaussian(cls, mean: float, sd: float) -> "Prior":
        """Gaussian prior with the given mean and standard deviation."""
        return cls(PriorKind.GAUSSIAN, mean=float(mean), sd=float(sd))

    @classmethod
    def tabulated(cls, points: Sequence[float], log_density: Sequence[float]) -> "Prior":
        """Prior given by log-densities at tabulated points."""
        return cls(PriorKind.TABULATED, points=tuple(points), log_density=tuple(log_density))

    @classmethod
    def degenerate(cls, grid: SearchGrid, at: float) -> "Prior":
        """Prior putting all mass on the grid point nearest to ``at``."""
        values = grid.values
        logs = np.full(values.size, -np.inf)
        logs[int(np.argmin(np.abs(values - at)))] = 0.0
        return cls.tabulated(values.tolist(), logs.tolist())

    def evaluate(self, s: np.ndarray | float) -> np.ndarray:
        """Log prior density at stimulus values (normalization dropped for uniform).

        Args:
            s: Scalar or array of stimulus values.

        Returns:
            Array of log-densities with the shape of ``s``.
        """
        values = np.asarray(s, dtype=float)
        if self.kind is PriorKind.UNIFORM:
            return np.zeros_like(values)
        if self.kind is PriorKind.GAUSSIAN:
            return np.asarray(norm.logpdf(values, loc=self.mean, scale=self.sd))
        points = np.asarray(self.points)
        logs = np.asarray(self.log_density)
        right = np.clip(np.searchsorted(points, values), 0, points.size - 1)
        left = np.clip(right - 1, 0, points.size - 1)
        nearest = np.where(
            np.abs(points[left] - values) <= np.abs(points[right] - values), left, right
        )
        return logs[nearest]

    @property
    def mode(self) -> float | None:
        """Location of the prior maximum (None for uniform)."""
        if self.kind is PriorKind.GAUSSIAN:
            return self.mean
        if self.kind is PriorKind.TABULATED:
            return self.points[int(np.argmax(self.log_density))]
        return None

    def to_dict(self) -> dict[str, Any]:
        """Convert prior to dictionary (``-inf`` log-densities become null)."""
        data: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is PriorKind.GAUSSIAN:
            data.update(mean=self.mean, sd=self.sd)
        elif self.kind is PriorKind.TABULATED:
            data["points"] = list(self.points)
            data["log_density"] = [None if v == -math.inf else v for v in self.log_density]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Prior":
        """Create prior from dictionary."""
        kind = PriorKind(data["kind"])
        if kind is PriorKind.GAUSSIAN:
            return cls.gaussian(data["mean"], data["sd"])
        if kind is PriorKind.TABULATED:
            logs = [-math.inf if v is None else v for v in data["log_density"]]
            return cls.tabulated(data["points"], logs)
        return cls.uniform()


@dataclass(frozen=True)
class DecoderSpec:
    """Decoder choice with its prior and search grid."""

    variant: DecoderVariant
    prior: Prior | None = None
    grid: SearchGrid | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", DecoderVariant.parse(self.variant))
        if self.variant is DecoderVariant.MAD and self.prior is None:
            object.__setattr__(self, "prior", Prior.uniform())

    def to_dict(self) -> dict[str, Any]:
        """Convert decoder spec to dictionary."""
        return {
            "variant": self.variant.value,
            "prior": self.prior.to_dict() if self.prior else None,
            "grid": self.grid.to_dict() if self.grid else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DecoderSpec":
        """Create decoder spec from dictionary."""
        return cls(
            variant=DecoderVariant.parse(data["variant"]),
            prior=Prior.from_dict(data["prior"]) if data.get("prior") else None,
            grid=SearchGrid.from_dict(data["grid"]) if data.get("grid") else None,
        )


@dataclass
class UserModel:
    """Complete generative model of one user: population plus decoder."""

    population: Population
    decoder: DecoderSpec
    label: str | None = None

    def __post_init__(self) -> None:
        if self.decoder.variant.uses_grid:
            if self.decoder.grid is None:
                self.decoder = replace(self.decoder, grid=SearchGrid.covering(self.population))
            elif not self.decoder.grid.covers(*self.population.extended_range):
                raise ValidationError(
                    f"Decoder grid {self.decoder.grid} does not cover "
                    f"{self.population.extended_range}"
                )

    @property
    def scale(self) -> RatingScale:
        """Rating scale of the underlying population."""
        return self.population.scale

    def to_dict(self) -> dict[str, Any]:
        """Convert user model to dictionary."""
        return {
            "label": self.label,
            "population": self.population.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UserModel":
        """Create user model from dictionary."""
        return cls(
            population=Population.from_dict(data["population"]),
            decoder=DecoderSpec.from_dict(data["decoder"]),
            label=data.get("label"),
        )


@dataclass(frozen=True)
class RatingObservation:
    """One observed (or simulated) rating of an item by a user in one trial."""

    user_id: str
    item_id: str
    trial: int
    rating: float

    def __post_init__(self) -> None:
        if self.trial < 1:
            raise ValidationError(f"Trial index must be >= 1: {self.trial}")

    @property
    def key(self) -> tuple[str, str, int]:
        """Unique (user, item, trial) key."""
        return self.user_id, self.item_id, self.trial
