"""neurorating - Neural population-code models of uncertain user ratings."""

from .core.models import DecoderVariant, Population, RatingScale, UserModel
from .core.user_model import build_user_model, simulate_rating

__all__ = [
    "DecoderVariant",
    "Population",
    "RatingScale",
    "UserModel",
    "build_user_model",
    "simulate_rating",
]
__version__ = "0.1.0"
