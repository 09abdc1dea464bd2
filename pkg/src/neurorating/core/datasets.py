"""Reading and writing rating observation CSVs."""

import logging
import math
import re
from collections.abc import Mapping, Sequence
from pathlib import Path

import pandas as pd

from .cohort import OBSERVATION_COLUMNS, observations_frame
from .errors import IngestionError, ValidationError
from .models import RatingObservation, RatingScale

logger = logging.getLogger(__name__)

LATENT_COLUMNS = ["user_id", "item_id", "latent_value"]

_PARSER_LINE = re.compile(r"line (\d+)")


def _read_table(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as e:
        raise ValidationError(f"Ratings file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise IngestionError("missing header row", line=1) from e
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise IngestionError(
            f"malformed row: {e}", line=int(match.group(1)) if match else None
        ) from e


def ingest_ratings(path: str | Path, scale: RatingScale | None = None) -> list[RatingObservation]:
    """Read and validate a ``user_id,item_id,trial,rating`` CSV.

    Blank lines are skipped. Ratings are coerced to the exact scale categories.

    Args:
        path: CSV file with a header row.
        scale: Rating scale (defaults to 1-5 stars).

    Returns:
        Observations in file order.

    Raises:
        IngestionError: For a bad header, malformed rows, duplicate
            (user, item, trial) keys or off-scale ratings; the message names the line.
    """
    scale = scale or RatingScale()
    source = Path(path)
    frame = _read_table(source)
    header = [str(c).strip() for c in frame.columns]
    if header != OBSERVATION_COLUMNS:
        raise IngestionError(
            f"expected header {','.join(OBSERVATION_COLUMNS)}, got {','.join(header)}", line=1
        )
    observations: list[RatingObservation] = []
    seen: dict[tuple[str, str, int], int] = {}
    for offset, row in enumerate(frame.itertuples(index=False, name=None)):
        line = offset + 2
        fields = ["" if isinstance(v, float) and math.isnan(v) else str(v).strip() for v in row]
        if not any(fields):
            continue
        user, item, trial_text, rating_text = fields
        if not user or not item:
            raise IngestionError("user_id and item_id must be non-empty", line=line)
        try:
            trial = int(trial_text)
        except ValueError:
            raise IngestionError(f"trial must be an integer: {trial_text!r}", line=line) from None
        if trial < 1:
            raise IngestionError(f"trial must be >= 1: {trial}", line=line)
        try:
            rating = float(rating_text)
        except ValueError:
            raise IngestionError(f"rating must be numeric: {rating_text!r}", line=line) from None
        try:
            rating = scale.coerce(rating)
        except ValidationError:
            raise IngestionError(
                f"rating {rating_text} is not a category of {scale.categories}", line=line
            ) from None
        key = (user, item, trial)
        if key in seen:
            raise IngestionError(
                f"duplicate (user, item, trial) {key}, first seen on line {seen[key]}", line=line
            )
        seen[key] = line
        observations.append(RatingObservation(user, item, trial, rating))
    logger.info(f"Ingested {len(observations)} ratings from {source}")
    return observations


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    """Write a table as CSV with stable number formatting and LF line endings."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, float_format="%.10g", lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {target}")
    return target


def write_observations(observations: Sequence[RatingObservation], path: str | Path) -> Path:
    """Write observations in the ingestion format."""
    return write_csv(observations_frame(observations), path)


def write_latent_values(latent: Mapping[str, Mapping[str, float]], path: str | Path) -> Path:
    """Write per-user, per-item latent values."""
    rows = [(user, item, s) for user, items in latent.items() for item, s in items.items()]
    return write_csv(pd.DataFrame(rows, columns=LATENT_COLUMNS), path)
