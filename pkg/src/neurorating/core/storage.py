"""JSON persistence of models, fit results and run manifests."""

import json
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .fitting import FitResult
from .models import Population, UserModel

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FITS_MANIFEST_NAME = "fits.json"
SCHEMA_VERSION = 1

_SAFE_NAME = re.compile(r"[^A-Za-z0-9._-]")


def write_json(path: str | Path, payload: Any) -> Path:
    """Write a JSON document with sorted keys and a trailing newline.

    Raises:
        OSError: If the path is not writable.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")
    logger.debug(f"Wrote {target}")
    return target


def read_json(path: str | Path) -> Any:
    """Read a JSON document.

    Raises:
        ValidationError: If the file is missing or not valid JSON.
    """
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ValidationError(f"File not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"Invalid JSON in {path}: {e}") from e


def _document(kind: str, data: dict[str, Any]) -> dict[str, Any]:
    return {"kind": kind, "schema_version": SCHEMA_VERSION, "data": data}


def _payload(path: str | Path, kind: str) -> dict[str, Any]:
    document = read_json(path)
    if not isinstance(document, dict) or document.get("kind") != kind:
        raise ValidationError(f"{path} does not hold a {kind} document")
    data: dict[str, Any] = document["data"]
    return data


def save_population(population: Population, path: str | Path) -> Path:
    """Save a population as JSON."""
    return write_json(path, _document("population", population.to_dict()))


def load_population(path: str | Path) -> Population:
    """Load a population saved by ``save_population``."""
    return Population.from_dict(_payload(path, "population"))


def save_user_model(model: UserModel, path: str | Path) -> Path:
    """Save a user model as JSON."""
    return write_json(path, _document("user_model", model.to_dict()))


def load_user_model(path: str | Path) -> UserModel:
    """Load a user model saved by ``save_user_model``."""
    return UserModel.from_dict(_payload(path, "user_model"))


def save_fit_result(fit: FitResult, path: str | Path) -> Path:
    """Save one fit result as JSON."""
    return write_json(path, _document("fit_result", fit.to_dict()))


def load_fit_result(path: str | Path) -> FitResult:
    """Load a fit result saved by ``save_fit_result``."""
    return FitResult.from_dict(_payload(path, "fit_result"))


def fit_file_name(user_id: str) -> str:
    """File name of a user's fit document."""
    return f"fit_{_SAFE_NAME.sub('_', user_id)}.json"


def save_fits(fits: Sequence[FitResult], out_dir: str | Path) -> Path:
    """Save one document per user plus a cohort manifest listing them.

    Returns:
        Path of the cohort manifest.

    Raises:
        ValidationError: If two user ids map to the same file name.
    """
    directory = Path(out_dir)
    entries = []
    seen: set[str] = set()
    for fit in sorted(fits, key=lambda f: f.user_id):
        name = fit_file_name(fit.user_id)
        if name in seen:
            raise ValidationError(f"User id '{fit.user_id}' collides with another fit file name")
        seen.add(name)
        save_fit_result(fit, directory / name)
        entries.append({"user_id": fit.user_id, "path": name, "variant": fit.variant.value})
    logger.info(f"Saved {len(entries)} fit results to {directory}")
    return write_json(directory / FITS_MANIFEST_NAME, _document("fits", {"fits": entries}))


def load_fits(manifest_path: str | Path) -> list[FitResult]:
    """Load every fit listed in a cohort manifest (paths relative to the manifest)."""
    manifest = Path(manifest_path)
    if manifest.is_dir():
        manifest = manifest / FITS_MANIFEST_NAME
    entries = _payload(manifest, "fits")["fits"]
    return [load_fit_result(manifest.parent / entry["path"]) for entry in entries]


@dataclass
class RunManifest:
    """Provenance record written once into every output directory."""

    command: str
    config: dict[str, Any]
    seed: int
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    tool_version: str = ""

    def __post_init__(self) -> None:
        if not self.tool_version:
            from .. import __version__

            self.tool_version = __version__

    def to_dict(self) -> dict[str, Any]:
        """Convert manifest to dictionary."""
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": list(self.inputs),
            "outputs": sorted(self.outputs),
            "tool_version": self.tool_version,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunManifest":
        """Create manifest from dictionary."""
        return cls(
            command=data["command"],
            config=data["config"],
            seed=int(data["seed"]),
            inputs=list(data.get("inputs", [])),
            outputs=list(data.get("outputs", [])),
            tool_version=data.get("tool_version", ""),
        )

    def write(self, out_dir: str | Path) -> Path:
        """Write the manifest into ``out_dir``, replacing a previous one."""
        return write_json(Path(out_dir) / MANIFEST_NAME, _document("run_manifest", self.to_dict()))


def load_manifest(path: str | Path) -> RunManifest:
    """Load a run manifest from a file or output directory."""
    target = Path(path)
    if target.is_dir():
        target = target / MANIFEST_NAME
    return RunManifest.from_dict(_payload(target, "run_manifest"))
