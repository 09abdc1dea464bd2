"""Command-line interface for neurorating."""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from .. import __version__
from ..core.clustering import cluster_users, featurize, silhouette_range
from ..core.cohort import (
    ARCHETYPES,
    archetype_model,
    category_usage_histogram,
    constant_rater_fractions,
    draw_latent_values,
    pareto_ml_fit,
    per_user_variances,
    short_pair_count,
    simulate_cohort,
    variance_samples,
)
from ..core.datasets import ingest_ratings, write_csv, write_latent_values, write_observations
from ..core.decoders import decode
from ..core.emitters import (
    emit_assignments,
    emit_category_histogram,
    emit_decoder_profile,
    emit_estimates,
    emit_pareto_density,
    emit_pmf,
    emit_raster,
    emit_reliability,
    emit_user_variances,
    emit_variances,
)
from ..core.errors import DegenerateFitError, NumericalError, ValidationError
from ..core.fitting import fit_cohort
from ..core.models import DecoderVariant, PopulationResponse, UserModel
from ..core.population import sample_response
from ..core.storage import RunManifest, fit_file_name, load_fits, save_fits, write_json
from ..core.user_model import rating_pmf_mc, reliability_profile
from ..utils.config import Config
from ..utils.rng import derive_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def setup_logging(verbose: bool = False) -> None:
    """Configure logging for the application.

    Args:
        verbose: Enable verbose logging if True.
    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )


def _add_global_options(parser: argparse.ArgumentParser, default: object) -> None:
    parser.add_argument("--seed", type=int, default=default, help="Base random seed")
    parser.add_argument("--config", type=str, default=default, help="JSON configuration file")
    parser.add_argument("--out", type=str, default=default, help="Output directory")
    parser.add_argument(
        "--verbose", "-v", action="store_true", default=default, help="Enable verbose logging"
    )


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("user model")
    group.add_argument("--decoder", type=str, help="Decoder: MVD, WAD, MLD or MAD")
    group.add_argument("--n-neurons", dest="n_neurons", type=int, help="Population size N")
    group.add_argument("--margin", type=float, help="Preferred-value margin beyond the scale")
    group.add_argument("--gain", type=float, help="Tuning gain g")
    group.add_argument("--baseline", type=float, help="Tuning baseline f0")
    group.add_argument("--width", type=float, help="Tuning width w")
    group.add_argument("--grid-step", dest="grid_step", type=float, help="MLD/MAD grid step")
    group.add_argument("--prior-mean", dest="prior_mean", type=float, help="MAD prior mean")
    group.add_argument(
        "--prior-sd", dest="prior_sd", type=float, help="MAD Gaussian prior sd (uniform if unset)"
    )
    group.add_argument("--scale-min", dest="scale_min", type=float, help="Lowest rating")
    group.add_argument("--scale-max", dest="scale_max", type=float, help="Highest rating")


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser.

    Returns:
        Configured argument parser.
    """
    parser = argparse.ArgumentParser(
        prog="neurorating",
        description="Neural population-code models of uncertain user ratings",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate a cohort of extreme and moderate raters
  neurorating --out run simulate --users 20 --items 10 --archetypes extreme,moderate

  # Rating statistics, model fits and clusters of that cohort
  neurorating --out stats stats --ratings run/observations.csv
  neurorating --out fits fit --ratings run/observations.csv --decoders MVD,WAD
  neurorating --out clusters cluster --fits fits --k 2

  # Figure data: raster, decoder profile and reliability of one model
  neurorating --out fig raster --s 3 --n-trials 20
  neurorating --out fig3 profile --s 3 --decoder MAD --prior-sd 0.5
  neurorating --out rel reliability --decoder MVD --trials 2000
        """,
    )
    _add_global_options(parser, None)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    _add_global_options(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate a rating cohort")
    simulate.add_argument("--users", type=int, default=10, help="Number of users (default: 10)")
    simulate.add_argument("--items", type=int, default=20, help="Items per user (default: 20)")
    simulate.add_argument(
        "--archetypes",
        type=str,
        default="extreme,moderate",
        help=f"Comma-separated archetypes assigned round-robin ({', '.join(ARCHETYPES)})",
    )
    simulate.add_argument("--n-trials", dest="n_trials", type=int, help="Trials per item")
    _add_model_options(simulate)

    decode_cmd = sub.add_parser("decode", parents=[common], help="Decode one response four ways")
    decode_cmd.add_argument("--s", type=float, help="Latent value to sample a response at")
    decode_cmd.add_argument("--counts", type=str, help="Comma-separated spike counts")
    _add_model_options(decode_cmd)

    fit = sub.add_parser("fit", parents=[common], help="Fit user models to ratings")
    fit.add_argument("--ratings", type=str, required=True, help="Observations CSV")
    fit.add_argument("--decoders", dest="fit_decoders", type=str, help="Candidate decoders")
    fit.add_argument("--fit-trials", dest="fit_trials", type=int, help="Trials per evaluation")
    fit.add_argument("--budget", dest="fit_budget", type=int, help="Evaluations per decoder")
    fit.add_argument("--epsilon", dest="fit_epsilon", type=float, help="pmf smoothing")
    fit.add_argument("--fit-margin", dest="fit_margin", type=float, help="Fitted model margin")
    fit.add_argument("--latent-step", dest="fit_latent_step", type=float, help="Latent grid step")
    _add_model_options(fit)

    cluster = sub.add_parser("cluster", parents=[common], help="Cluster fitted users")
    cluster.add_argument("--fits", type=str, required=True, help="Fit manifest or directory")
    cluster.add_argument("--k", type=int, help="Number of clusters")
    cluster.add_argument("--k-range", dest="k_range", type=str, help="Extra k values, e.g. 2,3,4")
    cluster.add_argument("--restarts", type=int, help="Seeded restarts")
    cluster.add_argument(
        "--decoder-weight", dest="decoder_weight", type=float, help="Decoder one-hot weight"
    )

    stats = sub.add_parser("stats", parents=[common], help="Re-rating statistics")
    stats.add_argument("--ratings", type=str, required=True, help="Observations CSV")
    stats.add_argument("--ddof", type=int, choices=[0, 1], help="Variance ddof (default: 0)")
    stats.add_argument("--per-user", action="store_true", help="Also emit per-user variances")
    stats.add_argument("--scale-min", dest="scale_min", type=float, help="Lowest rating")
    stats.add_argument("--scale-max", dest="scale_max", type=float, help="Highest rating")

    raster = sub.add_parser("raster", parents=[common], help="Spike raster at one latent value")
    raster.add_argument("--s", type=float, required=True, help="Latent value")
    raster.add_argument("--n-trials", dest="n_trials", type=int, help="Number of trials")
    _add_model_options(raster)

    profile = sub.add_parser("profile", parents=[common], help="Decoder profile of one response")
    profile.add_argument("--s", type=float, help="Latent value to sample a response at")
    profile.add_argument("--counts", type=str, help="Comma-separated spike counts")
    _add_model_options(profile)

    reliability = sub.add_parser(
        "reliability", parents=[common], help="Decoder reliability and rating pmf"
    )
    reliability.add_argument("--points", type=str, help="Latent values (default: categories)")
    reliability.add_argument(
        "--trials", type=int, default=1000, help="Trials per point (default: 1000)"
    )
    reliability.add_argument(
        "--continuous", action="store_true", help="Score continuous estimates"
    )
    reliability.add_argument("--pmf-at", dest="pmf_at", type=float, help="Latent value of the pmf")
    _add_model_options(reliability)

    return parser


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{what} must be comma-separated numbers: {text!r}") from None


def validate_args(args: argparse.Namespace) -> None:
    """Validate command-line arguments for consistency and requirements.

    Args:
        args: Parsed command-line arguments.

    Raises:
        ValidationError: If arguments are invalid or inconsistent.
    """
    if args.seed is not None and args.seed < 0:
        raise ValidationError(f"Seed must be non-negative: {args.seed}")
    if args.config is not None and not Path(args.config).exists():
        raise ValidationError(f"Config file does not exist: {args.config}")
    for name in ("ratings", "fits"):
        value = getattr(args, name, None)
        if value is not None and not Path(value).exists():
            raise ValidationError(f"Input does not exist: {value}")
    if args.command in ("decode", "profile"):
        if (args.s is None) == (args.counts is None):
            raise ValidationError("Give exactly one of --s and --counts")
    if args.command == "simulate":
        if args.users < 1 or args.items < 1:
            raise ValidationError("--users and --items must be >= 1")
        unknown = [a for a in args.archetypes.split(",") if a.strip() not in ARCHETYPES]
        if unknown:
            raise ValidationError(f"Unknown archetypes {unknown} (expected {sorted(ARCHETYPES)})")


def resolve_config(args: argparse.Namespace) -> Config:
    """Layer defaults, environment, ``--config`` JSON and explicit flags."""
    config = Config.from_env()
    if args.config:
        config = Config.from_json(args.config, config)
    return Config.from_args(args, config)


def _response(args: argparse.Namespace, model: UserModel, config: Config) -> PopulationResponse:
    if args.counts is not None:
        counts = _parse_floats(args.counts, "--counts")
        if any(c != int(c) or c < 0 for c in counts):
            raise ValidationError("--counts must be non-negative integers")
        if len(counts) != model.population.size:
            raise ValidationError(
                f"--counts has {len(counts)} entries, population has {model.population.size}"
            )
        return PopulationResponse(tuple(int(c) for c in counts))
    return sample_response(model.population, args.s, derive_rng(config.seed, 0))


def _write_response(model: UserModel, response: PopulationResponse, path: Path) -> Path:
    frame = pd.DataFrame(
        {
            "neuron_index": np.arange(1, model.population.size + 1),
            "preferred_value": model.population.preferred,
            "count": response.counts,
        }
    )
    return write_csv(frame, path)


def cmd_simulate(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Simulate a cohort of archetype users."""
    names = [a.strip() for a in args.archetypes.split(",")]
    width = len(str(max(args.users, args.items)))
    users = [f"u{i:0{width}d}" for i in range(1, args.users + 1)]
    items = [f"i{j:0{width}d}" for j in range(1, args.items + 1)]
    scale = config.scale()
    models = [
        archetype_model(
            names[index % len(names)],
            label=user,
            scale=scale,
            n_neurons=config.n_neurons,
            margin=config.margin,
            grid_step=config.grid_step,
        )
        for index, user in enumerate(users)
    ]
    latent = draw_latent_values(users, items, scale, config.seed)
    observations = simulate_cohort(models, latent, config.n_trials, config.seed)
    roster = pd.DataFrame(
        [
            (user, names[i % len(names)], model.decoder.variant.value)
            for i, (user, model) in enumerate(zip(users, models, strict=True))
        ],
        columns=["user_id", "archetype", "decoder"],
    )
    return [
        write_observations(observations, out / "observations.csv"),
        write_latent_values(latent, out / "latent.csv"),
        write_csv(roster, out / "users.csv"),
    ]


def cmd_decode(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Decode one response with all four decoders."""
    base = config.user_model()
    response = _response(args, base, config)
    estimates = {}
    for variant in DecoderVariant:
        model = config.user_model(decoder=variant.value)
        estimates[variant.value] = decode(
            model.decoder, model.population, response, derive_rng(config.seed, 1)
        )
    return [
        _write_response(base, response, out / "response.csv"),
        emit_estimates(estimates, out / "estimates.csv"),
    ]


def cmd_fit(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Fit every user in a ratings file."""
    scale = config.scale()
    observations = ingest_ratings(args.ratings, scale)
    fits = fit_cohort(observations, scale, config.to_fit_config())
    manifest = save_fits(fits, out)
    summary = pd.DataFrame(
        [
            (
                f.user_id,
                f.variant.value,
                f.gain,
                f.baseline,
                f.width,
                f.divergence,
                f.evaluations,
                f.mean_model_variance,
                int(f.sparse_data),
            )
            for f in fits
        ],
        columns=[
            "user_id",
            "decoder",
            "gain",
            "baseline",
            "width",
            "divergence",
            "evaluations",
            "mean_model_variance",
            "sparse_data",
        ],
    )
    candidates = pd.DataFrame(
        [
            (f.user_id, c.variant.value, c.divergence, c.gain, c.baseline, c.width, c.evaluations)
            for f in fits
            for c in f.candidates
        ],
        columns=["user_id", "decoder", "divergence", "gain", "baseline", "width", "evaluations"],
    )
    latent = {f.user_id: f.latent_values for f in fits}
    return [
        manifest,
        *(out / fit_file_name(f.user_id) for f in fits),
        write_csv(summary, out / "fit_summary.csv"),
        write_csv(candidates, out / "candidates.csv"),
        write_latent_values(latent, out / "latent_values.csv"),
    ]


def cmd_cluster(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Cluster fitted users and report clustering quality."""
    fits = load_fits(args.fits)
    features = featurize(fits, decoder_weight=config.decoder_weight)
    result = cluster_users(features, config.k, config.restarts, config.seed)
    ks = sorted({int(x) for x in _parse_floats(args.k_range, "--k-range")}) if args.k_range else []
    sweep = {
        str(r.k): r.silhouette for r in silhouette_range(features, ks, config.restarts, config.seed)
    }
    report = {**result.to_dict(), "silhouette_by_k": sweep}
    frame = pd.DataFrame(
        [(f.user_id, *f.values.tolist()) for f in sorted(features, key=lambda f: f.user_id)],
        columns=[
            "user_id",
            "gain",
            "baseline",
            "width",
            "mean_model_variance",
            *(f"decoder_{v.value}" for v in DecoderVariant),
        ],
    )
    return [
        emit_assignments(result, out / "assignments.csv"),
        write_json(out / "cluster_report.json", report),
        write_csv(frame, out / "features.csv"),
    ]


def cmd_stats(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Category usage, variance samples and the Pareto fit of a ratings file."""
    scale = config.scale()
    observations = ingest_ratings(args.ratings, scale)
    if not observations:
        raise ValidationError(f"No ratings in {args.ratings}")
    histogram = category_usage_histogram(observations, scale)
    constant = constant_rater_fractions(observations)
    samples = variance_samples(observations, ddof=config.ddof)
    variances = [s.variance for s in samples]
    paths = [
        emit_category_histogram(histogram, out / "category_histogram.csv"),
        emit_variances(samples, out / "variances.csv"),
    ]
    if args.per_user:
        paths.append(emit_user_variances(per_user_variances(samples), out / "user_variances.csv"))
    summary: dict[str, object] = {
        "constant_pair_fraction": constant.pair_fraction,
        "constant_user_fraction": constant.user_fraction,
        "n_pairs": constant.n_pairs,
        "n_users": constant.n_users,
        "short_pairs": short_pair_count(observations),
        "ddof": config.ddof,
    }
    try:
        pareto = pareto_ml_fit(variances)
    except DegenerateFitError as e:
        # Constant cohorts have no variance tail to fit.
        logger.warning(f"No Pareto fit: {e}")
        summary.update(pareto=None, pareto_error=str(e))
    else:
        summary["pareto"] = pareto.to_dict()
        paths.append(emit_pareto_density(pareto, variances, out / "variance_density.csv"))
    paths.append(write_json(out / "stats.json", summary))
    return paths


def cmd_raster(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Spike raster of repeated responses at one latent value."""
    model = config.user_model()
    return [emit_raster(model, args.s, config.n_trials, config.seed, out / "raster.csv")]


def cmd_profile(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Expected activity, likelihood/posterior curve and estimate of one response."""
    model = config.user_model()
    response = _response(args, model, config)
    profile, estimate = emit_decoder_profile(
        model, response, out / "profile.csv", derive_rng(config.seed, 1)
    )
    return [_write_response(model, response, out / "response.csv"), profile, estimate]


def cmd_reliability(args: argparse.Namespace, config: Config, out: Path) -> list[Path]:
    """Reliability profile across latent values and the rating pmf at one value."""
    model = config.user_model()
    scale = model.scale
    points = _parse_floats(args.points, "--points") if args.points else list(scale.categories)
    profile = reliability_profile(model, points, args.trials, config.seed, args.continuous)
    pmf_at = args.pmf_at if args.pmf_at is not None else scale.midpoint
    pmf = rating_pmf_mc(model, pmf_at, args.trials, config.seed)
    return [
        emit_reliability(profile, out / "reliability.csv"),
        emit_pmf(pmf, out / "pmf.csv"),
    ]


COMMANDS: dict[str, Callable[[argparse.Namespace, Config, Path], list[Path]]] = {
    "simulate": cmd_simulate,
    "decode": cmd_decode,
    "fit": cmd_fit,
    "cluster": cmd_cluster,
    "stats": cmd_stats,
    "raster": cmd_raster,
    "profile": cmd_profile,
    "reliability": cmd_reliability,
}


def run(args: argparse.Namespace) -> Path:
    """Execute a parsed command and write its manifest.

    Returns:
        The output directory.
    """
    validate_args(args)
    config = resolve_config(args)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{args.command}' with seed {config.seed} into {out}")
    outputs = COMMANDS[args.command](args, config, out)
    inputs = [
        str(getattr(args, name))
        for name in ("ratings", "fits", "config")
        if getattr(args, name, None)
    ]
    RunManifest(
        command=args.command,
        config=config.to_dict(),
        seed=config.seed,
        inputs=inputs,
        outputs=[p.relative_to(out).as_posix() for p in outputs],
    ).write(out)
    logger.info(f"Wrote {len(outputs)} files to {out}")
    return out


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI entry point for neurorating.

    Parses command-line arguments, resolves the layered configuration, runs
    the subcommand and writes its manifest.

    Returns:
        Exit code: 0 success, 2 validation error, 3 numerical error, 1 otherwise.
    """
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(bool(args.verbose))
    try:
        run(args)
        return EXIT_OK
    except ValidationError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except NumericalError as e:
        logger.error(f"Numerical error: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"Error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
