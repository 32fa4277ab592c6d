from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from semcvdcm import __version__
from semcvdcm.core.metrics import semantic_fit
from semcvdcm.core.params import ModelParams, load_params, save_params
from semcvdcm.model.dataset import load_dataset
from semcvdcm.model.storage import StorageError, load_zone_map, read_json, write_json
from semcvdcm.simulation.recovery import (
    parameter_recovery_experiment,
    recovery_config,
    recovery_curve,
)
from semcvdcm.simulation.simulator import simulate_dataset, write_synthetic_dataset
from semcvdcm.simulation.spec import (
    SyntheticSpec,
    assert_valid_synthetic_spec,
    load_synthetic_spec,
    recovery_spec,
)
from semcvdcm.spatial.aggregation import aggregate_zones, areas_of_interest, decompose_zones
from semcvdcm.spatial.export import (
    export_results,
    format_bar_table,
    load_zone_scores,
    write_zone_medians,
    write_zone_scores,
)
from semcvdcm.spatial.scoring import load_image_scores, score_images, write_image_scores
from semcvdcm.spatial.stats import joint_distribution_stats, write_joint_stats
from semcvdcm.training.config import PhaseResult, TrainConfig, assert_valid_config
from semcvdcm.training.gradients import check_gradients
from semcvdcm.training.report import build_fit_report, evaluate, write_fit_report
from semcvdcm.training.trainer import compile_split, train_sequential

logger = logging.getLogger("semcvdcm")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"Output directory is not writable: {out}") from exc
    return out


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) is None]
    if missing:
        raise ValueError(f"{args.command} needs {', '.join(missing)}")


def _config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise StorageError(f"Config file must hold a JSON object: {path}")
    return raw


def _float_list(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in value.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers: {value!r}") from exc


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Flag > config file > default."""
    config = TrainConfig.from_dict(_config_file(args.config))
    kappa = list(config.kappa)
    for index, flag in enumerate((args.kappa1, args.kappa2, args.kappa3)):
        if flag is not None:
            kappa[index] = flag
    config = config.with_overrides(
        kappa=tuple(kappa),
        max_epochs=None if args.epochs is None else (args.epochs,) * 3,
        learning_rate=args.lr,
        batch_size=args.batch,
        l2_lambda=args.l2,
        seed=args.seed,
        optimizer=args.optimizer,
        hidden_units=args.hidden_units,
        rmse_weights=args.rmse_weights,
        benchmark=True if args.benchmark else None,
    )
    assert_valid_config(config)
    return config


def resolve_synthetic_spec(
    args: argparse.Namespace, base: SyntheticSpec | None = None
) -> SyntheticSpec:
    base = base if base is not None else SyntheticSpec()
    spec = load_synthetic_spec(args.config, base) if args.config else base
    spec = spec.with_overrides(
        n_observations=args.n,
        k=args.k,
        seed=args.seed,
        sigma_z=args.sigma_z,
        sampler=args.sampler,
    )
    assert_valid_synthetic_spec(spec)
    return spec


def cmd_simulate(args: argparse.Namespace) -> dict[str, Any]:
    spec = resolve_synthetic_spec(args)
    synthetic = simulate_dataset(spec)
    manifest_path = write_synthetic_dataset(synthetic, _out_dir(args))
    return {
        "manifest": str(manifest_path),
        "n_observations": len(synthetic.observations),
        "n_images": len(synthetic.image_ids),
        "config": spec.to_dict(),
    }


def cmd_train(args: argparse.Namespace) -> dict[str, Any]:
    _require(args, "manifest")
    config = resolve_train_config(args)
    out = _out_dir(args)
    dataset = load_dataset(args.manifest)
    partial = out / "model.partial.json"

    def checkpoint(params: ModelParams, result: PhaseResult) -> None:
        save_params(params, partial, config=config.to_dict())
        logger.info("Saved parameters after %s to %s", result.phase, partial)

    result = train_sequential(dataset, config, on_phase_end=checkpoint)
    model_path = out / "model.json"
    save_params(result.params, model_path, config=config.to_dict())
    if result.benchmark is not None:
        save_params(result.benchmark, out / "benchmark.json", config=config.to_dict())
    partial.unlink(missing_ok=True)

    train = compile_split(dataset, "train")
    test = compile_split(dataset, "test") if dataset.split and dataset.split.test else None
    report = build_fit_report(result, train, test)
    json_path, text_path = write_fit_report(report, out)
    return {
        "model": str(model_path),
        "fit_report": str(json_path),
        "fit_table": str(text_path),
        "train": report["semantic"]["train"],
        "test": report["semantic"]["test"],
        "config": config.to_dict(),
    }


def cmd_eval(args: argparse.Namespace) -> dict[str, Any]:
    _require(args, "manifest", "model")
    params = load_params(args.model)
    dataset = load_dataset(args.manifest)
    data = compile_split(dataset, args.split)
    summary: dict[str, Any] = {"split": args.split, **evaluate(params, data)}
    if data.has_labels:
        summary["semantic_fit"] = semantic_fit(params, data)
    if args.out is not None:
        path = _out_dir(args) / f"eval_{args.split}.json"
        write_json(summary, path)
        summary["report"] = str(path)
    return summary


def _scores_for(args: argparse.Namespace) -> Any:
    """Image scores from --scores, or computed from --manifest and --model."""
    if args.scores is not None:
        if args.model is not None and args.command == "aggregate":
            raise ValueError("Pass either --scores or --model, not both")
        return load_image_scores(args.scores)
    _require(args, "manifest", "model")
    dataset = load_dataset(args.manifest, with_choices=False)
    return score_images(
        load_params(args.model),
        dataset.embeddings,
        include_residual=not args.no_residual,
        threads=args.threads,
    )


def _zone_map(args: argparse.Namespace) -> Any:
    if args.zones is not None:
        return load_zone_map(args.zones)
    _require(args, "manifest")
    dataset = load_dataset(args.manifest, with_choices=False)
    if dataset.zones is None:
        raise ValueError("Manifest has no zone map; pass --zones")
    return dataset.zones


def cmd_score(args: argparse.Namespace) -> dict[str, Any]:
    _require(args, "manifest", "model")
    params = load_params(args.model)
    dataset = load_dataset(args.manifest, with_choices=False)
    frame = score_images(
        params,
        dataset.embeddings,
        include_residual=not args.no_residual,
        threads=args.threads,
    )
    path = _out_dir(args) / "image_scores.csv"
    write_image_scores(frame, path)
    return {"image_scores": str(path), "n_images": len(frame), "residual": not args.no_residual}


def cmd_aggregate(args: argparse.Namespace) -> dict[str, Any]:
    scores = _scores_for(args)
    aggregation = aggregate_zones(scores, _zone_map(args), args.min_zone_count)
    out = _out_dir(args)
    write_zone_scores(aggregation.zones, out / "zone_scores.csv")
    write_zone_medians(aggregation.zones, out / "zone_medians.csv")
    citywide = aggregation.citywide.to_dict()
    write_json(
        {
            "citywide": citywide,
            "unmapped_images": aggregation.unmapped_images,
            "areas_of_interest": areas_of_interest(aggregation),
            "min_zone_count": args.min_zone_count,
        },
        out / "citywide.json",
    )
    return {
        "zone_scores": str(out / "zone_scores.csv"),
        "n_zones": len(aggregation.zones),
        "low_confidence": sum(zone.low_confidence for zone in aggregation.zones),
        "unmapped_images": len(aggregation.unmapped_images),
        "citywide_mean_utility": citywide["mean_utility"],
    }


def cmd_decompose(args: argparse.Namespace) -> dict[str, Any]:
    _require(args, "model")
    params = load_params(args.model)
    aggregation = aggregate_zones(_scores_for(args), _zone_map(args), args.min_zone_count)
    decompositions = decompose_zones(aggregation, params, args.zone or None)
    out = _out_dir(args)
    summary = export_results(aggregation, decompositions, out, args.geojson)
    bars_path = out / "bars.txt"
    try:
        bars_path.write_text(
            "\n".join(format_bar_table(item, params.reference_class) for item in decompositions),
            encoding="utf-8",
        )
    except OSError as exc:
        raise StorageError(f"Could not write bar table: {bars_path}") from exc
    summary["files"]["bars"] = str(bars_path)
    if args.pdf is not None:
        from semcvdcm.spatial.export_pdf import export_decompositions_pdf

        pages = export_decompositions_pdf(decompositions, params.reference_class, args.pdf)
        summary["files"]["pdf"] = str(args.pdf)
        summary["pdf_pages"] = pages
    summary["n_zones"] = len(decompositions)
    return summary


def cmd_report(args: argparse.Namespace) -> dict[str, Any]:
    _require(args, "zone_scores")
    medians = Path(args.zone_scores).with_name("zone_medians.csv")
    zones = load_zone_scores(args.zone_scores, medians)
    stats = joint_distribution_stats(zones)
    paths = write_joint_stats(stats, _out_dir(args))
    return {
        "n_zones": len(zones),
        "files": {name: str(path) for name, path in paths.items()},
        "pearson_mean_utility_mean_residual": stats.pearson("mean_utility", "mean_residual"),
    }


def cmd_check_gradients(args: argparse.Namespace) -> dict[str, Any]:
    data = None
    if args.manifest is not None:
        dataset = load_dataset(args.manifest)
        data = compile_split(dataset, "train" if dataset.split else "all")
    audit = check_gradients(data, trials=args.trials, seed=args.seed or 0, tolerance=args.tolerance)
    summary = audit.to_dict()
    if not audit.passed:
        summary["exit_code"] = EXIT_INVALID
    return summary


def cmd_recover(args: argparse.Namespace) -> dict[str, Any]:
    spec = resolve_synthetic_spec(args, recovery_spec())
    config = recovery_config(spec.seed)
    out = _out_dir(args)
    if args.sizes:
        curve = recovery_curve(spec, config, args.sizes)
        write_json({"config": config.to_dict(), **curve}, out / "recovery_curve.json")
        summary = {"recovery_curve": str(out / "recovery_curve.json"), **curve}
        passed = curve["non_increasing"]
    else:
        report = parameter_recovery_experiment(spec, config, tolerance=args.tolerance)
        write_json(report, out / "recovery.json")
        summary = {
            "recovery": str(out / "recovery.json"),
            "n_observations": spec.n_observations,
            "mean_abs_error": report["mean_abs_error"],
            "max_abs_error": report["max_abs_error"],
            "all_within_tolerance": report["all_within_tolerance"],
        }
        passed = report["all_within_tolerance"]
    if not passed:
        summary["exit_code"] = EXIT_INVALID
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "aggregate": cmd_aggregate,
    "decompose": cmd_decompose,
    "report": cmd_report,
    "check-gradients": cmd_check_gradients,
    "recover": cmd_recover,
}


def _add_common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--out", required=out_required, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--verbose", action="store_true")


def _add_scoring_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", default=None)
    parser.add_argument("--model", default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--no-residual", action="store_true")


def _add_zone_inputs(parser: argparse.ArgumentParser) -> None:
    _add_scoring_inputs(parser)
    parser.add_argument("--scores", default=None, help="image_scores.csv from `score`")
    parser.add_argument("--zones", default=None, help="zone map CSV (default: manifest)")
    parser.add_argument("--min-zone-count", type=int, default=5)


def _add_synthetic(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=None, help="number of choice observations")
    parser.add_argument("--k", type=int, default=None, help="embedding dimension")
    parser.add_argument("--sigma-z", type=float, default=None)
    parser.add_argument("--sampler", choices=("probability", "gumbel"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcvdcm",
        description="Semantic embedding-enriched discrete choice models and street-level maps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="write a synthetic dataset and truth.json")
    _add_common(simulate)
    _add_synthetic(simulate)

    train = sub.add_parser("train", help="three-phase training")
    _add_common(train)
    train.add_argument("--manifest", default=None)
    for phase in (1, 2, 3):
        train.add_argument(f"--kappa{phase}", type=float, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--batch", type=int, default=None)
    train.add_argument("--l2", type=float, default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--optimizer", choices=("sgd", "lbfgs"), default=None)
    train.add_argument("--hidden-units", type=int, default=None)
    train.add_argument("--rmse-weights", type=_float_list, default=None)
    train.add_argument("--benchmark", action="store_true", help="also fit the benchmark model")

    evaluate = sub.add_parser("eval", help="fit statistics of a trained model on a split")
    _add_common(evaluate, out_required=False)
    evaluate.add_argument("--manifest", default=None)
    evaluate.add_argument("--model", default=None)
    evaluate.add_argument("--split", choices=("train", "test", "all"), default="test")

    score = sub.add_parser("score", help="street-level utility of every image")
    _add_common(score)
    _add_scoring_inputs(score)

    aggregate = sub.add_parser("aggregate", help="zone means of image scores")
    _add_common(aggregate)
    _add_zone_inputs(aggregate)

    decompose = sub.add_parser("decompose", help="per-attribute zone deviations")
    _add_common(decompose)
    _add_zone_inputs(decompose)
    decompose.add_argument("--zone", action="append", default=None, help="zone id (repeatable)")
    decompose.add_argument("--geojson", default=None, help="zone polygons to join results onto")
    decompose.add_argument("--pdf", default=None, help="bar chart PDF path")

    report = sub.add_parser("report", help="correlations and distributions of zone variables")
    _add_common(report)
    report.add_argument("--zone-scores", default=None)

    check = sub.add_parser("check-gradients", help="finite-difference gradient audit")
    _add_common(check, out_required=False)
    check.add_argument("--manifest", default=None)
    check.add_argument("--trials", type=int, default=100)
    check.add_argument("--tolerance", type=float, default=1e-5)

    recover = sub.add_parser("recover", help="parameter recovery on simulated data")
    _add_common(recover)
    _add_synthetic(recover)
    recover.add_argument("--tolerance", type=float, default=0.05)
    recover.add_argument("--sizes", type=int, nargs="+", default=None)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = COMMANDS[args.command](args)
    except (StorageError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_RUNTIME
    code = int(summary.pop("exit_code", EXIT_OK))
    _emit({"command": args.command, "ok": code == EXIT_OK, **summary})
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:
        # --help and --version exit 0; usage errors count as invalid input
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
