from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from chfnet.config import configure_logging, get_settings
from chfnet.data.dataset import compare_with_reference, compute_stats, read_dataset_csv
from chfnet.data.lut import (
    PUBLISHED_STATS,
    REFERENCE_DIAMETER_MM,
    QueryPoint,
    correct_diameter,
    flatten,
    load_lut,
    load_lut_wide,
    lookup,
    write_lut,
)
from chfnet.errors import ChfError, exit_code_for
from chfnet.services.experiment import (
    VARIANT_ORDER,
    compare_variants,
    export_predictions,
    load_experiment_config,
    run_experiment,
    run_study,
)
from chfnet.services.metrics import evaluate
from chfnet.services.predictor import Predictor

logger = logging.getLogger("chfnet")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", type=Path, help="Flat KEY=value experiment config")
    parser.add_argument("--lut-path", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--train-fraction", type=float, default=None)
    parser.add_argument("--variants", default=None, help="Comma list out of base,A1,A2,A3")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--ae-hidden-dim", type=int, default=None)
    parser.add_argument("--ae-epochs", type=int, default=None)
    parser.add_argument("--standardize-codes", action="store_true", default=None)
    parser.add_argument("--output-dir", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chfnet", description="CHF look-up table surrogate models")
    parser.add_argument("--log-level", default=None, help="Overrides CHF_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="Validate a LUT CSV and compare its statistics with the published table")
    ingest.add_argument("lut", type=Path)
    ingest.add_argument("--wide", action="store_true", help="Input uses one column per quality")
    ingest.add_argument("--no-coverage-check", action="store_true")

    convert = commands.add_parser("convert-lut", help="Convert a wide LUT CSV into the long layout")
    convert.add_argument("wide", type=Path)
    convert.add_argument("out", type=Path)

    run = commands.add_parser("run", help="Train and evaluate the configured variant matrix")
    _add_overrides(run)

    train = commands.add_parser("train", help="Train and evaluate a single variant")
    _add_overrides(train)
    train.add_argument("--variant", required=True, choices=VARIANT_ORDER)

    study = commands.add_parser("study", help="Repeat the matrix over several master seeds")
    _add_overrides(study)
    study.add_argument("--seeds", required=True, help="Comma list of master seeds")

    evaluate_cmd = commands.add_parser("evaluate", help="Metrics of a saved model on a dataset CSV")
    evaluate_cmd.add_argument("model", type=Path)
    evaluate_cmd.add_argument("dataset", type=Path)

    predict = commands.add_parser("predict", help="Model prediction next to the LUT value at one point")
    predict.add_argument("model", type=Path)
    predict.add_argument("--p", type=float, required=True, help="Pressure [MPa]")
    predict.add_argument("--g", type=float, required=True, help="Mass flux [kg/m2s]")
    predict.add_argument("--x", type=float, required=True, help="Thermodynamic quality [-]")
    predict.add_argument("--d", type=float, default=8.0, help="Tube diameter [mm]")
    predict.add_argument("--lut", type=Path, default=None, help="LUT CSV (defaults to CHF_LUT_PATH)")

    export = commands.add_parser("export-predictions", help="Write measured vs predicted CHF as CSV")
    export.add_argument("model", type=Path)
    export.add_argument("dataset", type=Path)
    export.add_argument("--out", type=Path, default=None)
    export.add_argument("--split-tag", default="all")

    serve = commands.add_parser("serve", help="Start the HTTP inference service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "lut_path": args.lut_path,
        "seed": args.seed,
        "train_fraction": args.train_fraction,
        "variants": args.variants,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "ae_hidden_dim": args.ae_hidden_dim,
        "ae_epochs": args.ae_epochs,
        "standardize_codes": args.standardize_codes,
        "output_dir": args.output_dir,
    }


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_ingest(args: argparse.Namespace) -> int:
    loader = load_lut_wide if args.wide else load_lut
    grid = loader(args.lut, require_full_coverage=not args.no_coverage_check)
    dataset = flatten(grid)
    stats = compute_stats(dataset)
    comparison = compare_with_reference(stats, PUBLISHED_STATS)
    mismatches = [f"{column}.{cell}" for column, cells in comparison.items() for cell, item in cells.items() if not item["ok"]]
    if mismatches:
        logger.warning("Statistics differ from the published table in %s", ", ".join(mismatches))
    _print_json({
        "shape": list(grid.shape),
        "sample_count": len(dataset),
        "stats": {name: item.as_dict() for name, item in stats.items()},
        "reference_comparison": comparison,
    })
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    write_lut(load_lut_wide(args.wide), args.out)
    return 0


def cmd_run(args: argparse.Namespace, variants: Optional[str] = None) -> int:
    overrides = _overrides(args)
    if variants is not None:
        overrides["variants"] = variants
    cfg = load_experiment_config(args.config, overrides)
    report = run_experiment(cfg)
    print(report.table(), end="")
    if len(report.variants) >= 2:
        print()
        print(compare_variants(report).render(), end="")
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, _overrides(args))
    seeds = [int(part) for part in args.seeds.split(",") if part.strip()]
    _print_json(run_study(cfg, seeds))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    predictor = Predictor.load(args.model)
    dataset = read_dataset_csv(args.dataset)
    report = evaluate(dataset.targets, predictor.predict_dataset(dataset))
    _print_json({"model": predictor.variant, **report.to_dict()})
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    query = QueryPoint(pressure=args.p, mass_flux=args.g, quality=args.x, diameter=args.d)
    predictor = Predictor.load(args.model)
    model_chf = predictor.predict_one(query.pressure, query.mass_flux, query.quality)
    grid = load_lut(args.lut or get_settings().lut_path, require_full_coverage=False)
    _print_json({
        "query": {"pressure_mpa": args.p, "mass_flux_kg_m2s": args.g, "quality": args.x, "diameter_mm": args.d},
        "model": {"variant": predictor.variant, "chf_8mm": model_chf, "chf": correct_diameter(max(model_chf, 0.0), args.d)},
        "lut": {"chf_8mm": lookup(grid, replace(query, diameter=REFERENCE_DIAMETER_MM)), "chf": lookup(grid, query)},
    })
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    predictor = Predictor.load(args.model)
    dataset = read_dataset_csv(args.dataset)
    out = args.out or args.dataset.with_name(f"{args.dataset.stem}_{predictor.variant}_predictions.csv")
    export_predictions(predictor, dataset, out, split_tag=args.split_tag)
    print(out)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("chfnet.web.main:app", host=args.host, port=args.port)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or get_settings().log_level)
    handlers = {
        "ingest": cmd_ingest,
        "convert-lut": cmd_convert,
        "run": cmd_run,
        "train": lambda a: cmd_run(a, variants=a.variant),
        "study": cmd_study,
        "evaluate": cmd_evaluate,
        "predict": cmd_predict,
        "export-predictions": cmd_export,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except ChfError as exc:
        code = exit_code_for(exc)
        logger.error("%s failed (exit %d): %s", args.command, code, exc)
        return code


if __name__ == "__main__":
    sys.exit(main())
