"""Batch front-end: `python -m src.cli <subcommand> ...`."""

import argparse
import json
import sys
import uuid
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy
from pydantic import ValidationError

from src.config.index import appConfig
from src.config.logging import (
    clear_context,
    configure_logging,
    get_logger,
    set_run_id,
    set_subcommand,
)
from src.learning.lightnet import build_arch, grad_check_all, toy_system
from src.models.errors import (
    CheckpointError,
    ConfigurationError,
    ContractViolation,
    DomainError,
    TrainingError,
)
from src.models.index import ComplexityDims, Method, RunConfig
from src.pipeline.evaluation.index import run_monte_carlo, run_sweep
from src.pipeline.evaluation.utils import (
    complexity_report,
    write_complexity_csv,
    write_results_csv,
)
from src.pipeline.training.index import generate_dataset, method_for, train
from src.pipeline.training.utils import (
    ModelCheckpoint,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from src.utils.index import canonical_json, config_digest

logger = get_logger(__name__)

PACKAGE_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_CHECKPOINT = 4
EXIT_TRAINING = 5


def _parse_override(override: str):
    key, sep, raw_value = override.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override must look like dotted.key=value, got {override!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return key.split("."), value


def apply_overrides(document: dict, overrides: List[str]) -> dict:
    for override in overrides or []:
        path, value = _parse_override(override)
        node = document
        for key in path[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(
                    f"cannot set {'.'.join(path)}: {key} is not a section",
                    key_path=".".join(path),
                )
            node = child
        node[path[-1]] = value
    return document


def load_run_config(path: Optional[str], overrides: Optional[List[str]] = None) -> RunConfig:
    document = {}
    if path:
        try:
            document = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {str(e)}")
    document = apply_overrides(document, overrides)
    try:
        return RunConfig(**document)
    except ValidationError as e:
        first = e.errors()[0]
        key_path = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(f"{key_path}: {first['msg']}", key_path=key_path)


def resolve_output_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(appConfig["output_root"]) / f"{args.subcommand}-{config_digest(config)[:12]}"


def resolve_workers(args: argparse.Namespace, config: RunConfig) -> int:
    return getattr(args, "workers", None) or config.workers or appConfig["workers"]


def write_manifest(
    output_dir: Path, args: argparse.Namespace, argv: List[str], config: RunConfig
) -> Path:
    manifest = {
        "subcommand": args.subcommand,
        "argv": argv,
        "config": json.loads(canonical_json(config)),
        "config_digest": config_digest(config),
        "system_digest": config_digest(config.system),
        "master_seed": config.master_seed,
        "workers": resolve_workers(args, config),
        "versions": {
            "synclab": PACKAGE_VERSION,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_models(paths: List[str], config: RunConfig) -> Dict[Method, ModelCheckpoint]:
    expected = config_digest(config.system)
    models = {method: load_checkpoint(path, expected) for method, path in config.models.items()}
    for path in paths or []:
        ckpt = load_checkpoint(path, expected)
        models[ckpt.method] = ckpt
    for method, ckpt in models.items():
        if ckpt.method != method:
            raise CheckpointError(
                f"models.{method.value} points to a {ckpt.method.value} checkpoint"
            )
    return models


def cmd_gen_data(args, argv) -> int:
    config = load_run_config(args.config, args.set)
    output_dir = resolve_output_dir(args, config)
    write_manifest(output_dir, args, argv, config)
    dataset = generate_dataset(config.dataset, config.system, resolve_workers(args, config))
    save_dataset(dataset, output_dir / "dataset")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    config = load_run_config(args.config, args.set)
    dataset = load_dataset(args.data)
    if config_digest(dataset.system) != config_digest(config.system):
        raise CheckpointError("dataset was generated for a different system config")

    output_dir = resolve_output_dir(args, config)
    write_manifest(output_dir, args, argv, config)
    arch = build_arch(dataset.config.variant, config.system)
    try:
        params, report = train(dataset, config.train, arch)
    except TrainingError as e:
        if e.report is not None:
            (output_dir / "report.json").write_text(
                json.dumps(e.report.to_dict(), indent=2) + "\n"
            )
        raise

    ckpt = ModelCheckpoint(
        params=params,
        method=method_for(dataset.config),
        config_digest=config_digest(config.system),
        generator_digest=config_digest(
            {
                "dataset": dataset.config.model_dump(mode="json"),
                "train": config.train.model_dump(mode="json"),
            }
        ),
    )
    save_checkpoint(ckpt, output_dir / "model.ckpt")
    (output_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    config = load_run_config(args.config, args.set)
    models = _load_models(args.model, config)
    output_dir = resolve_output_dir(args, config)
    write_manifest(output_dir, args, argv, config)
    result = run_monte_carlo(config.eval, models, config.system, resolve_workers(args, config))
    write_results_csv(result, output_dir / "results.csv")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    config = load_run_config(args.config, args.set)
    models = _load_models(args.model, config)
    output_dir = resolve_output_dir(args, config)
    write_manifest(output_dir, args, argv, config)
    result = run_sweep(config, models, resolve_workers(args, config))
    write_results_csv(result, output_dir / "sweep.csv")
    return EXIT_OK


def cmd_complexity(args, argv) -> int:
    try:
        dims = ComplexityDims(N=args.N, N_s=args.Ns, N_g=args.Ng, L=args.L)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(first["msg"], key_path=".".join(map(str, first["loc"])))
    report = complexity_report(dims)
    if args.output:
        write_complexity_csv(report, args.output)
    write_complexity_csv(report, sys.stdout)
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    if args.toy or not args.config:
        system = toy_system()
    else:
        system = load_run_config(args.config, args.set).system
    reports = grad_check_all(seed=args.seed, trials=args.trials, config=system)
    passed = all(report.passed for report in reports)
    document = {
        "status": "pass" if passed else "fail",
        "N": system.N,
        "N_g": system.N_g,
        "reports": [report.to_dict() for report in reports],
    }
    print(json.dumps(document, indent=2))
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_schema(args, argv) -> int:
    print(json.dumps(RunConfig.model_json_schema(), indent=2))
    return EXIT_OK


class SyncLabArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as ConfigurationError instead of exiting."""

    def error(self, message: str):
        raise ConfigurationError(f"{self.prog}: {message}", key_path="argv")


def _add_run_arguments(parser: argparse.ArgumentParser, needs_config: bool = True) -> None:
    parser.add_argument("--config", required=needs_config, help="run config JSON file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value by dotted key path (value parsed as JSON)",
    )
    parser.add_argument("--workers", type=int, help="worker threads (never changes outputs)")
    parser.add_argument("--output-dir", help="defaults to config output_dir or the output root")


def build_parser() -> argparse.ArgumentParser:
    parser = SyncLabArgumentParser(
        prog="synclab",
        description="Metric-learning OFDM timing synchronization lab",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    gen_data = subparsers.add_parser("gen-data", help="generate a training dataset")
    _add_run_arguments(gen_data)
    gen_data.set_defaults(handler=cmd_gen_data)

    train_parser = subparsers.add_parser("train", help="train a network on a dataset")
    _add_run_arguments(train_parser)
    train_parser.add_argument("--data", required=True, help="dataset directory")
    train_parser.set_defaults(handler=cmd_train)

    for name, handler, help_text in (
        ("eval", cmd_eval, "Monte-Carlo error probability on one channel"),
        ("sweep", cmd_sweep, "error probability over every configured channel"),
    ):
        eval_parser = subparsers.add_parser(name, help=help_text)
        _add_run_arguments(eval_parser)
        eval_parser.add_argument("--model", nargs="*", default=[], help="checkpoint files")
        eval_parser.set_defaults(handler=handler)

    complexity = subparsers.add_parser("complexity", help="complex-multiplication counts")
    complexity.add_argument("--N", type=int, required=True)
    complexity.add_argument("--Ns", type=int, required=True)
    complexity.add_argument("--Ng", type=int, required=True)
    complexity.add_argument("--L", type=int, required=True)
    complexity.add_argument("--output", help="also write the CSV to this file")
    complexity.set_defaults(handler=cmd_complexity)

    gradcheck = subparsers.add_parser("gradcheck", help="finite-difference gradient check")
    _add_run_arguments(gradcheck, needs_config=False)
    gradcheck.add_argument("--toy", action="store_true", help="use N=16, N_g=4")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--trials", type=int, default=10)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    schema = subparsers.add_parser("schema", help="print the run config JSON schema")
    schema.set_defaults(handler=cmd_schema)
    return parser


def _report_error(error_type: str, message: str, key_path: Optional[str] = None) -> None:
    document = {
        "status": "error",
        "error_type": error_type,
        "message": message,
        "key_path": key_path,
    }
    sys.stderr.write(json.dumps(document) + "\n")


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    set_run_id(uuid.uuid4().hex[:12])
    try:
        args = build_parser().parse_args(argv)
        set_subcommand(args.subcommand)
        logger.info("command_started", argv=argv)
        status = args.handler(args, argv)
        logger.info("command_completed", exit_status=status)
        return status
    except ConfigurationError as e:
        logger.error("command_failed", error=str(e), key_path=e.key_path)
        _report_error("ConfigurationError", str(e), e.key_path)
        return EXIT_CONFIG
    except (DomainError, ContractViolation) as e:
        logger.error("command_failed", error=str(e))
        _report_error(type(e).__name__, str(e))
        return EXIT_DOMAIN
    except CheckpointError as e:
        logger.error("command_failed", error=str(e))
        _report_error("CheckpointError", str(e))
        return EXIT_CHECKPOINT
    except TrainingError as e:
        logger.error("command_failed", error=str(e), diagnostics=e.diagnostics)
        _report_error("TrainingError", str(e))
        return EXIT_TRAINING
    except Exception as e:
        logger.error("command_failed", error=str(e), exc_info=True)
        _report_error(type(e).__name__, str(e))
        return EXIT_FAILURE
    finally:
        clear_context()


def main() -> None:
    configure_logging(log_filename="synclab.log")
    sys.exit(run())


if __name__ == "__main__":
    main()
