"""
Command-line entry point.

    python -m blockout train    --config <path>
    python -m blockout eval     --checkpoint <path> --data <path>
    python -m blockout analyze  --run <dir> --which {hist,pca,clusters,curve,all}
    python -m blockout gen-data --config <path> --out <path>
    python -m blockout compare  --config <path> [--seeds N]

BLOCKOUT_SEED overrides the seed of any config. Every command returns an exit
code; failures print one diagnostic line to stderr.
"""

import argparse
import errno
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import ValidationError

from blockout.analysis import write_analysis
from blockout.checkpoint import encode_checkpoint, load_checkpoint, save_checkpoint
from blockout.config import get_settings
from blockout.constants import (
    ANALYSES,
    ANALYSIS_CLUSTERS,
    ANALYSIS_CURVE,
    CHECKPOINT_SUFFIX,
    LAYER_KIND_BLOCKOUT,
    RESOLVED_CONFIG_FILE,
    RUN_MANIFEST_FILE,
    TRAINING_LOG_FILE,
    VARIANT_DENSE,
)
from blockout.data import generate_hierarchical, load_binary, stratified_split, write_binary
from blockout.exceptions import BlockoutError, ConfigError, DomainError, LogicError, ShapeError
from blockout.experiments import RunResult, compare_variants, execute_run, summarize, write_comparison
from blockout.network import evaluate
from blockout.schemas import RunConfig, RunManifest, TrainingLog
from blockout.shared.logging_config import configure_logging
from blockout.shared.response_handler import EXIT_OK, error_response
from blockout.shared.utils import held_out_path
from blockout.tensor_core import RngStream

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ALL_ANALYSES = "all"


# Configuration loading


def _locate(node: yaml.Node, loc: Sequence) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along a validation error location."""
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((value for key, value in node.value if key.value == str(part)), None)
            key_line = next((key.start_mark.line for key, _ in node.value if key.value == str(part)), None)
            if match is None:
                break
            line, node = key_line + 1, match
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def load_config(path: PathLike) -> RunConfig:
    """
    Parse and validate a run config file, applying BLOCKOUT_SEED.

    Raises:
        ConfigError: With the file, line and field of the first problem found
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror or exc}") from exc
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(
            str(path), f"not valid YAML: {getattr(exc, 'problem', None) or exc}", line=mark.line + 1 if mark else None
        ) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping of keys to values", line=1)

    seed = get_settings().seed
    if seed is not None:
        logger.info(f"BLOCKOUT_SEED overrides config seed {raw.get('seed')} with {seed}")
        raw["seed"] = seed

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = tuple(error["loc"])
        field = ".".join(str(part) for part in loc) or None
        line = _locate(root, loc) if root is not None and loc else None
        raise ConfigError(str(path), error["msg"], line=line, field=field) from exc


# Run artifacts


def run_directory(config: RunConfig) -> Path:
    return Path(config.output_dir) / config.run_id


def write_run(result: RunResult) -> Tuple[Path, List[str]]:
    """Write checkpoint, training log, resolved config and manifest; return the run directory and file names."""
    config = result.config
    run_dir = run_directory(config)
    run_dir.mkdir(parents=True, exist_ok=True)

    checkpoint_name = f"{config.run_id}{CHECKPOINT_SUFFIX}"
    save_checkpoint(result.network, run_dir / checkpoint_name)
    (run_dir / TRAINING_LOG_FILE).write_text(result.log.model_dump_json(indent=2))
    (run_dir / RESOLVED_CONFIG_FILE).write_text(config.model_dump_json(indent=2))
    artifacts = [checkpoint_name, TRAINING_LOG_FILE, RESOLVED_CONFIG_FILE]

    manifest = RunManifest(
        run_id=config.run_id,
        variant=config.variant,
        seed=config.seed,
        iterations=config.iterations,
        started_at=result.started_at,
        finished_at=result.finished_at,
        train_accuracy=result.train_accuracy,
        test_accuracy=result.test_accuracy,
        artifacts=artifacts + [RUN_MANIFEST_FILE],
    )
    (run_dir / RUN_MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))
    return run_dir, manifest.artifacts


def validate_run(run_dir: Path, result: RunResult) -> None:
    """
    Re-read the written artifacts and compare them with the in-memory run.

    Raises:
        LogicError: If a file does not reproduce what was written
    """
    config = result.config
    checkpoint_path = run_dir / f"{config.run_id}{CHECKPOINT_SUFFIX}"
    if encode_checkpoint(load_checkpoint(checkpoint_path)) != checkpoint_path.read_bytes():
        raise LogicError(f"checkpoint {checkpoint_path} does not re-encode to identical bytes")
    if TrainingLog.model_validate_json((run_dir / TRAINING_LOG_FILE).read_text()) != result.log:
        raise LogicError(f"training log in {run_dir} does not match the run")
    if RunConfig.model_validate_json((run_dir / RESOLVED_CONFIG_FILE).read_text()) != config:
        raise LogicError(f"resolved config in {run_dir} does not match the run")


# Commands


def _train(config_path: PathLike) -> int:
    config = load_config(config_path)
    result = execute_run(config, get_settings().eval_workers)
    run_dir, artifacts = write_run(result)
    validate_run(run_dir, result)
    logger.info(f"Run {config.run_id} complete: {', '.join(artifacts)} in {run_dir}")
    print(f"train_accuracy={result.train_accuracy!r} test_accuracy={result.test_accuracy!r} run_dir={run_dir}")
    return EXIT_OK


def _eval(checkpoint_path: PathLike, data_path: PathLike) -> int:
    network = load_checkpoint(checkpoint_path)
    dataset = load_binary(data_path)
    if dataset.dim != network.input_dim:
        raise ShapeError("eval input", (dataset.dim,), (network.input_dim,))
    if dataset.num_classes > network.num_classes:
        raise DomainError(f"dataset has {dataset.num_classes} classes, checkpoint predicts {network.num_classes}")
    with network.inference_mode():
        accuracy = evaluate(network, dataset, get_settings().eval_workers)
    print(f"accuracy={accuracy!r}")
    return EXIT_OK


def _analyze(run_dir: PathLike, which: str) -> int:
    run_dir = Path(run_dir)
    log_path = run_dir / TRAINING_LOG_FILE
    if not log_path.is_file():
        raise FileNotFoundError(errno.ENOENT, "training log not found", str(log_path))
    log = TrainingLog.model_validate_json(log_path.read_text())

    config_path = run_dir / RESOLVED_CONFIG_FILE
    config = RunConfig.model_validate_json(config_path.read_text()) if config_path.is_file() else None
    run_id = config.run_id if config is not None else run_dir.name

    analyses = list(ANALYSES) if which == ALL_ANALYSES else [which]
    if any(name != ANALYSIS_CURVE for name in analyses) and not log.snapshots:
        raise FileNotFoundError(errno.ENOENT, "no probability snapshots recorded", str(log_path))

    output_layer = None
    if ANALYSIS_CLUSTERS in analyses and config is not None:
        if config.variant == VARIANT_DENSE or config.layers[-1].kind != LAYER_KIND_BLOCKOUT:
            raise LogicError("clusters analysis needs a Blockout output layer")
        output_layer = log.layers()[-1]

    written: List[Path] = []
    for name in analyses:
        written += write_analysis(run_dir, run_id, log, name, output_layer=output_layer)
    for path in written:
        print(path)
    return EXIT_OK


def _gen_data(config_path: PathLike, out_path: PathLike) -> int:
    config = load_config(config_path)
    if config.dataset != "synthetic":
        raise ConfigError(str(config_path), "gen-data requires a synthetic dataset", field="dataset")
    full = generate_hierarchical(
        seed=config.seed,
        superclasses=config.superclasses,
        subclasses_per=config.subclasses_per,
        dim=config.dim,
        per_class=config.train_per_class + config.test_per_class,
        intra_spread=config.intra_spread,
        inter_spread=config.inter_spread,
    )
    train_set, test_set = stratified_split(full, config.test_per_class, RngStream(config.seed).child("split"))
    out_path = Path(out_path)
    test_path = held_out_path(out_path)
    write_binary(train_set, out_path)
    write_binary(test_set, test_path)
    print(out_path)
    print(test_path)
    return EXIT_OK


def _compare(config_path: PathLike, seed_count: int) -> int:
    config = load_config(config_path)
    if seed_count < 1:
        raise ConfigError(str(config_path), "--seeds must be at least 1")
    seeds = list(range(config.seed, config.seed + seed_count))
    records = compare_variants(config, seeds, eval_workers=get_settings().eval_workers)
    path = write_comparison(run_directory(config), config.run_id, records)
    for record in summarize(records):
        print(f"{record.variant:>13}  train={record.train_accuracy:.4f}  test={record.test_accuracy}  gap={record.gap}")
    print(path)
    return EXIT_OK


def _guarded(command: Callable[..., int], *args) -> int:
    try:
        return command(*args)
    except Exception as exc:
        code, message = error_response(exc)
        if isinstance(exc, (BlockoutError, OSError)):
            logger.error(message)
        else:
            logger.exception(f"Unexpected failure in {command.__name__.lstrip('_')}")
        print(message, file=sys.stderr)
        return code


def cmd_train(config_path: PathLike) -> int:
    return _guarded(_train, config_path)


def cmd_eval(checkpoint_path: PathLike, data_path: PathLike) -> int:
    return _guarded(_eval, checkpoint_path, data_path)


def cmd_analyze(run_dir: PathLike, which: str) -> int:
    return _guarded(_analyze, run_dir, which)


def cmd_gen_data(config_path: PathLike, out_path: PathLike) -> int:
    return _guarded(_gen_data, config_path, out_path)


def cmd_compare(config_path: PathLike, seed_count: int = 5) -> int:
    return _guarded(_compare, config_path, seed_count)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockout", description="Train and analyze Blockout networks")
    parser.add_argument("--log-level", default=None, help="Overrides BLOCKOUT_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a network from a run config")
    train.add_argument("--config", required=True)

    evaluate_parser = commands.add_parser("eval", help="Accuracy of a checkpoint on a BODS dataset")
    evaluate_parser.add_argument("--checkpoint", required=True)
    evaluate_parser.add_argument("--data", required=True)

    analyze = commands.add_parser("analyze", help="Write analysis CSVs for a finished run")
    analyze.add_argument("--run", required=True, help="Run directory")
    analyze.add_argument("--which", required=True, choices=[*ANALYSES, ALL_ANALYSES])

    gen_data = commands.add_parser("gen-data", help="Write the synthetic dataset of a config as BODS files")
    gen_data.add_argument("--config", required=True)
    gen_data.add_argument("--out", required=True, help="Train split path; the test split goes to <stem>.test<suffix>")

    compare = commands.add_parser("compare", help="Dense baseline against the three Blockout variants")
    compare.add_argument("--config", required=True)
    compare.add_argument("--seeds", type=int, default=5, help="Number of consecutive seeds from the config seed")
    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "train": lambda args: cmd_train(args.config),
    "eval": lambda args: cmd_eval(args.checkpoint, args.data),
    "analyze": lambda args: cmd_analyze(args.run, args.which),
    "gen-data": lambda args: cmd_gen_data(args.config, args.out),
    "compare": lambda args: cmd_compare(args.config, args.seeds),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    return COMMANDS[args.command](args)
