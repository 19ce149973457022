"""
Uncertainty Attention Lab - Main Application Entry Point

This command-line application trains and inspects a toy attention
classifier with gradient-certainty attention:
- generate: synthetic grid question-answering splits
- train: training in any ablation mode
- eval: accuracy, attention quality and uncertainty reports
- mc-sample: per-sample Monte-Carlo dumps and certainty maps
- visualize: rendered attention maps
- ablate: mode-by-seed comparison table

Any ``--key value`` flag not listed for a command overrides the
configuration field of that name (``--noise-fraction 0.2``, ``--mode PUL``,
``--train.seed 3``).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from config import Config, load_run_config
from models.data_models import RunConfig, TRAINING_MODES
from models.errors import DatasetFormatError, NumericalFaultError, ShapeError, ValidationError
from modules.ablation import run_ablation_module
from modules.attention_visualization import run_attention_visualization_module
from modules.dataset_generation import run_dataset_generation_module
from modules.evaluation import run_evaluation_module
from modules.mc_sampling import run_mc_sampling_module
from modules.training import run_training_module

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class CommandErrorHandler:
    """Handler for command failures."""

    @staticmethod
    def handle_command_error(error: Exception) -> Dict:
        """
        Classify a command failure.

        Args:
            error: Exception raised by a command

        Returns:
            Dictionary with:
                - error_type: str
                - user_message: str
                - exit_code: int
        """
        error_message = str(error)

        if isinstance(error, DatasetFormatError):
            return {
                "error_type": "dataset_format",
                "user_message": f"Invalid dataset file: {error_message}",
                "exit_code": EXIT_VALIDATION,
            }

        if isinstance(error, ShapeError):
            return {
                "error_type": "shape",
                "user_message": f"Shape mismatch: {error_message}",
                "exit_code": EXIT_VALIDATION,
            }

        if isinstance(error, ValidationError):
            return {
                "error_type": "validation",
                "user_message": error_message,
                "exit_code": EXIT_VALIDATION,
            }

        if isinstance(error, NumericalFaultError):
            return {
                "error_type": "numerical",
                "user_message": f"Numerical fault: {error_message}",
                "exit_code": EXIT_NUMERICAL,
            }

        if isinstance(error, OSError):
            return {
                "error_type": "io",
                "user_message": f"File system error: {error_message}",
                "exit_code": EXIT_FAILURE,
            }

        # Unknown error
        return {
            "error_type": "unknown",
            "user_message": f"An error occurred: {error_message}",
            "exit_code": EXIT_FAILURE,
        }


def parse_overrides(tokens: List[str]) -> Dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into configuration overrides."""
    overrides: Dict[str, str] = {}
    index = 0
    while index < len(tokens):
        token = tokens[index]
        if not token.startswith("--") or token == "--":
            raise ValidationError(f"unexpected argument '{token}'")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            index += 1
        else:
            if index + 1 >= len(tokens):
                raise ValidationError(f"flag '{token}' needs a value")
            key, value = token[2:], tokens[index + 1]
            index += 2
        overrides[key] = value
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ucam-lab",
        description="Gradient-certainty attention lab on synthetic grid question answering.",
        allow_abbrev=False,
    )
    subparsers = parser.add_subparsers(dest="command")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text, allow_abbrev=False)
        sub.add_argument("--config", help="JSON configuration file")
        sub.add_argument("--preset", choices=sorted(Config.PRESETS), help="Named settings applied before --config")
        sub.add_argument("--out", help="Output directory")
        return sub

    command("generate", "Generate train/val/test dataset files")

    train = command("train", "Train one model")
    train.add_argument("--train-data", required=True, help="Training split")
    train.add_argument("--val-data", help="Validation split for the best checkpoint")
    train.add_argument("--html-report", action="store_true", help="Write training curves as HTML")

    evaluate = command("eval", "Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True, help="Evaluation split")
    evaluate.add_argument("--self-check", action="store_true", help="Compare model attention with itself")
    evaluate.add_argument("--attention-pgm-dir", help="Directory of <example-id>.pgm reference maps")
    evaluate.add_argument("--sweep-train-data", help="Training split for the epistemic sweep")
    evaluate.add_argument("--subset-report", action="store_true", help="Always report noisy/clean aleatoric means")
    evaluate.add_argument("--html-report", action="store_true", help="Write uncertainty vs error as HTML")

    sample = command("mc-sample", "Dump Monte-Carlo samples")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--data", required=True)
    sample.add_argument("--samples", type=int, help="Monte-Carlo passes T (default: train.eval_mc_samples)")
    sample.add_argument("--ids", nargs="+", help="Example ids (default: the first --limit examples)")
    sample.add_argument("--limit", type=int, default=4)

    visualize = command("visualize", "Render attention maps")
    visualize.add_argument("--checkpoint", required=True)
    visualize.add_argument("--data", required=True)
    visualize.add_argument("--ids", nargs="+", required=True, help="Example ids to render")

    ablate = command("ablate", "Compare training modes over seeds")
    ablate.add_argument("--train-data", required=True)
    ablate.add_argument("--val-data", required=True)
    ablate.add_argument("--modes", nargs="+", help=f"Modes (default: all of {', '.join(TRAINING_MODES)})")
    ablate.add_argument("--seeds", nargs="+", type=int, help="Seeds (default: train.seed)")
    ablate.add_argument("--html-report", action="store_true", help="Write ablation bars as HTML")
    return parser


def _out_dir(args, config: RunConfig) -> Path:
    return Path(args.out) if args.out else Path(config.out_dir)


def _run_command(args, config: RunConfig):
    if args.command == "generate":
        run_dataset_generation_module(config, Path(args.out) if args.out else Path(config.data_dir))
    elif args.command == "train":
        run_training_module(config, args.train_data, _out_dir(args, config), args.val_data, args.html_report)
    elif args.command == "eval":
        run_evaluation_module(
            config, args.checkpoint, args.data, _out_dir(args, config), self_check=args.self_check,
            attention_pgm_dir=args.attention_pgm_dir, sweep_train_path=args.sweep_train_data,
            subset_report=args.subset_report, html_report=args.html_report,
        )
    elif args.command == "mc-sample":
        run_mc_sampling_module(
            config, args.checkpoint, args.data, _out_dir(args, config), samples=args.samples,
            example_ids=args.ids, limit=args.limit,
        )
    elif args.command == "visualize":
        run_attention_visualization_module(config, args.checkpoint, args.data, args.ids, _out_dir(args, config))
    elif args.command == "ablate":
        run_ablation_module(
            config, args.train_data, args.val_data, _out_dir(args, config), modes=args.modes, seeds=args.seeds,
            html_report=args.html_report,
        )


def _configure_logging():
    level = logging.DEBUG if Config.DEBUG else getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main application entry point.
    Parses the command line, builds the effective configuration and runs
    the selected command.

    Returns:
        Process exit code (0 success, 2 validation error, 3 numerical fault, 1 other failure)
    """
    _configure_logging()
    for error in Config.validate():
        logger.warning("⚠️ Configuration: %s", error)

    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION

    try:
        config = load_run_config(args.config, parse_overrides(extra), args.preset)
        _run_command(args, config)
    except Exception as e:
        error_info = CommandErrorHandler.handle_command_error(e)
        logger.error("❌ %s", error_info["user_message"])
        if Config.DEBUG:
            logger.exception("Details")
        return error_info["exit_code"]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
