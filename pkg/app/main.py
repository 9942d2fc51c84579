"""Command-line entry point: python -m app.main <command> ..."""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from app import __version__
from app.cli import commands
from app.config import config
from app.errors import FpnrError, UsageError

logger = logging.getLogger("app")


class _ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as UsageError so they share the exit-code mapping."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="fpnr", description="Infrared fixed-pattern-noise simulation and correction")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides FPNR_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Corrupt a clean image with fixed pattern noise")
    simulate.add_argument("--input", required=True)
    simulate.add_argument("--output", required=True)
    simulate.add_argument("--sigma-g", type=float, default=0.0)
    simulate.add_argument("--sigma-o", type=float, default=0.0)
    simulate.add_argument("--geometry", choices=["stripe_column", "per_pixel"], default="stripe_column")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--bit-depth", type=int, choices=[8, 16], default=8)

    correct = commands.add_parser("correct", help="Restore frames with a classical method or the CNN")
    correct.add_argument("--method", required=True, choices=["two-point", "nn", "fa", "tv", "cnn"])
    correct.add_argument("--input", required=True, nargs="+", help="Frame(s), in temporal order")
    correct.add_argument("--output", required=True, help="File for one input, directory for several")
    correct.add_argument("--model", help="Checkpoint for method 'cnn'")
    correct.add_argument("--refs-low", nargs="+", help="Low-level reference frames for 'two-point'")
    correct.add_argument("--refs-high", nargs="+", help="High-level reference frames for 'two-point'")
    correct.add_argument("--ground-truth", nargs="+", help="Clean frames matching --input, for PSNR")
    correct.add_argument("--config", help="JSON with solver settings, precision and bit depth")
    correct.add_argument("--dump-features", help="Directory for attention masks and gain/offset maps")

    train = commands.add_parser("train", help="Train the cascade model")
    train.add_argument("--config", required=True)

    bench = commands.add_parser("bench", help="Benchmark methods over a noise grid")
    bench.add_argument("--config", required=True)

    dataset = commands.add_parser("dataset", help="Export a paired patch dataset")
    dataset.add_argument("--config", required=True)
    dataset.add_argument("--output", help="Overrides 'output' in the config")
    return parser


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    handlers = {
        "simulate": commands.simulate,
        "correct": commands.correct_command,
        "train": commands.train_command,
        "bench": commands.bench_command,
        "dataset": commands.dataset_command,
    }
    try:
        config.validate()
        args = build_parser().parse_args(argv)
        _setup_logging(args.log_level or config.LOG_LEVEL)
        return handlers[args.command](args)
    except FpnrError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"[CLI] Invalid configuration: {e}")
        return 3
    except OSError as e:
        logger.error(f"[CLI] I/O error: {e}")
        return 4
    except Exception:
        logger.exception("[CLI] Unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
