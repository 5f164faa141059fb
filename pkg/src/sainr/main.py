"""
SA-INR — Command-Line Interface

Main entry point for the experiment pipeline.

Run with:
    python -m src.sainr.main reproduce --out runs/default
    python -m src.sainr.main phantom --out runs/staged --ts 4 --seed-data 0
    python -m src.sainr.main acquire --out runs/staged
    python -m src.sainr.main train --out runs/staged [--use-prior false]
    python -m src.sainr.main infer --out runs/staged [--use-prior false]
    python -m src.sainr.main dti --out runs/staged [--directions 0,1,2,3,4,5]
    python -m src.sainr.main evaluate --out runs/staged

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .commands.acquisition import cmd_acquire, cmd_phantom
from .commands.analysis import cmd_dti, cmd_evaluate
from .commands.common import EXIT_OK, EXIT_USAGE, StageFailure
from .commands.reproduce import cmd_reproduce
from .commands.training import cmd_infer, cmd_train
from .config import settings
from .models import (
    AcquisitionProtocol,
    DirectionProtocol,
    ExperimentManifest,
    PhantomSpec,
    TrainingProtocol,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad command line."""
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got '{value}'")


def parse_indices(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'")


def _add_protocol_flags(parser: argparse.ArgumentParser) -> None:
    defaults = ExperimentManifest(version=__version__)
    group = parser.add_argument_group("protocol")
    group.add_argument("--size", type=int, default=defaults.phantom.size, help="HR slice size in pixels")
    group.add_argument("--dirs", type=int, default=defaults.directions.count, help="number of b-directions")
    group.add_argument("--train-dirs", type=int, default=defaults.directions.train,
                       help="directions used for training; the rest are held out")
    group.add_argument("--b-value", type=float, default=defaults.directions.b_value)
    group.add_argument("--ts", type=int, default=defaults.acquisition.thickness_factor,
                       help="slice thickness factor t_s")
    group.add_argument("--noise-sigma", type=float, default=defaults.acquisition.noise_sigma)
    group.add_argument("--noise-model", choices=["none", "gaussian", "rician"],
                       default=defaults.acquisition.noise_model)
    group.add_argument("--degrade-prior", type=parse_bool, default=False,
                       help="acquire the b=0 prior as a noisy thick slice")
    group.add_argument("--iters", type=int, default=defaults.training.iterations)
    group.add_argument("--dirs-per-step", type=int, default=defaults.training.directions_per_step)
    group.add_argument("--lr", type=float, default=defaults.training.learning_rate)
    group.add_argument("--log-every", type=int, default=defaults.training.log_every)
    group.add_argument("--seed-data", type=int, default=defaults.seed_data)
    group.add_argument("--seed-train", type=int, default=defaults.seed_train)
    group.add_argument("--slices", type=int, default=defaults.slices,
                       help="independent phantom slices (data seed + k)")
    group.add_argument("--use-prior", type=parse_bool, default=True,
                       help="false additionally trains and reports the prior-free ablation")
    group.add_argument("--version-tag", default=None, help="version written into the manifest")


def manifest_from_args(args: argparse.Namespace) -> ExperimentManifest:
    return ExperimentManifest(
        version=args.version_tag or settings.version_tag,
        seed_data=args.seed_data,
        seed_train=args.seed_train,
        slices=args.slices,
        phantom=PhantomSpec(size=args.size),
        directions=DirectionProtocol(count=args.dirs, train=args.train_dirs, b_value=args.b_value),
        acquisition=AcquisitionProtocol(
            thickness_factor=args.ts,
            noise_sigma=args.noise_sigma,
            noise_model=args.noise_model,
            degrade_prior=args.degrade_prior,
        ),
        training=TrainingProtocol(
            iterations=args.iters,
            directions_per_step=args.dirs_per_step,
            learning_rate=args.lr,
            log_every=args.log_every,
        ),
        ablation=not args.use_prior,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="sainr", description="SA-INR desk-scale dMRI super-resolution experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides SAINR_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    def with_out(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--out", type=Path, required=True, help="experiment directory")
        return p

    _add_protocol_flags(with_out(sub.add_parser("phantom", help="write manifest, directions and ground truth")))
    with_out(sub.add_parser("acquire", help="simulate the thick-slice views"))
    for name, text in (("train", "fit one INR per slice"), ("infer", "render all directions")):
        p = with_out(sub.add_parser(name, help=text))
        p.add_argument("--use-prior", type=parse_bool, default=None,
                       help="model variant; defaults to the manifest's training setting")
    dti = with_out(sub.add_parser("dti", help="fit DTI to ground truth and reconstructions"))
    dti.add_argument("--directions", type=parse_indices, default=None,
                     help="comma-separated direction indices for a single custom fit")
    with_out(sub.add_parser("evaluate", help="metrics, figures, tables and summary"))
    _add_protocol_flags(with_out(sub.add_parser("reproduce", help="run every stage")))
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "phantom":
        cmd_phantom(args.out, manifest_from_args(args))
    elif args.command == "acquire":
        cmd_acquire(args.out)
    elif args.command == "train":
        cmd_train(args.out, use_prior=args.use_prior)
    elif args.command == "infer":
        cmd_infer(args.out, use_prior=args.use_prior)
    elif args.command == "dti":
        cmd_dti(args.out, directions=args.directions)
    elif args.command == "evaluate":
        cmd_evaluate(args.out)
    elif args.command == "reproduce":
        cmd_reproduce(args.out, manifest_from_args(args))
    else:
        raise UsageError(f"unknown command '{args.command}'")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    settings.apply_torch()

    try:
        run(args)
    except StageFailure as failure:
        print(f"{failure}", file=sys.stderr)
        return failure.exit_code
    except ValidationError as e:
        # protocol flags rejected before any stage ran
        print(f"[{args.command}] invalid protocol: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(f"[{args.command}] {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
