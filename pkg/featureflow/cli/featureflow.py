"""Feature flow estimation, aggregation and post-processing CLI."""

import sys
from argparse import ArgumentParser, Namespace, _SubParsersAction
from json import dumps
from logging import DEBUG, INFO, basicConfig
from pathlib import Path
from typing import Callable, NoReturn

from featureflow.aggregate import AggregationInput, adaptive_weights, aggregate
from featureflow.config import CONFIG, CONFIG_FILE
from featureflow.correlation import CorrConfig, correlation
from featureflow.exceptions import FeatureFlowError
from featureflow.ftz import load_checkpoint, load_tensor, save_checkpoint, save_tensor
from featureflow.iff import VARIANTS, IffConfig, IffModule
from featureflow.logging import LOG_FORMAT, LOGGER
from featureflow.report import write_report
from featureflow.seqnms import (
    RESCORE_OPS,
    VARIANTS as SEQNMS_VARIANTS,
    SeqNmsConfig,
    dump_detections,
    load_detections,
    seqnms,
)
from featureflow.suite import CHECKS, GRAPH_TOLERANCE, run_suite
from featureflow.synth import SynthSpec, generate_synthetic
from featureflow.train import TrainingConfig, TrainingReport, train_iff
from featureflow.trl import TrlConfig, trl_forward
from featureflow.warp import bilinear_warp


__all__ = ["main"]


USAGE_ERROR = 1
VALIDATION_FAILURE = 2


def _print_error(error: str, message: str) -> None:
    """Writes a machine-readable error line to stderr."""

    print(dumps({"error": error, "message": message}), file=sys.stderr)


class _Parser(ArgumentParser):
    """Argument parser reporting usage errors as JSON with exit code 1."""

    def error(self, message: str) -> NoReturn:
        """Prints the usage and a JSON error, then exits."""
        self.print_usage(sys.stderr)
        _print_error("UsageError", message)
        self.exit(USAGE_ERROR)


def _add_iff_arguments(parser: ArgumentParser) -> None:
    """Adds the module structure options."""

    parser.add_argument("--variant", choices=VARIANTS, help="the IFF graph variant")
    parser.add_argument("--in-channels", type=int, help="the feature channels")
    parser.add_argument("--mid-channels", type=int, help="the embedding channels")
    parser.add_argument("--fuse-channels", type=int, help="the fusion channels")
    parser.add_argument(
        "-d", "--max-displacement", type=int, help="the correlation displacement"
    )
    parser.add_argument("-s", "--stride", type=int, help="the correlation stride")


def _add_trl_arguments(parser: ArgumentParser) -> None:
    """Adds the transformation residual loss options."""

    parser.add_argument("--trl-lambda", type=float, help="the trade-off weight")
    parser.add_argument("--trl-delta", type=float, help="the smooth L1 crossover")


def _add_parser_warp(subparsers: _SubParsersAction) -> None:
    """Adds a parser for warping a feature map."""

    parser = subparsers.add_parser("warp", help="warp a feature map by a flow map")
    parser.add_argument("feature", type=Path, help="the feature FTZ file")
    parser.add_argument("flow", type=Path, help="the flow FTZ file")
    parser.add_argument("output", type=Path, help="the warped FTZ file")


def _add_parser_corr(subparsers: _SubParsersAction) -> None:
    """Adds a parser for correlating two feature maps."""

    parser = subparsers.add_parser("corr", help="correlate two feature maps")
    parser.add_argument("f_i", type=Path, help="the current feature FTZ file")
    parser.add_argument("f_j", type=Path, help="the neighbour feature FTZ file")
    parser.add_argument("output", type=Path, help="the cost volume FTZ file")
    parser.add_argument(
        "-d",
        "--max-displacement",
        type=int,
        default=10,
        help="the maximum displacement",
    )
    parser.add_argument("-s", "--stride", type=int, default=2, help="the stride")


def _add_parser_iff_init(subparsers: _SubParsersAction) -> None:
    """Adds a parser for initialising a module."""

    parser = subparsers.add_parser("iff-init", help="create an IFF checkpoint")
    parser.add_argument("checkpoint", type=Path, help="the checkpoint to write")
    parser.add_argument("--seed", type=int, default=0, help="the initialisation seed")
    _add_iff_arguments(parser)


def _add_parser_iff_forward(subparsers: _SubParsersAction) -> None:
    """Adds a parser for predicting a flow map."""

    parser = subparsers.add_parser("iff-forward", help="predict a flow map")
    parser.add_argument("checkpoint", type=Path, help="the module checkpoint")
    parser.add_argument("f_i", type=Path, help="the current feature FTZ file")
    parser.add_argument("f_j", type=Path, help="the neighbour feature FTZ file")
    parser.add_argument("output", type=Path, help="the flow FTZ file")
    _add_iff_arguments(parser)


def _add_parser_iff_train(subparsers: _SubParsersAction) -> None:
    """Adds a parser for training a module on synthetic data."""

    parser = subparsers.add_parser("iff-train", help="train on a synthetic sequence")
    parser.add_argument("checkpoint", type=Path, help="the checkpoint to write")
    parser.add_argument("--synth", type=Path, help="the SynthSpec key=value file")
    parser.add_argument("--init", type=Path, help="a checkpoint to start from")
    parser.add_argument("--report", type=Path, help="the training report JSON file")
    parser.add_argument("--seed", type=int, default=0, help="the seed")
    parser.add_argument("--steps", type=int, help="the number of SGD steps")
    parser.add_argument("--lr", type=float, help="the initial learning rate")
    parser.add_argument("--radius", type=int, help="the temporal sampling radius")
    parser.add_argument("--neighbors", type=int, help="the neighbours per step")
    parser.add_argument(
        "--forward-only",
        action="store_true",
        help="sample neighbours from earlier frames only",
    )
    _add_iff_arguments(parser)
    _add_trl_arguments(parser)


def _add_parser_iff_info(subparsers: _SubParsersAction) -> None:
    """Adds a parser for the structure report."""

    parser = subparsers.add_parser("iff-info", help="print the layer report")
    parser.add_argument(
        "--backbone", action="store_true", help="use the backbone-scale widths"
    )
    parser.add_argument("--height", type=int, help="the feature map height")
    parser.add_argument("--width", type=int, help="the feature map width")
    _add_iff_arguments(parser)


def _add_parser_trl(subparsers: _SubParsersAction) -> None:
    """Adds a parser for evaluating the loss."""

    parser = subparsers.add_parser("trl", help="print the transformation residual loss")
    parser.add_argument("f_i", type=Path, help="the current feature FTZ file")
    parser.add_argument("f_j", type=Path, help="the neighbour feature FTZ file")
    parser.add_argument("flow", type=Path, help="the flow FTZ file")
    _add_trl_arguments(parser)


def _add_parser_aggregate(subparsers: _SubParsersAction) -> None:
    """Adds a parser for aggregating features."""

    parser = subparsers.add_parser("aggregate", help="aggregate warped features")
    parser.add_argument("current", type=Path, help="the current feature FTZ file")
    parser.add_argument(
        "neighbors", type=Path, nargs="*", help="warped neighbour FTZ files"
    )
    parser.add_argument("-o", "--output", type=Path, required=True, help="the output")
    parser.add_argument("--weights", type=Path, help="the weight maps FTZ file")


def _add_parser_seqnms(subparsers: _SubParsersAction) -> None:
    """Adds a parser for post-processing detections."""

    parser = subparsers.add_parser("seqnms", help="rescore detections over time")
    parser.add_argument(
        "input", nargs="?", default="-", help="the detections JSON (default: stdin)"
    )
    parser.add_argument(
        "-o", "--output", default="-", help="the output JSON (default: stdout)"
    )
    parser.add_argument("--variant", choices=SEQNMS_VARIANTS, help="the variant")
    parser.add_argument("--link-iou", type=float, help="the linking threshold")
    parser.add_argument("--nms-iou", type=float, help="the suppression threshold")
    parser.add_argument(
        "--rescore", choices=RESCORE_OPS, help="the original variant's rescoring"
    )


def _add_parser_gradcheck(subparsers: _SubParsersAction) -> None:
    """Adds a parser for the gradient suite."""

    parser = subparsers.add_parser("gradcheck", help="run the gradient suite")
    parser.add_argument(
        "--tol",
        type=float,
        default=GRAPH_TOLERANCE,
        help="the composed-graph tolerance",
    )
    parser.add_argument("--seeds", type=int, default=20, help="the number of seeds")
    parser.add_argument(
        "--check",
        choices=tuple(CHECKS),
        action="append",
        help="run only this check (repeatable)",
    )


def _add_parser_synth(subparsers: _SubParsersAction) -> None:
    """Adds a parser for generating synthetic sequences."""

    parser = subparsers.add_parser("synth", help="emit synthetic frames and flows")
    parser.add_argument("directory", type=Path, help="the output directory")
    parser.add_argument("--spec", type=Path, help="the SynthSpec key=value file")


def _add_parser_report(subparsers: _SubParsersAction) -> None:
    """Adds a parser for rendering a training report."""

    parser = subparsers.add_parser("report", help="render a training report")
    parser.add_argument("report", type=Path, help="the training report JSON file")
    parser.add_argument("directory", type=Path, help="the output directory")


def get_args(argv: list[str] | None = None) -> Namespace:
    """Returns the CLI arguments."""

    parser = _Parser(description="Estimate, apply and evaluate feature flow.")
    parser.add_argument("-c", "--config", type=Path, help="an extra config file")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )
    subparsers = parser.add_subparsers(dest="action", required=True)
    _add_parser_warp(subparsers)
    _add_parser_corr(subparsers)
    _add_parser_iff_init(subparsers)
    _add_parser_iff_forward(subparsers)
    _add_parser_iff_train(subparsers)
    _add_parser_iff_info(subparsers)
    _add_parser_trl(subparsers)
    _add_parser_aggregate(subparsers)
    _add_parser_seqnms(subparsers)
    _add_parser_gradcheck(subparsers)
    _add_parser_synth(subparsers)
    _add_parser_report(subparsers)
    return parser.parse_args(argv)


def _replace(config, args: Namespace, **fields: str):
    """Overrides config fields with the options that were given."""

    return config._replace(
        **{
            field: getattr(args, option)
            for field, option in fields.items()
            if getattr(args, option) is not None
        }
    )


def _iff_config(args: Namespace, base: IffConfig | None = None) -> IffConfig:
    """Returns the module structure from config file and options."""

    config = _replace(
        IffConfig.from_config() if base is None else base,
        args,
        variant="variant",
        in_channels="in_channels",
        mid_channels="mid_channels",
        fuse_channels="fuse_channels",
    )
    corr = _replace(
        config.corr, args, max_displacement="max_displacement", stride="stride"
    )
    return config._replace(corr=corr).validate()


def _trl_config(args: Namespace) -> TrlConfig:
    """Returns the loss settings from config file and options."""

    return _replace(
        TrlConfig.from_config(), args, trade_off="trl_lambda", delta="trl_delta"
    ).validate()


def _load_module(args: Namespace) -> IffModule:
    """Builds a module and loads the checkpoint into it."""

    module = IffModule.build(_iff_config(args))
    module.load_state(load_checkpoint(args.checkpoint))
    return module


def _warp(args: Namespace) -> int:
    """Warps a feature map."""

    warped = bilinear_warp(load_tensor(args.feature), load_tensor(args.flow))
    save_tensor(warped, args.output)
    return 0


def _corr(args: Namespace) -> int:
    """Correlates two feature maps."""

    cfg = CorrConfig(args.max_displacement, args.stride).validate()
    volume = correlation(load_tensor(args.f_i), load_tensor(args.f_j), cfg)
    save_tensor(volume, args.output)
    LOGGER.info("Wrote %d correlation channels.", cfg.channels)
    return 0


def _iff_init(args: Namespace) -> int:
    """Writes a freshly initialised checkpoint."""

    module = IffModule.build(_iff_config(args), args.seed)
    save_checkpoint(module.params, args.checkpoint)
    return 0


def _iff_forward(args: Namespace) -> int:
    """Predicts a flow map."""

    module = _load_module(args)
    flow = module.forward(load_tensor(args.f_i), load_tensor(args.f_j))
    save_tensor(flow, args.output)
    return 0


def _iff_train(args: Namespace) -> int:
    """Trains a module and writes its checkpoint."""

    spec = SynthSpec() if args.synth is None else SynthSpec.load(args.synth)
    base = IffConfig.from_config()._replace(in_channels=spec.channels)
    module = IffModule.build(_iff_config(args, base), args.seed)

    if args.init is not None:
        module.load_state(load_checkpoint(args.init))

    cfg = _replace(
        TrainingConfig.from_config(),
        args,
        steps="steps",
        lr="lr",
        radius="radius",
        neighbors="neighbors",
        seed="seed",
    )

    if args.forward_only:
        cfg = cfg._replace(bidirectional=False)

    report = train_iff(module, spec, cfg, _trl_config(args))
    save_checkpoint(module.params, args.checkpoint)

    if args.report is not None:
        report.save(args.report)

    print(dumps({"initial": report.initial._asdict(), "final": report.final._asdict()}))
    return 0


def _iff_info(args: Namespace) -> int:
    """Prints the layer report."""

    base = IffConfig.backbone(args.variant or "advanced") if args.backbone else None
    module = IffModule.build(_iff_config(args, base))
    report = module.report(args.height, args.width)
    print(dumps(report.to_json(), indent=2))
    return 0 if report.shallower_than_flownet else VALIDATION_FAILURE


def _trl(args: Namespace) -> int:
    """Prints the loss."""

    loss = trl_forward(
        load_tensor(args.f_i),
        load_tensor(args.f_j),
        load_tensor(args.flow),
        _trl_config(args),
    )
    print(repr(loss))
    return 0


def _aggregate(args: Namespace) -> int:
    """Aggregates the current frame with warped neighbours."""

    input = AggregationInput.create(
        load_tensor(args.current), [load_tensor(path) for path in args.neighbors]
    )
    save_tensor(aggregate(input), args.output)

    if args.weights is not None:
        save_tensor(adaptive_weights(input), args.weights)

    return 0


def _seqnms(args: Namespace) -> int:
    """Rescores detections."""

    cfg = _replace(
        SeqNmsConfig.from_config(),
        args,
        variant="variant",
        link_iou="link_iou",
        nms_iou="nms_iou",
        rescore_op="rescore",
    )
    text = sys.stdin.read() if args.input == "-" else Path(args.input).read_text()
    result = dump_detections(seqnms(load_detections(text), cfg))

    if args.output == "-":
        print(result)
    else:
        Path(args.output).write_text(result + "\n")

    return 0


def _gradcheck(args: Namespace) -> int:
    """Runs the gradient suite."""

    results = run_suite(range(args.seeds), names=args.check, graph_tolerance=args.tol)
    failures = [result for result in results if not result.passed]

    for result in failures:
        _print_error(
            "GradientMismatch",
            f"{result.name} seed {result.seed}: "
            f"{result.error:.3e} >= {result.tolerance:.0e}",
        )

    print(dumps({"checks": len(results), "failures": len(failures)}))
    return VALIDATION_FAILURE if failures else 0


def _synth(args: Namespace) -> int:
    """Writes frames and ground-truth flows."""

    spec = SynthSpec() if args.spec is None else SynthSpec.load(args.spec)
    frames, flows = generate_synthetic(spec)
    args.directory.mkdir(parents=True, exist_ok=True)

    for index, frame in enumerate(frames):
        save_tensor(frame, args.directory / f"frame_{index:03d}.ftz")

    for index, flow in enumerate(flows):
        save_tensor(flow, args.directory / f"flow_{index:03d}.ftz")

    (args.directory / "spec.conf").write_text(spec.to_text())
    LOGGER.info("Wrote %d frames to %s.", len(frames), args.directory)
    return 0


def _report(args: Namespace) -> int:
    """Renders a training report."""

    for path in write_report(TrainingReport.load(args.report), args.directory):
        LOGGER.info("Wrote %s.", path)

    return 0


ACTIONS: dict[str, Callable[[Namespace], int]] = {
    "warp": _warp,
    "corr": _corr,
    "iff-init": _iff_init,
    "iff-forward": _iff_forward,
    "iff-train": _iff_train,
    "iff-info": _iff_info,
    "trl": _trl,
    "aggregate": _aggregate,
    "seqnms": _seqnms,
    "gradcheck": _gradcheck,
    "synth": _synth,
    "report": _report,
}


def main(argv: list[str] | None = None) -> int:
    """Main function."""

    args = get_args(argv)
    basicConfig(level=DEBUG if args.verbose else INFO, format=LOG_FORMAT)
    CONFIG.read(CONFIG_FILE)

    if args.config is not None:
        CONFIG.read(args.config)

    try:
        return ACTIONS[args.action](args)
    except FeatureFlowError as error:
        _print_error(type(error).__name__, str(error))
        return VALIDATION_FAILURE
    except OSError as error:
        _print_error(type(error).__name__, str(error))
        return VALIDATION_FAILURE
