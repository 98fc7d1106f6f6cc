"""CSV and SVG renditions of training reports."""

from csv import writer
from pathlib import Path
from typing import TextIO

from matplotlib import rc_context
from matplotlib.figure import Figure

from featureflow.train import TrainingReport


__all__ = ["write_curve", "write_summary", "render_svg", "write_report"]


CURVE_FILE = "curve.csv"
SUMMARY_FILE = "summary.csv"
SVG_FILE = "report.svg"
# Fixed element IDs and no timestamp keep the SVG byte-identical across runs.
SVG_PARAMS = {"svg.hashsalt": "featureflow", "svg.fonttype": "none"}


def write_curve(report: TrainingReport, stream: TextIO) -> None:
    """Writes the per-step loss and learning rate."""

    csv = writer(stream, lineterminator="\n")
    csv.writerow(("step", "loss", "learning_rate"))

    for step, (loss, lr) in enumerate(zip(report.losses, report.learning_rates)):
        csv.writerow((step, repr(loss), repr(lr)))


def write_summary(report: TrainingReport, stream: TextIO) -> None:
    """Writes EPE and feature MSE before and after training."""

    csv = writer(stream, lineterminator="\n")
    csv.writerow(("stage", "epe", "aligned_mse", "unaligned_mse"))

    for stage, evaluation in (("initial", report.initial), ("final", report.final)):
        csv.writerow((stage, *(repr(value) for value in evaluation)))


def render_svg(report: TrainingReport, path: Path) -> None:
    """Plots the training curve next to the EPE before and after."""

    with rc_context(SVG_PARAMS):
        figure = Figure(figsize=(9.0, 3.5))
        curve, epe = figure.subplots(1, 2, gridspec_kw={"width_ratios": (3, 1)})
        curve.plot(range(len(report.losses)), report.losses, linewidth=0.8)
        curve.set_xlabel("step")
        curve.set_ylabel("TRL loss")

        if report.losses and min(report.losses) > 0:
            curve.set_yscale("log")

        epe.bar(("initial", "final"), (report.initial_epe, report.final_epe))
        epe.set_ylabel("endpoint error")
        figure.tight_layout()
        figure.savefig(path, format="svg", metadata={"Date": None})


def write_report(report: TrainingReport, directory: Path) -> list[Path]:
    """Writes curve and summary CSVs plus the SVG into a directory."""

    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / CURVE_FILE, directory / SUMMARY_FILE, directory / SVG_FILE]

    with paths[0].open("w", newline="") as file:
        write_curve(report, file)

    with paths[1].open("w", newline="") as file:
        write_summary(report, file)

    render_svg(report, paths[2])
    return paths
