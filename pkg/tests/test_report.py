"""Tests of the training report renditions."""

from io import StringIO

import pytest

from featureflow.report import render_svg, write_curve, write_report, write_summary
from featureflow.train import Evaluation, TrainingReport


@pytest.fixture
def report() -> TrainingReport:
    return TrainingReport(
        [1.0, 0.5, 0.25],
        [0.1, 0.1, 0.01],
        Evaluation(1.5, 0.2, 0.8),
        Evaluation(0.3, 0.05, 0.8),
    )


def test_curve_csv(report):
    stream = StringIO()
    write_curve(report, stream)
    assert stream.getvalue() == (
        "step,loss,learning_rate\n0,1.0,0.1\n1,0.5,0.1\n2,0.25,0.01\n"
    )


def test_summary_csv(report):
    stream = StringIO()
    write_summary(report, stream)
    assert stream.getvalue() == (
        "stage,epe,aligned_mse,unaligned_mse\n"
        "initial,1.5,0.2,0.8\n"
        "final,0.3,0.05,0.8\n"
    )


def test_svg_is_reproducible(report, tmp_path):
    render_svg(report, tmp_path / "a.svg")
    render_svg(report, tmp_path / "b.svg")
    data = (tmp_path / "a.svg").read_bytes()
    assert b"<svg" in data
    assert data == (tmp_path / "b.svg").read_bytes()


def test_svg_without_losses(tmp_path):
    empty = TrainingReport([], [], Evaluation(1.0, 1.0, 1.0), Evaluation(1.0, 1.0, 1.0))
    render_svg(empty, tmp_path / "empty.svg")
    assert (tmp_path / "empty.svg").stat().st_size > 0


def test_write_report(report, tmp_path):
    paths = write_report(report, tmp_path / "out")
    assert [path.name for path in paths] == ["curve.csv", "summary.csv", "report.svg"]
    assert all(path.is_file() for path in paths)
