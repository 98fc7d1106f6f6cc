"""Tests of self-supervised training and its evaluation."""

import numpy as np
import pytest

from featureflow.config import CONFIG
from featureflow.exceptions import (
    FormatError,
    InvalidConfig,
    ShapeMismatch,
    TrainingDiverged,
)
from featureflow.iff import IffConfig, build
from featureflow.synth import SynthSpec, generate_synthetic
from featureflow.train import (
    Evaluation,
    TrainingConfig,
    TrainingReport,
    _sample_pair,
    endpoint_error,
    train_iff,
)
from featureflow.trl import TrlConfig, trl_forward


SHIFT = SynthSpec(
    channels=8,
    height=16,
    width=16,
    num_frames=12,
    pattern="random-smooth",
    motion="constant-shift",
    dx=2.0,
    dy=0.0,
    noise_sigma=0.01,
    seed=0,
)


def _constant(dx, dy, size=6):
    return np.stack((np.full((size, size), dx), np.full((size, size), dy)))


def test_endpoint_error():
    assert endpoint_error(_constant(0.0, 0.0), _constant(3.0, 4.0)) == 5.0
    assert endpoint_error(_constant(1.0, 1.0), _constant(1.0, 1.0)) == 0.0


def test_endpoint_error_ignores_border():
    pred = _constant(0.0, 0.0)
    pred[:, 0] = 10.0
    assert endpoint_error(pred, _constant(0.0, 0.0), border=1) == 0.0
    assert endpoint_error(pred, _constant(0.0, 0.0)) > 0.0

    with pytest.raises(InvalidConfig):
        endpoint_error(pred, pred, border=3)

    with pytest.raises(ShapeMismatch):
        endpoint_error(pred, pred[:, :5])


def test_learning_rate_schedule():
    cfg = TrainingConfig(steps=10, lr=0.1, lr_drop=0.6)
    assert [cfg.learning_rate(step) for step in (0, 5)] == [0.1, 0.1]
    assert cfg.learning_rate(6) == pytest.approx(0.01)
    assert cfg.learning_rate(9) == pytest.approx(0.01)


@pytest.mark.parametrize("bidirectional", [True, False])
def test_sampled_neighbours_lie_within_radius(bidirectional):
    rng = np.random.default_rng(0)
    cfg = TrainingConfig(radius=2, neighbors=3, bidirectional=bidirectional)

    for _ in range(200):
        current, neighbors = _sample_pair(rng, 8, cfg)
        assert len(neighbors) == 3

        for neighbor in neighbors:
            assert 0 <= neighbor < 8
            assert 0 < abs(neighbor - current) <= 2

            if not bidirectional:
                assert neighbor < current


@pytest.mark.parametrize(
    "cfg",
    [
        TrainingConfig(steps=-1),
        TrainingConfig(lr=-0.1),
        TrainingConfig(lr_drop=1.5),
        TrainingConfig(radius=0),
        TrainingConfig(neighbors=0),
    ],
)
def test_invalid_config(cfg):
    with pytest.raises(InvalidConfig):
        cfg.validate()


def test_config_section():
    CONFIG.read_dict({"train": {"steps": "50", "bidirectional": "no"}})
    cfg = TrainingConfig.from_config()
    assert cfg.steps == 50
    assert not cfg.bidirectional
    assert cfg.lr == 0.1


def test_zero_steps_leave_module_untouched():
    module = build(IffConfig.toy(), seed=0)
    before = {name: value.copy() for name, value in module.state().items()}
    report = train_iff(module, SHIFT._replace(num_frames=3), TrainingConfig(steps=0))
    assert report.losses == []
    assert report.initial == report.final

    for name, value in module.state().items():
        assert np.array_equal(value, before[name])


def test_channel_mismatch():
    module = build(IffConfig.toy(), seed=0)

    with pytest.raises(ShapeMismatch):
        train_iff(module, SHIFT._replace(channels=4), TrainingConfig(steps=1))


def test_non_finite_loss_stops_training(monkeypatch):
    monkeypatch.setattr(
        "featureflow.train.trl_forward", lambda *args, **kwargs: float("nan")
    )

    with pytest.raises(TrainingDiverged) as error:
        train_iff(
            build(IffConfig.toy(), seed=0),
            SHIFT._replace(num_frames=3),
            TrainingConfig(steps=5),
        )

    assert error.value.step == 0


def test_training_is_deterministic():
    spec = SHIFT._replace(num_frames=4)
    cfg = TrainingConfig(steps=5, radius=1)
    first = build(IffConfig.toy(), seed=0)
    second = build(IffConfig.toy(), seed=0)
    assert train_iff(first, spec, cfg) == train_iff(second, spec, cfg)

    for name, value in first.state().items():
        assert np.array_equal(value, second.state()[name])


def test_learns_constant_shift():
    module = build(IffConfig.toy("advanced"), seed=0)
    cfg = TrainingConfig(
        steps=2000, lr=0.1, radius=1, neighbors=2, bidirectional=False, log_every=0
    )
    report = train_iff(module, SHIFT, cfg)
    assert all(np.isfinite(report.losses))
    assert np.mean(report.losses[-100:]) < np.mean(report.losses[:100])
    assert report.final_epe < 0.5
    assert report.final_epe < report.initial_epe
    assert report.final.aligned_mse <= 0.25 * report.final.unaligned_mse


def test_report_json_round_trip(tmp_path):
    report = TrainingReport(
        [0.5, 0.25], [0.1, 0.01], Evaluation(2.0, 1.0, 1.5), Evaluation(0.1, 0.2, 1.5)
    )
    report.save(tmp_path / "report.json")
    assert TrainingReport.load(tmp_path / "report.json") == report


@pytest.mark.parametrize("text", ["[]", '{"losses": []}', "no json"])
def test_malformed_report(text):
    with pytest.raises(FormatError):
        TrainingReport.from_json(text)


def test_zero_motion_stays_within_the_noise_floor():
    sigma = 0.02
    spec = SHIFT._replace(dx=0.0, num_frames=6, noise_sigma=sigma)
    frames, gt_flows = generate_synthetic(spec)
    cfg = TrlConfig()

    for current, neighbor, gt in zip(frames[1:], frames, gt_flows):
        assert not gt.any()
        assert trl_forward(current, neighbor, gt, cfg) <= cfg.trade_off * 2 * sigma

    report = train_iff(build(IffConfig.toy(), seed=0), spec, TrainingConfig(steps=300))
    assert np.isfinite(report.losses).all()
    assert report.final.epe <= report.initial.epe + sigma
