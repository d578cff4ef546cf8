import numpy as np
import pytest
import torch

from lhpf.ablation import (
    AblationConfig,
    ConsistencyUndefinedError,
    consistency_metric,
    sweep,
    write_sweep_csv,
)
from lhpf.decoder import PlanResult
from lhpf.generate import generate_scenario
from lhpf.model import LHPFModel, ModelConfig, save_checkpoint
from lhpf.planners import ExpertPlanner
from lhpf.simulation import EpisodeTrace, StepRecord, run_episode
from lhpf.scenario import AgentState
from lhpf.training import TrainConfig, build_training_samples, train_phase1


def _plan_from_world(points):
    traj = np.zeros((len(points), 6))
    traj[:, 0:2] = points
    traj[:, 2] = 1.0
    return PlanResult(trajectories=traj[None, None], scores=np.zeros((1, 1)),
                      free_trajectory=traj, selected_index=(0, 0), selected=traj)


def _trace_from_plans(world_plans):
    """Plans given directly in the world frame (identity plan origin)."""
    records = []
    for i, pts in enumerate(world_plans):
        state = AgentState(np.zeros(2), 0.0, np.zeros(2), (4.0, 2.0))
        records.append(StepRecord(i, state, [], _plan_from_world(pts),
                                  (np.zeros(2), 0.0)))
    return EpisodeTrace(records, (4.0, 2.0), 0)


def test_consistency_zero_for_replayed_fixed_trajectory():
    base = np.stack([np.arange(10.0), np.zeros(10)], axis=1)
    plans = [base[i : i + 5] for i in range(4)]  # same world line, sliding window
    trace = _trace_from_plans(plans)
    assert consistency_metric(trace) == pytest.approx(0.0, abs=1e-12)


def test_consistency_constant_lateral_offset():
    base = np.stack([np.arange(10.0), np.zeros(10)], axis=1)
    plans = []
    for i in range(4):
        p = base[i : i + 5].copy()
        p[:, 1] += 0.5 * i
        plans.append(p)
    trace = _trace_from_plans(plans)
    assert consistency_metric(trace) == pytest.approx(0.5, abs=1e-12)


def test_consistency_random_walk_matches_expectation(rng):
    sigma = 0.4
    n = 4000
    base = np.stack([np.arange(float(n + 12)), np.zeros(n + 12)], axis=1)
    offsets = rng.normal(0.0, sigma, size=n)
    plans = []
    for i in range(n):
        p = base[i : i + 10].copy()  # plans slide forward one frame per step
        p[:, 1] += offsets[i]
        plans.append(p)
    trace = _trace_from_plans(plans)
    got = consistency_metric(trace)
    expected = 2.0 * sigma / np.sqrt(np.pi)  # E|x-y| for iid normals
    assert got == pytest.approx(expected, rel=0.1)


def test_consistency_requires_two_plans():
    trace = _trace_from_plans([np.zeros((5, 2))])
    with pytest.raises(ConsistencyUndefinedError):
        consistency_metric(trace)


def test_consistency_on_expert_episode_is_tiny():
    s = generate_scenario("straight", 0)
    report = run_episode(s, ExpertPlanner(), mode="nonreactive")
    assert consistency_metric(report.trace) < 1e-9


@pytest.fixture(scope="module")
def tiny_backbone(tmp_path_factory):
    torch.manual_seed(0)
    cfg = ModelConfig.small(hidden_dim=32, layers=1, heads=4, horizon_frames=20, dropout=0.0)
    model = LHPFModel(cfg)
    scenarios = [generate_scenario("straight", i) for i in range(2)]
    samples = build_training_samples(scenarios, cfg, stride=40, horizon_frames=20)
    train_phase1(model, samples, TrainConfig(epochs=10, warmup_epochs=2, peak_lr=2e-3,
                                             batch_size=8, use_comfort=False))
    path = tmp_path_factory.mktemp("ckpt") / "backbone.pt"
    save_checkpoint(model, path, {"phase": 1})
    return path, samples, scenarios


def test_sweep_rows_and_failure_continuation(tiny_backbone, tmp_path):
    path, samples, scenarios = tiny_backbone
    base = AblationConfig(
        backbone_path=path,
        train_cfg=TrainConfig(epochs=2, warmup_epochs=1, batch_size=8),
        episode_steps=20,
    )
    eval_scenarios = [generate_scenario("straight", 10)]
    out = tmp_path / "sweep.csv"
    rows = sweep("epochs", [1, 2], base, samples, eval_scenarios, out_csv=out)
    assert [r.value for r in rows] == [1, 2]
    assert not any(r.failed for r in rows)
    text = out.read_text().splitlines()
    assert text[0] == "axis,value,composite_score,comfort,progress,consistency,failed"
    assert len(text) == 3

    rows = sweep("fusion", ["sum", "bogus"], base, samples, eval_scenarios)
    assert rows[0].failed is False
    assert rows[1].failed is True  # bad value recorded, sweep continued


def test_sweep_rejects_bad_axis(tiny_backbone):
    path, samples, _ = tiny_backbone
    base = AblationConfig(backbone_path=path)
    with pytest.raises(ValueError, match="unknown sweep axis"):
        sweep("coffee", [1], base, samples, [])
    with pytest.raises(ValueError, match="at least one value"):
        sweep("epochs", [], base, samples, [])


def test_interval_sweep_value_plumbs_into_pool(tiny_backbone, tmp_path):
    path, samples, scenarios = tiny_backbone
    base = AblationConfig(
        backbone_path=path,
        train_cfg=TrainConfig(epochs=1, warmup_epochs=1, batch_size=8),
        episode_steps=25,
    )
    rows = sweep("interval", [10, 20], base, samples, [generate_scenario("straight", 11)])
    assert all(not r.failed for r in rows)
    assert all(np.isfinite(r.composite_score) for r in rows)


def test_write_sweep_csv_roundtrip(tmp_path):
    from lhpf.ablation import SweepRow

    rows = [SweepRow("interval", 10, 95.5, 1.0, 0.97, 0.031)]
    out = tmp_path / "s.csv"
    write_sweep_csv(rows, out)
    lines = out.read_text().splitlines()
    assert lines[1].startswith("interval,10,95.5,")
