import copy

import numpy as np
import pytest
import torch

from lhpf.generate import generate_scenario
from lhpf.model import LHPFModel, ModelConfig, load_checkpoint, save_checkpoint
from lhpf.training import (
    TrainConfig,
    TrainingDivergedError,
    build_training_samples,
    lr_for_epoch,
    open_loop_ade,
    train_phase1,
    train_phase2,
)


def tiny_model():
    return LHPFModel(ModelConfig.small(hidden_dim=32, layers=1, heads=4,
                                       horizon_frames=20, dropout=0.0))


def tiny_samples(model, kinds=("straight",), seeds=(0,), stride=40):
    scenarios = [generate_scenario(k, s) for k in kinds for s in seeds]
    return build_training_samples(scenarios, model.cfg, stride=stride, horizon_frames=20)


def test_lr_schedule_warmup_then_cosine():
    cfg = TrainConfig(epochs=10, warmup_epochs=3, peak_lr=1e-3)
    lrs = [lr_for_epoch(e, cfg) for e in range(10)]
    np.testing.assert_allclose(lrs[:3], [1e-3 / 3, 2e-3 / 3, 1e-3])
    assert lrs[3] == pytest.approx(1e-3)
    assert all(a >= b for a, b in zip(lrs[3:], lrs[4:]))
    assert lrs[-1] < 0.06 * 1e-3


def test_phase1_reduces_loss():
    model = tiny_model()
    samples = tiny_samples(model)
    cfg = TrainConfig(epochs=12, warmup_epochs=2, peak_lr=2e-3, batch_size=8,
                      use_comfort=False, seed=0)
    history = train_phase1(model, samples, cfg)
    assert history["l_imitation"][-1] < history["l_imitation"][0]
    assert len(history["epoch"]) == 12


def test_training_needs_samples():
    with pytest.raises(ValueError):
        train_phase1(tiny_model(), [], TrainConfig())


def test_divergence_detected():
    model = tiny_model()
    samples = tiny_samples(model)
    samples[0].target[:] = np.nan
    with pytest.raises(TrainingDivergedError, match="non-finite"):
        train_phase1(model, samples, TrainConfig(epochs=1, batch_size=64))


def test_phase2_freezes_backbone_bitwise(tmp_path):
    model = tiny_model()
    samples = tiny_samples(model)
    train_phase1(model, samples, TrainConfig(epochs=2, warmup_epochs=1, use_comfort=False))
    save_checkpoint(model, tmp_path / "phase1.pt", {"phase": 1})

    before = copy.deepcopy(model.backbone.state_dict())
    st_before = copy.deepcopy(model.st_decoder.state_dict())
    train_phase2(model, samples, TrainConfig(epochs=2, warmup_epochs=1))

    for name, p in model.backbone.state_dict().items():
        assert torch.equal(p, before[name]), name
    # and against the saved checkpoint file too
    loaded, _ = load_checkpoint(tmp_path / "phase1.pt")
    for name, p in model.backbone.state_dict().items():
        assert torch.equal(p, loaded.backbone.state_dict()[name]), name
    changed = any(
        not torch.equal(p, st_before[name]) for name, p in model.st_decoder.state_dict().items()
    )
    assert changed


def test_trainable_parameter_enumeration():
    model = tiny_model()
    model.freeze_backbone()
    trainable = {n for n, p in model.named_parameters() if p.requires_grad}
    assert trainable  # non-empty
    for name in trainable:
        assert name.startswith(("fusion.", "st_decoder.", "st_heads.")), name
    frozen = {n for n, p in model.named_parameters() if not p.requires_grad}
    assert all(n.startswith("backbone.") for n in frozen)
    # every non-backbone parameter is in the fine-tune set
    all_non_backbone = {n for n, _ in model.named_parameters() if not n.startswith("backbone.")}
    assert trainable == all_non_backbone
    assert len(list(model.finetune_parameters())) == len(trainable)


def test_phase2_improves_history_path():
    torch.manual_seed(0)
    model = tiny_model()
    samples = tiny_samples(model, seeds=(0, 1), stride=30)
    train_phase1(model, samples, TrainConfig(epochs=25, warmup_epochs=3, peak_lr=2e-3,
                                             batch_size=16, use_comfort=False))
    ade_before = open_loop_ade(model, samples, use_history=True)
    train_phase2(model, samples, TrainConfig(epochs=15, warmup_epochs=2, peak_lr=2e-3,
                                             batch_size=16))
    ade_after = open_loop_ade(model, samples, use_history=True)
    assert ade_after < ade_before


def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model()
    save_checkpoint(model, tmp_path / "m.pt", {"phase": 1, "note": "x"})
    loaded, meta = load_checkpoint(tmp_path / "m.pt")
    assert meta["note"] == "x"
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)
    with pytest.raises(ValueError, match="checkpoint"):
        (tmp_path / "junk.pt").write_bytes(b"PK\x03\x04nonsense")
        load_checkpoint(tmp_path / "junk.pt")
