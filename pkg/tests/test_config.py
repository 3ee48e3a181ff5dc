import json

import pytest

from dualgrain.config import (
    ABLATION_LABELS,
    RunConfig,
    apply_ablation,
    finetuning_config,
    preset_config,
)
from dualgrain.errors import ConfigError


def test_paper_preset_defaults():
    cfg = preset_config("paper")
    assert cfg.optimizer.learning_rate == 0.01
    assert cfg.optimizer.weight_decay == 1e-5
    assert cfg.batch_size == 512
    assert cfg.epochs == 500
    assert cfg.objective.tau == 0.07
    assert cfg.objective.lambda_ca == 0.5
    assert cfg.objective.mu_mcls == 0.6
    assert cfg.memory.capacity == 100
    assert cfg.encoder_widths == [64, 128, 256, 512]
    assert cfg.dataset.normal_count == 500
    assert cfg.dataset.fault_count == 48
    assert cfg.dataset.test_per_class == 800
    assert cfg.dataset.split_sizes == [2, 2, 2, 2, 2]


def test_desk_preset_shrinks():
    cfg = preset_config("desk")
    assert cfg.epochs == 60
    assert cfg.batch_size == 64
    assert cfg.optimizer.learning_rate == 0.003
    assert cfg.encoder_widths == [8, 16, 32, 64]
    assert cfg.dataset.test_per_class == 100
    assert cfg.eval_every == 5  # 12 checkpoints over 60 epochs


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset_config("gpu-cluster")


def test_json_round_trip_is_lossless():
    cfg = preset_config("desk")
    cfg.seed = 123
    cfg.memory.strategy = "mixed"
    back = RunConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict()


def test_partial_override_merges_into_preset():
    cfg = RunConfig.from_dict({"preset": "desk", "seed": 9, "memory": {"capacity": 40}})
    assert cfg.seed == 9
    assert cfg.memory.capacity == 40
    assert cfg.memory.strategy == "baep"
    assert cfg.epochs == 60


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"preset": "desk", "bogus": 1})


def test_ablation_toggles_and_labels():
    base = preset_config("desk")
    moia = apply_ablation(base, component="moia")
    assert not moia.ablation.use_moia and moia.method == ABLATION_LABELS["moia"]
    msca = apply_ablation(base, component="msca")
    assert not msca.ablation.use_msca and msca.ablation.use_ca_branch
    ca = apply_ablation(base, component="ca_branch")
    assert not ca.ablation.use_ca_branch and not ca.ablation.use_msca and not ca.ablation.use_knowledge_transfer
    kt = apply_ablation(base, component="knowledge_transfer")
    assert not kt.ablation.use_knowledge_transfer and kt.ablation.use_msca
    replay = apply_ablation(base, replay="random")
    assert replay.memory.strategy == "random" and replay.method == "replay:random"
    assert base.ablation.use_moia  # original untouched


def test_finetuning_config():
    ft = finetuning_config(preset_config("desk"))
    assert ft.memory.capacity == 0
    assert not ft.ablation.use_distillation
    assert ft.method == "finetuning"


def test_encoder_and_attention_config_derivation():
    cfg = preset_config("desk")
    enc = cfg.encoder_config()
    assert enc.widths == (8, 16, 32, 64)
    assert enc.resolved_moia_stages() == (False, False, True, True)
    enc_plain = cfg.encoder_config(with_moia=False)
    assert enc_plain.resolved_moia_stages() == (False, False, False, False)
    att = cfg.attention_config()
    assert att.d_model == 64 and att.n_heads == 4
