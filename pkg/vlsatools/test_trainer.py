import numpy as np
import pandas as pd
import pytest
import torch

from vlsatools.checkpoint import Checkpoint
from vlsatools.config import ConfigError, TrainConfig
from vlsatools.trainer import (
    build_model,
    build_optimizer,
    finite_difference_check,
    gradcheck,
    iterate_batches,
    parse_variant,
    pretrain,
    run_ablation,
    train_step,
)


def test_init_deterministic(tiny_config):
    a = build_model(tiny_config, seed=3).state_dict()
    b = build_model(tiny_config, seed=3).state_dict()
    c = build_model(tiny_config, seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_init_statistics(tiny_model):
    for name, p in tiny_model.named_parameters():
        if name.endswith("bias"):
            assert not p.any(), name
        elif "norm" in name:
            assert torch.all(p == 1.0), name
        else:
            assert p.abs().max().item() <= 0.06 + 1e-12, name
    weights = torch.cat(
        [
            p.flatten()
            for n, p in tiny_model.named_parameters()
            if n.endswith("qkv.weight")
        ]
        + [tiny_model.embedder.text_embed.weight.flatten()]
    )
    assert weights.std().item() == pytest.approx(0.02, rel=0.1)


def test_zero_lr_leaves_parameters(tiny_config, tiny_data):
    config = tiny_config.replace(train={"lr": 0.0})
    model = build_model(config)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    optimizer, scheduler = build_optimizer(model, config.train)
    triplets = tiny_data.triplets[:4]
    losses = train_step(model, optimizer, triplets, step=0, scheduler=scheduler)
    assert set(losses) == {"loss_a", "loss_v", "loss_t", "L_global", "total"}
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_adamw_first_step():
    layer = torch.nn.Linear(2, 1).double()
    with torch.no_grad():
        layer.weight.copy_(torch.tensor([[1.0, -2.0]]))
        layer.bias.fill_(0.5)
    optimizer, _ = build_optimizer(layer, TrainConfig(lr=0.1, weight_decay=0.01))
    layer(torch.ones(1, 2, dtype=torch.float64)).sum().backward()
    optimizer.step()
    # decoupled decay on the matrix only, then a unit-magnitude first Adam step
    step = 0.1 / (1 + 1e-8)
    expected = torch.tensor(
        [[1.0 * 0.999 - step, -2.0 * 0.999 - step]], dtype=torch.float64
    )
    torch.testing.assert_close(layer.weight.detach(), expected, rtol=0, atol=1e-9)
    assert layer.bias.item() == pytest.approx(0.5 - step, abs=1e-9)


def test_no_decay_groups(tiny_model):
    optimizer, _ = build_optimizer(tiny_model, TrainConfig())
    decay, no_decay = optimizer.param_groups
    names = {id(p): n for n, p in tiny_model.named_parameters()}
    no_decay_names = {names[id(p)] for p in no_decay["params"]}
    assert "embedder.text_embed.weight" in no_decay_names
    assert "embedder.mask_token" in no_decay_names
    assert all(p.ndim >= 2 for p in decay["params"])
    assert no_decay["weight_decay"] == 0.0


def test_warmup_scales_lr(tiny_model):
    train = TrainConfig(lr=0.1, warmup_steps=4)
    optimizer, scheduler = build_optimizer(tiny_model, train)
    assert optimizer.param_groups[0]["lr"] == pytest.approx(0.025)
    for _ in range(5):
        optimizer.step()
        scheduler.step()
    assert optimizer.param_groups[0]["lr"] == pytest.approx(0.1)


def test_non_finite_loss_named(tiny_config, tiny_data):
    model = build_model(tiny_config)
    with torch.no_grad():
        model.embedder.audio_proj.weight.fill_(float("nan"))
    optimizer, _ = build_optimizer(model, tiny_config.train)
    with pytest.raises(FloatingPointError, match="non-finite loss_a"):
        train_step(model, optimizer, tiny_data.triplets[:4], step=0)


def test_accumulated_step(tiny_config, tiny_data):
    config = tiny_config.replace(train={"accum_steps": 2})
    model = build_model(config)
    optimizer, _ = build_optimizer(model, config.train)
    losses = train_step(model, optimizer, tiny_data.triplets[:4], step=0)
    assert all(np.isfinite(v) for v in losses.values())


@pytest.mark.filterwarnings("error:Converting a tensor with requires_grad")
def test_step_reads_losses_without_warnings(tiny_config, tiny_data):
    model = build_model(tiny_config)
    optimizer, _ = build_optimizer(model, tiny_config.train)
    losses = train_step(model, optimizer, tiny_data.triplets[:4], step=0)
    assert all(isinstance(v, float) for v in losses.values())


def test_iterate_batches():
    batches = iterate_batches(10, 4, seed=0)
    first = [next(batches) for _ in range(3)]
    assert [e for e, _ in first] == [0, 0, 1]
    assert sorted(np.concatenate([idx for _, idx in first[:2]])) != list(range(10))
    assert all(len(idx) == 4 for _, idx in first)
    small = iterate_batches(3, 8, seed=0)
    assert sorted(next(small)[1]) == [0, 1, 2]


def test_linear_layer_gradcheck():
    torch.manual_seed(0)
    layer = torch.nn.Linear(5, 3).double()
    x = torch.randn(4, 5, dtype=torch.float64)

    def loss_fn():
        return (layer(x) * torch.arange(3, dtype=torch.float64)).sum()

    # linear in the parameters, so a wide step has no truncation error
    error, _ = finite_difference_check(
        loss_fn, layer.named_parameters(), h=1e-2, max_entries=15
    )
    assert error < 1e-10


@pytest.mark.parametrize("train", [{}, {"lam": 0.0}, {"lpmm_on": False}])
def test_gradcheck(tiny_config, train):
    assert gradcheck(tiny_config.replace(train=train), seed=0) < 1e-4


def test_pretrain_deterministic(tiny_config, tiny_data):
    config = tiny_config.replace(train={"steps": 3})
    a, b = pretrain(tiny_data, config), pretrain(tiny_data, config)
    assert a.checkpoint_id == b.checkpoint_id
    assert a.step == 3


def test_pretrain_zero_steps(tmp_path, tiny_config, tiny_data):
    config = tiny_config.replace(train={"steps": 0})
    ckpt = pretrain(tiny_data, config, tmp_path / "c.vlck", tmp_path / "log.jsonl")
    assert ckpt.step == 0
    initial = Checkpoint.from_model(build_model(config))
    assert ckpt.checkpoint_id == initial.checkpoint_id
    assert (tmp_path / "c.vlck").exists()
    assert (tmp_path / "log.jsonl").read_text() == ""


def test_pretrain_lowers_loss(tmp_path, tiny_config, tiny_data):
    config = tiny_config.replace(train={"steps": 120, "lr": 1e-3})
    pretrain(tiny_data, config, log_path=tmp_path / "log.jsonl")
    log = pd.read_json(tmp_path / "log.jsonl", lines=True)
    assert list(log.columns) == [
        "step",
        "loss_a",
        "loss_v",
        "loss_t",
        "L_global",
        "total",
        "wall_time",
    ]
    assert len(log) == 120
    assert log["total"].tail(10).mean() < log["total"].head(10).mean()


def test_gam_off_logs_zero_global(tmp_path, tiny_config, tiny_data):
    config = tiny_config.replace(train={"steps": 2, "gam_on": False})
    pretrain(tiny_data, config, log_path=tmp_path / "log.jsonl")
    log = pd.read_json(tmp_path / "log.jsonl", lines=True)
    assert (log["L_global"] == 0.0).all()


def test_parse_variant():
    assert parse_variant("full") == {}
    assert parse_variant("vtm") == {"gam_on": False, "vtm_on": True}
    assert parse_variant("encoder:vt") == {"joint_encoder_modalities": "vt"}
    assert parse_variant("decoder:none") == {"shared_decoder_modalities": "none"}
    with pytest.raises(ValueError, match="unknown ablation variant"):
        parse_variant("encoder:xyz")


def test_variants_build(tiny_config):
    for variant in ("none", "lpmm", "gam", "vtm", "encoder:none", "decoder:at"):
        build_model(tiny_config.replace(train=parse_variant(variant)))
    with pytest.raises(ConfigError):
        tiny_config.replace(train={"vtm_on": True})


def test_run_ablation(tiny_config, tiny_data):
    config = tiny_config.replace(train={"steps": 2})
    table, reports = run_ablation(tiny_data, tiny_data, config, ["none", "full"])
    assert list(table["variant"]) == ["none", "none", "full", "full"]
    assert list(table["direction"]) == ["t2v", "t2a", "t2v", "t2a"]
    expected = {"R@1", "R@5", "R@10", "R@50", "vt_pos_sim", "vt_neg_sim"}
    assert expected <= set(table.columns)
    assert reports[("full", "t2a")].ks == [1, 5, 10, 50]
    with pytest.raises(ValueError):
        run_ablation(tiny_data, tiny_data, config, [])
