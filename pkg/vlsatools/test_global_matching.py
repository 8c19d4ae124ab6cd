import math

import numpy as np
import pytest
import torch

from vlsatools.global_matching import (
    ContrastiveConfig,
    GlobalEmbeddings,
    MatchBatch,
    MatchingHead,
    build_match_batch,
    contrastive_loss,
    cosine_similarity,
    draw_negatives,
    global_loss,
    matching_loss,
    pool_global,
    sample_negatives,
    total_loss,
    vtm_baseline_loss,
)
from vlsatools.masked_modeling import LocalLoss
from vlsatools.patch_embed import SequenceLayout
from vlsatools.trainer import build_model, finite_difference_check, make_masks
from vlsatools.util.seeding import philox


@pytest.mark.parametrize("B", [2, 4, 8])
def test_uniform_similarity_gives_log_b(B):
    g = torch.ones(B, 4, dtype=torch.float64)
    assert contrastive_loss(g, g, 0.05).item() == pytest.approx(math.log(B), abs=1e-6)


def test_single_sample_loss_is_zero():
    g = torch.randn(1, 4, dtype=torch.float64)
    assert contrastive_loss(g, g, 0.05).item() == pytest.approx(0.0, abs=1e-12)


def test_orthonormal_pair_closed_form():
    g = torch.eye(2, dtype=torch.float64)
    expected = math.log(1 + math.exp(-1))
    assert expected == pytest.approx(0.3133, abs=1e-4)
    assert contrastive_loss(g, g, 1.0).item() == pytest.approx(expected, abs=1e-12)
    symmetric = contrastive_loss(g, g, 1.0, symmetric=True)
    assert symmetric.item() == pytest.approx(2 * expected)


def test_global_loss_orthonormal_closed_form():
    g = torch.eye(2, dtype=torch.float64)
    globals_ = GlobalEmbeddings(g, g.clone(), g.clone())
    config = ContrastiveConfig(temperature=1.0, matching=False)
    heads = {"av": None, "at": None}  # unused without matching
    loss = global_loss(globals_, heads, config, draw_negatives(2, 0, 0))
    assert loss.item() == pytest.approx(4 * math.log(1 + math.exp(-1)), abs=1e-12)


def test_symmetric_adds_reverse_direction(rng):
    ga = torch.as_tensor(rng.normal(size=(5, 3)))
    gb = torch.as_tensor(rng.normal(size=(5, 3)))
    both = contrastive_loss(ga, gb, 0.1, symmetric=True)
    expected = contrastive_loss(ga, gb, 0.1) + contrastive_loss(gb, ga, 0.1)
    assert both.item() == pytest.approx(expected.item(), rel=1e-12)


def test_scale_invariance(rng):
    ga = torch.as_tensor(rng.normal(size=(6, 4)))
    gb = torch.as_tensor(rng.normal(size=(6, 4)))
    scale = torch.as_tensor(rng.uniform(0.1, 10.0, size=(6, 1)))
    a = contrastive_loss(ga, gb, 0.05).item()
    assert contrastive_loss(ga * scale, gb, 0.05).item() == pytest.approx(a, rel=1e-10)


def test_joint_permutation_invariance(rng):
    ga = torch.as_tensor(rng.normal(size=(6, 4)))
    gb = torch.as_tensor(rng.normal(size=(6, 4)))
    perm = torch.as_tensor(rng.permutation(6))
    a = contrastive_loss(ga, gb, 0.05).item()
    b = contrastive_loss(ga[perm], gb[perm], 0.05).item()
    assert b == pytest.approx(a, rel=1e-10)


def test_zero_norm_rejected():
    g = torch.zeros(2, 3, dtype=torch.float64)
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_similarity(g, torch.ones(2, 3, dtype=torch.float64))


def test_sample_negatives_never_self():
    negatives = sample_negatives(7, philox(0, "test"))
    assert len(negatives) == 7
    assert np.all(negatives != np.arange(7))
    assert sample_negatives(1, philox(0, "test")).size == 0


def test_draw_negatives_deterministic():
    a, b = draw_negatives(5, 3, 10), draw_negatives(5, 3, 10)
    assert all(np.array_equal(a[p], b[p]) for p in ("av", "at", "vt"))


def test_bce_closed_forms():
    half = MatchBatch.from_probabilities([0.5], [1.0])
    assert matching_loss(half).item() == pytest.approx(math.log(2), abs=1e-9)
    sure = MatchBatch.from_probabilities([0.9, 0.1], [1.0, 0.0])
    assert matching_loss(sure).item() == pytest.approx(-2 * math.log(0.9), abs=1e-9)
    assert -2 * math.log(0.9) == pytest.approx(0.2107, abs=1e-4)


def test_bce_uniform_batch():
    labels = torch.tensor([1.0, 1.0, 0.0, 0.0])
    batch = MatchBatch(torch.zeros(4, dtype=torch.float64), labels)
    assert matching_loss(batch).item() == pytest.approx(4 * math.log(2), abs=1e-12)


def test_match_batch_layout():
    torch.manual_seed(0)
    head = MatchingHead(3).double()
    ga = torch.randn(4, 3, dtype=torch.float64)
    gb = torch.randn(4, 3, dtype=torch.float64)
    batch = build_match_batch(ga, gb, head, np.array([1, 0, 3, 2]))
    assert batch.labels.tolist() == [1.0] * 4 + [0.0] * 4
    torch.testing.assert_close(batch.logits[4], head(ga[:1], gb[1:2])[0])


def test_pooling_skips_pad():
    layout = SequenceLayout(n_frames=1, patches_per_frame=2, n_text=3, n_audio=1)
    encoded = torch.arange(6, dtype=torch.float64)[:, None].repeat(1, 2)
    g = pool_global(encoded, layout, torch.tensor([True, True, False]))
    assert g.video.tolist() == [0.5, 0.5]
    assert g.text.tolist() == [2.5, 2.5]
    assert g.audio.tolist() == [5.0, 5.0]


def test_pooling_rejects_all_pad():
    layout = SequenceLayout(n_frames=1, patches_per_frame=1, n_text=2, n_audio=1)
    with pytest.raises(ValueError, match="non-PAD"):
        pool_global(torch.ones(1, 4, 3), layout, torch.zeros(1, 2, dtype=torch.bool))


def _globals(rng, B=4, D=3):
    return GlobalEmbeddings(
        *(torch.as_tensor(rng.normal(size=(B, D))) for _ in range(3))
    )


def test_global_loss_is_sum_of_pairs(rng):
    torch.manual_seed(0)
    heads = {p: MatchingHead(3).double() for p in ("av", "at", "vt")}
    g = _globals(rng)
    negatives = draw_negatives(4, 0, 0)
    config = ContrastiveConfig(temperature=0.1)
    av = contrastive_loss(g.audio, g.video, 0.1, symmetric=True) + matching_loss(
        build_match_batch(g.audio, g.video, heads["av"], negatives["av"])
    )
    at = contrastive_loss(g.audio, g.text, 0.1, symmetric=True) + matching_loss(
        build_match_batch(g.audio, g.text, heads["at"], negatives["at"])
    )
    loss = global_loss(g, heads, config, negatives)
    assert loss.item() == pytest.approx((av + at).item())
    no_matching = ContrastiveConfig(temperature=0.1, matching=False)
    contrastive_only = contrastive_loss(g.audio, g.video, 0.1, True) + contrastive_loss(
        g.audio, g.text, 0.1, True
    )
    assert global_loss(g, heads, no_matching, negatives).item() == pytest.approx(
        contrastive_only.item()
    )
    vtm = vtm_baseline_loss(g, heads, no_matching, negatives)
    expected = contrastive_loss(g.video, g.text, 0.1, True)
    assert vtm.item() == pytest.approx(expected.item())


def test_total_loss():
    local = LocalLoss(torch.tensor(1.0), torch.tensor(0.5), torch.tensor(0.5))
    assert total_loss(local, torch.tensor(0.2), 5.0).item() == pytest.approx(3.0)
    unit = LocalLoss(torch.tensor(1.0), torch.tensor(0.0), torch.tensor(0.0))
    assert total_loss(unit, torch.tensor(0.2), 5.0).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        total_loss(local, torch.tensor(1.0), -1.0)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0.0)


def test_global_path_gradients(tiny_config, tiny_batch):
    config = tiny_config.replace(train={"lpmm_on": False})
    model = build_model(config, seed=1)
    masks = make_masks(model, tiny_batch, step=0)
    negatives = draw_negatives(len(tiny_batch), 0, 0)

    def loss_fn():
        return model.forward_loss(tiny_batch, masks, negatives)["total"]

    params = [
        (n, p) for n, p in model.named_parameters() if not n.startswith("decoder")
    ]
    error, _ = finite_difference_check(loss_fn, params, max_entries=3)
    assert error < 1e-4
