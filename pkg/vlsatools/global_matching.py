"""
Global embeddings (average pooling per modality), contrastive and binary
matching losses, the global audio matching objective, the combined
objective, and the video-text matching baseline.
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from vlsatools.patch_embed import SequenceLayout
from vlsatools.util.seeding import philox


@dataclass
class GlobalEmbeddings:
    video: torch.Tensor  # B x D
    text: torch.Tensor
    audio: torch.Tensor

    def __getitem__(self, modality: str) -> torch.Tensor:
        return getattr(self, modality)


@dataclass
class ContrastiveConfig:
    temperature: float = 0.05
    matching: bool = True  # include the BCE matching terms

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def pool_global(
    encoded: torch.Tensor, layout: SequenceLayout, text_valid: torch.Tensor
) -> GlobalEmbeddings:
    """
    Mean of the video rows, of the non-PAD text rows and of the audio rows.

    Parameters
    ----------
    encoded: B x L x D (or L x D)
    layout: segment ranges
    text_valid: B x S (or S) non-PAD flags
    """
    if encoded.dim() == 2:
        g = pool_global(encoded[None], layout, text_valid[None])
        return GlobalEmbeddings(g.video[0], g.text[0], g.audio[0])
    seg = layout.segments
    n_valid = text_valid.sum(dim=1)
    if torch.any(n_valid == 0):
        bad = torch.nonzero(n_valid == 0).flatten().tolist()
        raise ValueError(f"samples {bad} have no non-PAD text tokens")
    weights = text_valid.to(encoded.dtype)[..., None]
    text = (encoded[:, slice(*seg["text"])] * weights).sum(dim=1)
    text = text / n_valid[:, None].to(encoded.dtype)
    return GlobalEmbeddings(
        video=encoded[:, slice(*seg["video"])].mean(dim=1),
        text=text,
        audio=encoded[:, slice(*seg["audio"])].mean(dim=1),
    )


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """B_a x B_b cosine similarities; zero-norm rows are rejected."""
    na, nb = a.norm(dim=1), b.norm(dim=1)
    for name, n in (("first", na), ("second", nb)):
        if torch.any(n == 0):
            bad = torch.nonzero(n == 0).flatten().tolist()
            raise ValueError(f"zero-norm rows {bad} in the {name} embedding set")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def contrastive_loss(
    ga: torch.Tensor, gb: torch.Tensor, temperature: float, symmetric: bool = False
):
    """
    Mean over i of -log softmax_j(sim(ga_i, gb_j) / tau) at j = i.
    ``symmetric`` adds the b -> a direction.
    """
    if ga.shape[0] != gb.shape[0]:
        raise ValueError(f"batch sizes differ: {ga.shape[0]} vs {gb.shape[0]}")
    logits = cosine_similarity(ga, gb) / temperature
    target = torch.arange(ga.shape[0])
    loss = F.cross_entropy(logits, target)
    if symmetric:
        loss = loss + F.cross_entropy(logits.T, target)
    return loss


def sample_negatives(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """
    One substitute partner index per sample, uniform over the other batch
    indices (redrawn on collision). Empty for a batch of one.
    """
    if batch_size < 2:
        return np.zeros(0, dtype=np.int64)
    out = np.empty(batch_size, dtype=np.int64)
    for i in range(batch_size):
        j = i
        while j == i:
            j = int(rng.integers(batch_size))
        out[i] = j
    return out


def draw_negatives(
    batch_size: int, seed: int, step: int, pairs=("av", "at", "vt")
) -> dict:
    return {
        p: sample_negatives(batch_size, philox(seed, "negatives", step, p))
        for p in pairs
    }


class MatchingHead(nn.Module):
    """
    FC layer on the concatenated pair -> matching logit (sigmoid gives p).
    """

    def __init__(self, dim: int):
        super().__init__()
        self.fc = nn.Linear(2 * dim, 1)

    def forward(self, ga, gb):
        return self.fc(torch.cat([ga, gb], dim=-1)).squeeze(-1)


@dataclass
class MatchBatch:
    logits: torch.Tensor  # N
    labels: torch.Tensor  # N, in {0, 1}

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)

    @classmethod
    def from_probabilities(cls, probabilities, labels) -> "MatchBatch":
        p = torch.as_tensor(probabilities, dtype=torch.float64)
        return cls(torch.logit(p), torch.as_tensor(labels, dtype=torch.float64))


def build_match_batch(ga, gb, head: MatchingHead, negatives: np.ndarray) -> MatchBatch:
    """
    Positives (ga_i, gb_i) with label 1 and negatives (ga_i, gb_neg[i]) with
    label 0, the partner modality substituted from another batch index.
    """
    pos = head(ga, gb)
    labels = [torch.ones_like(pos)]
    logits = [pos]
    if len(negatives):
        neg = head(ga, gb[torch.as_tensor(negatives)])
        logits.append(neg)
        labels.append(torch.zeros_like(neg))
    return MatchBatch(torch.cat(logits), torch.cat(labels))


def matching_loss(batch: MatchBatch) -> torch.Tensor:
    """Sum of BCE(y, p) over the pairs."""
    labels = batch.labels.to(batch.logits.dtype)
    return F.binary_cross_entropy_with_logits(batch.logits, labels, reduction="sum")


def _alignment(ga, gb, head, config: ContrastiveConfig, negatives):
    loss = contrastive_loss(ga, gb, config.temperature, symmetric=True)
    if config.matching:
        loss = loss + matching_loss(build_match_batch(ga, gb, head, negatives))
    return loss


def global_loss(
    globals_: GlobalEmbeddings, heads, config: ContrastiveConfig, negatives: dict
):
    """
    Audio-video alignment plus audio-text alignment: each is the symmetric
    contrastive loss plus (optionally) the summed BCE matching term.

    Parameters
    ----------
    globals_: pooled embeddings of the batch
    heads: mapping with "av" and "at" MatchingHead modules
    config: temperature and matching switch
    negatives: mapping "av"/"at" -> substitute partner indices
    """
    g = globals_
    l_av = _alignment(g.audio, g.video, heads["av"], config, negatives["av"])
    l_at = _alignment(g.audio, g.text, heads["at"], config, negatives["at"])
    return l_av + l_at


def vtm_baseline_loss(
    globals_: GlobalEmbeddings, heads, config: ContrastiveConfig, negatives: dict
):
    """Video-text contrastive (both directions) plus video-text matching."""
    g = globals_
    return _alignment(g.video, g.text, heads["vt"], config, negatives["vt"])


def total_loss(local, global_, lam: float):
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return local.total + lam * global_
