"""
Tri-modal masking, the parameter-shared decoder and the local masked losses.
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from vlsatools.config import (
    DataConfig,
    DecoderConfig,
    MaskConfig,
    PatchConfig,
    modality_set,
)
from vlsatools.patch_embed import (
    SEGMENT_ORDER,
    MaskBatch,
    SequenceLayout,
    normalize_patches,
    patchify_audio,
    patchify_video,
)
from vlsatools.triplet_data import PAD
from vlsatools.unified_encoder import vit_block
from vlsatools.util.seeding import philox


def n_masked(ratio: float, n: int) -> int:
    return int(round(ratio * n))


@dataclass(frozen=True)
class MaskPlan:
    """
    Masked positions of one sample, as indices into each modality segment.
    Video indices are global over the V*I video rows, drawn per frame.
    """

    sample_id: str
    text: np.ndarray
    video: np.ndarray
    audio: np.ndarray

    def to_masks(self, layout: SequenceLayout) -> MaskBatch:
        """1 x segment-length boolean flags; rejects out-of-range indices."""
        flags = {}
        for modality in SEGMENT_ORDER:
            idx = np.asarray(getattr(self, modality), dtype=np.int64)
            size = layout.size(modality)
            if idx.size and (idx.min() < 0 or idx.max() >= size):
                raise ValueError(
                    f"{self.sample_id}: {modality} mask index outside [0, {size})"
                )
            m = torch.zeros(1, size, dtype=torch.bool)
            m[0, torch.from_numpy(np.ascontiguousarray(idx))] = True
            flags[modality] = m
        return MaskBatch(**flags)


def make_mask_plan(
    tokens,
    data: DataConfig,
    patch: PatchConfig,
    seed: int,
    sample_id,
    step: int = 0,
    ratios: MaskConfig = None,
) -> MaskPlan:
    """
    Uniform sampling without replacement per modality (per frame for video).
    Text masking only draws from non-PAD positions.

    Parameters
    ----------
    tokens: the sample's token ids (length S)
    data, patch: sizes of the sequence
    seed: run seed
    sample_id: sample identifier, part of the random key
    step: training step, part of the random key (fresh plans every step)
    ratios: masking ratios (15% text, 75% video per frame, 75% audio)

    Returns
    -------
    _: MaskPlan with sorted indices
    """
    ratios = ratios or MaskConfig()
    rng = philox(seed, "mask", step, sample_id)
    valid = np.flatnonzero(np.asarray(tokens) != PAD)
    text = rng.choice(valid, n_masked(ratios.text, len(valid)), replace=False)
    per_frame = patch.patches_per_frame(data)
    video = [
        f * per_frame
        + rng.choice(per_frame, n_masked(ratios.video, per_frame), replace=False)
        for f in range(data.n_frames)
    ]
    n_audio = patch.audio_patches(data)
    audio = rng.choice(n_audio, n_masked(ratios.audio, n_audio), replace=False)
    return MaskPlan(
        sample_id=str(sample_id),
        text=np.sort(text),
        video=np.sort(np.concatenate(video)),
        audio=np.sort(audio),
    )


def plans_to_masks(plans: list, layout: SequenceLayout) -> MaskBatch:
    return MaskBatch.stack([p.to_masks(layout) for p in plans])


class DecoderTrunk(nn.Module):
    def __init__(self, in_dim: int, config: DecoderConfig):
        super().__init__()
        self.embed = nn.Linear(in_dim, config.dim)
        self.blocks = nn.ModuleList(
            [vit_block(config.dim, config.n_heads) for _ in range(config.depth)]
        )
        self.norm = nn.LayerNorm(config.dim, eps=1e-6)

    def forward(self, x):
        x = self.embed(x)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


@dataclass
class Predictions:
    audio: torch.Tensor  # |M_a| x P_a^2
    video: torch.Tensor  # |M_v| x 3 P_v^2
    text: torch.Tensor  # |M_t| x C logits


class SharedDecoder(nn.Module):
    """
    Decoder trunks plus three modality heads. Modalities listed in ``shared``
    decode through one trunk instance; the rest get private trunks.
    """

    def __init__(
        self,
        in_dim: int,
        config: DecoderConfig,
        data: DataConfig,
        patch: PatchConfig,
        shared: str = "avt",
    ):
        super().__init__()
        members = modality_set(shared)
        self.trunk_keys = {m: ("shared" if m in members else m) for m in SEGMENT_ORDER}
        self.trunks = nn.ModuleDict(
            {
                k: DecoderTrunk(in_dim, config)
                for k in dict.fromkeys(self.trunk_keys.values())
            }
        )
        self.heads = nn.ModuleDict(
            {
                "audio": nn.Linear(config.dim, patch.audio_patch**2),
                "video": nn.Linear(config.dim, 3 * patch.video_patch**2),
                "text": nn.Linear(config.dim, data.vocab_size),
            }
        )

    def trunk_for(self, modality: str) -> DecoderTrunk:
        return self.trunks[self.trunk_keys[modality]]

    def forward(
        self, encoded: torch.Tensor, masks: MaskBatch, layout: SequenceLayout
    ) -> Predictions:
        trunk_out = {k: trunk(encoded) for k, trunk in self.trunks.items()}
        preds = {}
        for modality in SEGMENT_ORDER:
            start, end = layout.segments[modality]
            rows = trunk_out[self.trunk_keys[modality]][:, start:end]
            preds[modality] = self.heads[modality](rows[masks[modality]])
        return Predictions(**preds)


def decode_masked(
    encoded: torch.Tensor,
    masks: MaskBatch,
    decoder: SharedDecoder,
    layout: SequenceLayout,
):
    """
    Run the decoder over the full encoded sequence (B x L x D) and read the
    heads at masked positions.
    """
    if encoded.dim() != 3 or encoded.shape[1] != layout.length:
        raise ValueError(
            f"encoded sequence of shape {tuple(encoded.shape)} does not match "
            f"layout length {layout.length}"
        )
    masks.check(layout, batch_size=encoded.shape[0])
    return decoder(encoded, masks, layout)


@dataclass
class LocalLoss:
    loss_a: torch.Tensor
    loss_v: torch.Tensor
    loss_t: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.loss_a + self.loss_v + self.loss_t


def local_targets(batch, patch: PatchConfig) -> dict:
    """
    Reconstruction targets for every position: raw audio patches,
    per-patch normalized video patches, token ids.
    """
    return {
        "audio": patchify_audio(batch.spectrogram, patch.audio_patch),
        "video": normalize_patches(patchify_video(batch.video, patch.video_patch)),
        "text": batch.tokens,
    }


def _mse(pred, target):
    if target.numel() == 0:
        return pred.sum() * 0.0
    return F.mse_loss(pred, target.to(pred.dtype))


def local_loss(
    predictions: Predictions, batch, masks: MaskBatch, patch: PatchConfig
) -> LocalLoss:
    """
    Mean squared error over masked audio/video elements and mean
    cross-entropy over masked tokens; an empty mask contributes 0.
    """
    targets = local_targets(batch, patch)
    loss_a = _mse(predictions.audio, targets["audio"][masks.audio])
    loss_v = _mse(predictions.video, targets["video"][masks.video])
    true_ids = targets["text"][masks.text]
    if true_ids.numel() == 0:
        loss_t = predictions.text.sum() * 0.0
    else:
        loss_t = F.cross_entropy(predictions.text, true_ids)
    return LocalLoss(loss_a, loss_v, loss_t)
