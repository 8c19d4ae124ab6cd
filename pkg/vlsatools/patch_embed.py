"""
Patchify the three modalities and project them into the shared D-dim token
space with position and modality-type embeddings.

Sequence layout is video (frame-major, raster within a frame), then text,
then audio (raster over time x frequency patches).
"""
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from vlsatools.config import DataConfig, PatchConfig
from vlsatools.triplet_data import PAD, collate_triplets

SEGMENT_ORDER = ("video", "text", "audio")
TYPE_IDS = {"video": 0, "text": 1, "audio": 2}


def patchify_video(video, patch: int) -> torch.Tensor:
    """
    (..., V, 3, H, W) -> (..., V*I, 3*P*P), I = (H/P)(W/P).
    Rows are frame-major then raster order; each row is channel-major.
    """
    video = torch.as_tensor(video)
    *lead, V, C, H, W = video.shape
    if H % patch or W % patch:
        raise ValueError(f"frames of {H}x{W} are not divisible by patch size {patch}")
    h, w = H // patch, W // patch
    x = video.reshape(*lead, V, C, h, patch, w, patch)
    x = torch.einsum("...vchpwq->...vhwcpq", x)
    return x.reshape(*lead, V * h * w, C * patch * patch)


def unpatchify_video(patches, n_frames: int, height: int, width: int, patch: int):
    """Inverse of ``patchify_video``."""
    patches = torch.as_tensor(patches)
    *lead, _, _ = patches.shape
    h, w = height // patch, width // patch
    x = patches.reshape(*lead, n_frames, h, w, 3, patch, patch)
    x = torch.einsum("...vhwcpq->...vchpwq", x)
    return x.reshape(*lead, n_frames, 3, height, width)


def patchify_audio(spec, patch: int) -> torch.Tensor:
    """
    (..., T, F) -> (..., A, P*P), A = (T/P)(F/P), raster over (time, freq).
    """
    spec = torch.as_tensor(spec)
    *lead, T, F = spec.shape
    if T % patch or F % patch:
        raise ValueError(
            f"spectrogram of {T}x{F} is not divisible by patch size {patch}"
        )
    h, w = T // patch, F // patch
    x = spec.reshape(*lead, h, patch, w, patch)
    x = torch.einsum("...hpwq->...hwpq", x)
    return x.reshape(*lead, h * w, patch * patch)


def unpatchify_audio(patches, n_time: int, n_freq: int, patch: int):
    """Inverse of ``patchify_audio``."""
    patches = torch.as_tensor(patches)
    *lead, _, _ = patches.shape
    h, w = n_time // patch, n_freq // patch
    x = patches.reshape(*lead, h, w, patch, patch)
    x = torch.einsum("...hwpq->...hpwq", x)
    return x.reshape(*lead, n_time, n_freq)


def normalize_patches(patches: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Zero mean, unit (population) variance within each patch row."""
    mean = patches.mean(dim=-1, keepdim=True)
    var = patches.var(dim=-1, unbiased=False, keepdim=True)
    return (patches - mean) / (var + eps) ** 0.5


@dataclass(frozen=True)
class SequenceLayout:
    """
    Segment sizes of the concatenated sequence, L = V*I + S + A.
    """

    n_frames: int
    patches_per_frame: int  # I
    n_text: int  # S
    n_audio: int  # A

    @classmethod
    def from_configs(cls, data: DataConfig, patch: PatchConfig) -> "SequenceLayout":
        patch.check(data)
        return cls(
            n_frames=data.n_frames,
            patches_per_frame=patch.patches_per_frame(data),
            n_text=data.max_tokens,
            n_audio=patch.audio_patches(data),
        )

    @property
    def n_video(self) -> int:
        return self.n_frames * self.patches_per_frame

    @property
    def length(self) -> int:
        return self.n_video + self.n_text + self.n_audio

    @property
    def segments(self) -> dict:
        """modality -> (start, end), contiguous and ordered video, text, audio"""
        sizes = {"video": self.n_video, "text": self.n_text, "audio": self.n_audio}
        out, start = {}, 0
        for name in SEGMENT_ORDER:
            out[name] = (start, start + sizes[name])
            start += sizes[name]
        return out

    def size(self, modality: str) -> int:
        start, end = self.segments[modality]
        return end - start


@dataclass
class MaskBatch:
    """
    Boolean masked-position flags per modality, True = masked.
    video: B x V*I, text: B x S, audio: B x A
    """

    video: torch.Tensor
    text: torch.Tensor
    audio: torch.Tensor

    def __getitem__(self, modality: str) -> torch.Tensor:
        return getattr(self, modality)

    def check(self, layout: SequenceLayout, batch_size: Optional[int] = None):
        for modality in SEGMENT_ORDER:
            m = self[modality]
            if m.dim() != 2 or m.shape[1] != layout.size(modality):
                raise ValueError(
                    f"{modality} mask of shape {tuple(m.shape)} does not match "
                    f"segment length {layout.size(modality)}"
                )
            if batch_size is not None and m.shape[0] != batch_size:
                raise ValueError(
                    f"{modality} mask covers {m.shape[0]} samples, "
                    f"batch has {batch_size}"
                )

    @classmethod
    def stack(cls, masks: list) -> "MaskBatch":
        modalities = ("video", "text", "audio")
        return cls(*(torch.cat([m[k] for m in masks]) for k in modalities))


@dataclass
class PatchSequence:
    """
    Embedded sequence (B x L x D, or L x D for a single triplet) with its
    segment ranges and the non-PAD text flags (B x S, or S).
    """

    embeddings: torch.Tensor
    layout: SequenceLayout
    text_valid: torch.Tensor

    @property
    def segments(self) -> dict:
        return self.layout.segments

    @property
    def dim(self) -> int:
        return self.embeddings.shape[-1]


class TriModalEmbedder(nn.Module):
    """
    Linear patch projections, text lookup table, learned position tables,
    modality-type vectors and one MASK vector per modality.
    """

    def __init__(self, data: DataConfig, patch: PatchConfig, dim: int):
        super().__init__()
        self.layout = SequenceLayout.from_configs(data, patch)
        self.video_patch = patch.video_patch
        self.audio_patch = patch.audio_patch
        self.video_proj = nn.Linear(3 * patch.video_patch**2, dim)
        self.audio_proj = nn.Linear(patch.audio_patch**2, dim)
        self.text_embed = nn.Embedding(data.vocab_size, dim)
        self.frame_pos = nn.Parameter(torch.zeros(self.layout.n_frames, dim))
        self.video_patch_pos = nn.Parameter(
            torch.zeros(self.layout.patches_per_frame, dim)
        )
        self.text_pos = nn.Parameter(torch.zeros(self.layout.n_text, dim))
        self.audio_pos = nn.Parameter(torch.zeros(self.layout.n_audio, dim))
        self.type_embed = nn.Parameter(torch.zeros(len(SEGMENT_ORDER), dim))
        self.mask_token = nn.Parameter(torch.zeros(len(SEGMENT_ORDER), dim))

    def no_weight_decay(self) -> set:
        return {
            "text_embed.weight",
            "frame_pos",
            "video_patch_pos",
            "text_pos",
            "audio_pos",
            "type_embed",
            "mask_token",
        }

    def video_positions(self) -> torch.Tensor:
        # frame index + within-frame index
        pos = self.frame_pos[:, None, :] + self.video_patch_pos[None, :, :]
        return pos.reshape(self.layout.n_video, -1)

    def _finish(self, content, modality, mask, zero):
        if zero:
            content = torch.zeros_like(content)
        if mask is not None:
            mask_vector = self.mask_token[TYPE_IDS[modality]]
            content = torch.where(mask[..., None], mask_vector, content)
        return content + self.type_embed[TYPE_IDS[modality]]

    def forward(
        self, video, tokens, spectrogram, masks: MaskBatch = None, zero_modalities=()
    ):
        """
        Parameters
        ----------
        video: B x V x 3 x H x W
        tokens: B x S (long)
        spectrogram: B x T x F
        masks: positions to replace by the modality MASK vector
        zero_modalities: modalities whose content embeddings are zeroed

        Returns
        -------
        (PatchSequence): B x L x D
        """
        if masks is not None:
            masks.check(self.layout, batch_size=tokens.shape[0])
        get = (lambda m: masks[m]) if masks is not None else (lambda m: None)
        text_valid = tokens != PAD
        x_v = self.video_proj(patchify_video(video, self.video_patch))
        x_t = self.text_embed(tokens) * text_valid[..., None].to(x_v.dtype)
        x_a = self.audio_proj(patchify_audio(spectrogram, self.audio_patch))
        x_v = self._finish(x_v, "video", get("video"), "video" in zero_modalities)
        x_t = self._finish(x_t, "text", get("text"), "text" in zero_modalities)
        x_a = self._finish(x_a, "audio", get("audio"), "audio" in zero_modalities)
        x = torch.cat(
            [x_v + self.video_positions(), x_t + self.text_pos, x_a + self.audio_pos],
            dim=1,
        )
        return PatchSequence(x, self.layout, text_valid)


def embed_triplet(triplet, embedder: TriModalEmbedder, mask_plan=None) -> PatchSequence:
    """
    Embed one triplet; returns an L x D sequence.
    """
    dtype = embedder.video_proj.weight.dtype
    batch = collate_triplets([triplet], dtype=dtype)
    masks = mask_plan.to_masks(embedder.layout) if mask_plan is not None else None
    seq = embedder(batch.video, batch.tokens, batch.spectrogram, masks)
    return PatchSequence(seq.embeddings[0], seq.layout, seq.text_valid[0])
