"""
Full pre-training model: embedder -> joint encoder -> (decoder | pooling).
"""
import torch
import torch.nn as nn

from vlsatools.config import RunConfig
from vlsatools.global_matching import (
    ContrastiveConfig,
    GlobalEmbeddings,
    MatchingHead,
    global_loss,
    pool_global,
    total_loss,
    vtm_baseline_loss,
)
from vlsatools.masked_modeling import (
    LocalLoss,
    SharedDecoder,
    decode_masked,
    local_loss,
)
from vlsatools.patch_embed import MaskBatch, TriModalEmbedder
from vlsatools.unified_encoder import ModalityEncoder

LOSS_KEYS = ("loss_a", "loss_v", "loss_t", "L_global", "total")


class VLSAModel(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        dim = config.model.encoder.dim
        self.embedder = TriModalEmbedder(config.data, config.model.patch, dim)
        self.layout = self.embedder.layout
        self.encoder = ModalityEncoder(
            config.model.encoder, self.layout, config.train.joint_encoder_modalities
        )
        self.decoder = SharedDecoder(
            dim,
            config.model.decoder,
            config.data,
            config.model.patch,
            config.train.shared_decoder_modalities,
        )
        self.matching_heads = nn.ModuleDict(
            {p: MatchingHead(dim) for p in ("av", "at", "vt")}
        )

    def no_weight_decay(self) -> set:
        return {f"embedder.{n}" for n in self.embedder.no_weight_decay()}

    def forward_encoder(self, batch, masks: MaskBatch = None, zero_modalities=()):
        seq = self.embedder(
            batch.video,
            batch.tokens,
            batch.spectrogram,
            masks,
            zero_modalities=zero_modalities,
        )
        return self.encoder(seq.embeddings), seq

    def forward_globals(self, batch, zero_modalities=()) -> GlobalEmbeddings:
        encoded, seq = self.forward_encoder(batch, zero_modalities=zero_modalities)
        return pool_global(encoded, self.layout, seq.text_valid)

    def forward_local(self, batch, masks: MaskBatch) -> LocalLoss:
        encoded, _ = self.forward_encoder(batch, masks)
        preds = decode_masked(encoded, masks, self.decoder, self.layout)
        return local_loss(preds, batch, masks, self.config.model.patch)

    def forward_loss(self, batch, masks: MaskBatch, negatives: dict) -> dict:
        """
        Loss breakdown {loss_a, loss_v, loss_t, L_global, total} under the
        ablation switches of ``config.train``. LPMM uses the masked pass,
        the global objective a separate unmasked pass.
        """
        train = self.config.train
        zero = self.embedder.type_embed.new_zeros(())
        if train.lpmm_on:
            local = self.forward_local(batch, masks)
        else:
            local = LocalLoss(zero, zero, zero)
        contrastive = ContrastiveConfig(train.temperature, train.matching)
        if train.gam_on or train.vtm_on:
            globals_ = self.forward_globals(batch)
            objective = global_loss if train.gam_on else vtm_baseline_loss
            glob = objective(globals_, self.matching_heads, contrastive, negatives)
        else:
            glob = zero
        return {
            "loss_a": local.loss_a,
            "loss_v": local.loss_v,
            "loss_t": local.loss_t,
            "L_global": glob,
            "total": total_loss(local, glob, train.lam),
        }


def model_dtype(config: RunConfig):
    return torch.float64 if config.train.dtype == "float64" else torch.float32
