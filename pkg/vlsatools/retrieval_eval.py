"""
Cross-modal retrieval: cosine similarity matrices between global embeddings
and Recall@k in six directions.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from vlsatools.triplet_data import collate_triplets
from vlsatools.util.geom import cosine_matrix, zero_rows
from vlsatools.util.seeding import philox

logger = logging.getLogger(__name__)

# direction -> (query modality, gallery modality)
DIRECTIONS = {
    "t2v": ("text", "video"),
    "v2t": ("video", "text"),
    "t2a": ("text", "audio"),
    "a2t": ("audio", "text"),
    "a2v": ("audio", "video"),
    "v2a": ("video", "audio"),
}


def default_ks(direction: str) -> list:
    """1, 5, 10 for text-video and audio-video; 1, 5, 10, 50 for text-audio."""
    check_direction(direction)
    if set(DIRECTIONS[direction]) == {"text", "audio"}:
        return [1, 5, 10, 50]
    return [1, 5, 10]


def check_direction(direction: str):
    if direction not in DIRECTIONS:
        raise ValueError(
            f"unknown direction {direction!r}, valid: {sorted(DIRECTIONS)}"
        )


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # Bq x Bg
    query_ids: list = field(default_factory=list)
    gallery_ids: list = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape


def similarity_matrix(
    queries, gallery, query_ids=None, gallery_ids=None
) -> SimilarityMatrix:
    """
    Entry (i, j) = cosine(queries_i, gallery_j).
    """
    queries, gallery = np.asarray(queries), np.asarray(gallery)
    for name, x in (("query", queries), ("gallery", gallery)):
        bad = zero_rows(x)
        if bad.size:
            raise ValueError(f"{name} row {int(bad[0])} has zero norm")
    values = cosine_matrix(queries, gallery)
    return SimilarityMatrix(
        values,
        list(query_ids) if query_ids is not None else list(range(len(queries))),
        list(gallery_ids) if gallery_ids is not None else list(range(len(gallery))),
    )


@dataclass
class RetrievalReport:
    direction: str
    recalls: dict  # k -> percentage
    ranks: np.ndarray  # 1-based rank of each query's true item
    checkpoint_id: Optional[str] = None
    seed: Optional[int] = None

    @property
    def ks(self) -> list:
        return sorted(self.recalls)

    @property
    def size(self) -> int:
        return len(self.ranks)

    def to_record(self) -> dict:
        return {
            "direction": self.direction,
            "ks": self.ks,
            "recalls": {str(k): self.recalls[k] for k in self.ks},
            "B": self.size,
            "checkpoint_id": self.checkpoint_id,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def query_ranks(values: np.ndarray) -> np.ndarray:
    """
    rank_i = 1 + |{j != i : s_ij >= s_ii}|; ties count against the query.
    """
    diag = np.diag(values)
    beats = values >= diag[:, None]
    np.fill_diagonal(beats, False)
    return 1 + beats.sum(axis=1)


def recall_at_k(sims, ks, direction: str = "t2v") -> RetrievalReport:
    """
    Recall@k (percent) with query i's correct gallery item at index i.
    """
    values = sims.values if isinstance(sims, SimilarityMatrix) else np.asarray(sims)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"recall_at_k needs a square matrix, got shape {values.shape}")
    ranks = query_ranks(values)
    recalls = {int(k): 100.0 * float(np.mean(ranks <= k)) for k in sorted(set(ks))}
    return RetrievalReport(direction, recalls, ranks)


@torch.no_grad()
def embed_dataset(model, dataset, batch_size: int = 32, zero_modalities=()) -> dict:
    """
    Unmasked joint pass over every sample; returns modality -> N x D array.
    """
    if len(dataset) == 0:
        raise ValueError("cannot embed an empty dataset")
    model.eval()
    dtype = next(model.parameters()).dtype
    chunks = {"video": [], "text": [], "audio": []}
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.triplets[start : start + batch_size]
        batch = collate_triplets(chunk, dtype=dtype)
        g = model.forward_globals(batch, zero_modalities=zero_modalities)
        for m in chunks:
            chunks[m].append(g[m].cpu().numpy())
    return {m: np.concatenate(v) for m, v in chunks.items()}


def absent_modalities(direction: str, mode: str) -> tuple:
    """Modalities zeroed at inference: none in "joint" mode."""
    if mode == "joint":
        return ()
    used = set(DIRECTIONS[direction])
    return tuple(m for m in ("video", "text", "audio") if m not in used)


def evaluate(
    checkpoint,
    dataset,
    direction: str,
    ks=None,
    absent_modality: str = "joint",
    batch_size: int = None,
):
    """
    Embed ``dataset`` with ``checkpoint`` and report Recall@k for ``direction``.

    Parameters
    ----------
    checkpoint: Checkpoint whose data configuration must match the dataset
    dataset: Dataset to retrieve within (query i matches gallery item i)
    direction: one of t2v, v2t, t2a, a2t, a2v, v2a
    ks: recall cut-offs (per-direction default when None)
    absent_modality: "joint" encodes all modalities, "zero" zeroes the
        modality the direction does not use
    batch_size: embedding batch size (config eval.batch_size when None)

    Returns
    -------
    _: RetrievalReport
    """
    check_direction(direction)
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if vars(checkpoint.config.data) != vars(dataset.data_config):
        raise ValueError(
            f"checkpoint data config {vars(checkpoint.config.data)} does not match "
            f"dataset {vars(dataset.data_config)}"
        )
    ks = ks or checkpoint.config.eval.ks or default_ks(direction)
    batch_size = batch_size or checkpoint.config.eval.batch_size
    model = checkpoint.to_model()
    zeroed = absent_modalities(direction, absent_modality)
    globals_ = embed_dataset(model, dataset, batch_size, zeroed)
    query, gallery = DIRECTIONS[direction]
    ids = [t.id for t in dataset]
    sims = similarity_matrix(globals_[query], globals_[gallery], ids, ids)
    report = recall_at_k(sims, ks, direction)
    report.checkpoint_id = checkpoint.checkpoint_id
    report.seed = checkpoint.config.train.seed
    logger.info("%s R@k %s on %d samples", direction, report.recalls, len(dataset))
    return report


def pair_similarity_summary(ga, gb, n_pairs: int = 1000, seed: int = 0) -> dict:
    """
    Cosine statistics of matching pairs (ga_i, gb_i) versus random
    non-matching pairs (ga_i, gb_j), j != i.
    """
    sims = cosine_matrix(ga, gb)
    B = sims.shape[0]
    rng = philox(seed, "pairs")
    i = rng.integers(0, B, n_pairs)
    pos = sims[i, i]
    if B > 1:
        j = (i + rng.integers(1, B, n_pairs)) % B
        neg = sims[i, j]
    else:
        neg = np.zeros(0)
    summary = {
        "pos_mean": float(pos.mean()),
        "pos_std": float(pos.std()),
        "neg_mean": float(neg.mean()) if neg.size else float("nan"),
        "neg_std": float(neg.std()) if neg.size else float("nan"),
    }
    summary["separation"] = summary["pos_mean"] - summary["neg_mean"]
    return summary
