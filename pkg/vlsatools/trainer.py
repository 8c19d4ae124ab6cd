"""
Parameter initialization, AdamW training loop, finite-difference gradient
check and the ablation harness.
"""
import logging
import math
import time

import numpy as np
import pandas as pd
import torch
from scipy.stats import truncnorm

from vlsatools.checkpoint import Checkpoint, save_checkpoint
from vlsatools.config import RunConfig
from vlsatools.global_matching import draw_negatives
from vlsatools.masked_modeling import make_mask_plan, plans_to_masks
from vlsatools.model import LOSS_KEYS, VLSAModel, model_dtype
from vlsatools.retrieval_eval import embed_dataset, evaluate, pair_similarity_summary
from vlsatools.triplet_data import collate_triplets, generate_synthetic
from vlsatools.util.seeding import philox

logger = logging.getLogger(__name__)

INIT_STD = 0.02
INIT_TRUNCATION = 3.0  # in standard deviations

# Ablation variants -> train-section overrides
ABLATION_VARIANTS = {
    "full": {},
    "none": {"lpmm_on": False, "gam_on": False},
    "lpmm": {"gam_on": False},
    "gam": {"lpmm_on": False},
    "vtm": {"gam_on": False, "vtm_on": True},
}
MODALITY_SUBSETS = ("avt", "vt", "at", "av", "none")
ABLATE_KINDS = ("encoder", "decoder")


def parse_variant(name: str) -> dict:
    """
    Train-section overrides for an ablation variant: one of
    full, none, lpmm, gam, vtm, encoder:<set>, decoder:<set> with
    <set> in avt, vt, at, av, none.
    """
    if name in ABLATION_VARIANTS:
        return dict(ABLATION_VARIANTS[name])
    kind, _, subset = name.partition(":")
    if subset in MODALITY_SUBSETS:
        if kind == "encoder":
            return {"joint_encoder_modalities": subset}
        if kind == "decoder":
            return {"shared_decoder_modalities": subset}
    subsets = "|".join(MODALITY_SUBSETS)
    valid = sorted(ABLATION_VARIANTS) + [f"{k}:<{subsets}>" for k in ABLATE_KINDS]
    raise ValueError(f"unknown ablation variant {name!r}, valid: {valid}")


def _is_norm_gain(model, name):
    module_name = name.rsplit(".", 1)[0]
    return isinstance(model.get_submodule(module_name), torch.nn.LayerNorm)


def init_params(model: VLSAModel, seed: int) -> VLSAModel:
    """
    Truncated-normal(0, 0.02) weights, zero biases, unit norm gains.
    Each tensor draws from its own stream keyed by (seed, name).
    """
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif _is_norm_gain(model, name):
                p.fill_(1.0)
            else:
                values = truncnorm.rvs(
                    -INIT_TRUNCATION,
                    INIT_TRUNCATION,
                    loc=0.0,
                    scale=INIT_STD,
                    size=tuple(p.shape),
                    random_state=philox(seed, "init", name),
                )
                values = np.asarray(values).reshape(p.shape)
                p.copy_(torch.as_tensor(values, dtype=p.dtype))
    return model


def build_model(config: RunConfig, seed: int = None) -> VLSAModel:
    model = VLSAModel(config).to(model_dtype(config))
    return init_params(model, config.train.seed if seed is None else seed)


def build_optimizer(model: torch.nn.Module, train_config):
    """
    AdamW (betas 0.9/0.999, eps 1e-8) with no weight decay on biases, norm
    gains and embedding tables, plus a linear warmup when warmup_steps > 0.

    Returns
    -------
    optimizer, scheduler
    """
    skip = model.no_weight_decay() if hasattr(model, "no_weight_decay") else set()
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (no_decay if p.ndim < 2 or name in skip else decay).append(p)
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": train_config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=train_config.lr,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    warmup = train_config.warmup_steps
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: min(1.0, (s + 1) / warmup) if warmup > 0 else 1.0
    )
    return optimizer, scheduler


def make_masks(model: VLSAModel, batch, step: int):
    config = model.config
    plans = [
        make_mask_plan(
            tokens.numpy(),
            config.data,
            config.model.patch,
            config.train.seed,
            sample_id,
            step=step,
            ratios=config.train.mask,
        )
        for tokens, sample_id in zip(batch.tokens, batch.ids)
    ]
    return plans_to_masks(plans, model.layout)


def check_finite(losses: dict, step: int):
    for key in LOSS_KEYS:
        value = losses[key].detach().item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite {key} ({value}) at step {step}")


def train_step(
    model: VLSAModel, optimizer, triplets: list, step: int, scheduler=None
) -> dict:
    """
    One AdamW update on the objective. ``triplets`` is split into
    ``accum_steps`` micro-batches whose gradients are accumulated.
    Mask plans and matching negatives are drawn fresh from (seed, step).

    Returns
    -------
    _: mean loss breakdown over the micro-batches (floats)
    """
    config = model.config
    accum = config.train.accum_steps
    dtype = model_dtype(config)
    model.train()
    optimizer.zero_grad(set_to_none=True)
    micro = np.array_split(np.arange(len(triplets)), min(accum, len(triplets)))
    totals = dict.fromkeys(LOSS_KEYS, 0.0)
    for m, idx in enumerate(micro):
        batch = collate_triplets([triplets[i] for i in idx], dtype=dtype)
        masks = make_masks(model, batch, step)
        negatives = draw_negatives(len(batch), config.train.seed, step * accum + m)
        losses = model.forward_loss(batch, masks, negatives)
        check_finite(losses, step)
        if losses["total"].requires_grad:
            (losses["total"] / len(micro)).backward()
        for key in LOSS_KEYS:
            totals[key] += losses[key].detach().item() / len(micro)
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return totals


def iterate_batches(n: int, per_step: int, seed: int):
    """
    Endless shuffled index batches; the epoch permutation is keyed by
    (seed, epoch). A dataset smaller than a batch is used whole.
    """
    per_step = min(per_step, n)
    epoch = 0
    while True:
        order = philox(seed, "shuffle", epoch).permutation(n)
        for start in range(0, n - per_step + 1, per_step):
            yield epoch, order[start : start + per_step]
        epoch += 1


def write_training_log(records: list, path):
    """JSON lines, one object per logged step; empty file for a zero-step run."""
    if not records:
        open(path, "w").close()
        return
    frame = pd.DataFrame(records, columns=["step", *LOSS_KEYS, "wall_time"])
    frame.to_json(path, orient="records", lines=True)


def pretrain(
    dataset, config: RunConfig, checkpoint_path=None, log_path=None
) -> Checkpoint:
    """
    Fixed-step training loop over shuffled batches.

    Parameters
    ----------
    dataset: Dataset of training triplets (non-empty)
    config: resolved run configuration
    checkpoint_path: where to save the final checkpoint (optional)
    log_path: JSON-lines training log, one record per log interval (optional)

    Returns
    -------
    _: final Checkpoint
    """
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    train = config.train
    torch.set_num_threads(train.threads)
    model = build_model(config)
    optimizer, scheduler = build_optimizer(model, train)
    per_step = train.batch_size * train.accum_steps
    batches = iterate_batches(len(dataset), per_step, train.seed)
    records = []
    epoch = 0
    start = time.perf_counter()
    for step in range(train.steps):
        epoch, idx = next(batches)
        triplets = [dataset[i] for i in idx]
        losses = train_step(model, optimizer, triplets, step, scheduler)
        if step % train.log_interval == 0 or step == train.steps - 1:
            record = {"step": step, **losses, "wall_time": time.perf_counter() - start}
            records.append(record)
            logger.info(
                "step %d total %.4f (a %.4f v %.4f t %.4f global %.4f)",
                step,
                losses["total"],
                losses["loss_a"],
                losses["loss_v"],
                losses["loss_t"],
                losses["L_global"],
            )
    rng_state = {
        "stream": "philox",
        "seed": train.seed,
        "step": train.steps,
        "epoch": epoch,
    }
    ckpt = Checkpoint.from_model(model, step=train.steps, rng_state=rng_state)
    if log_path is not None:
        write_training_log(records, log_path)
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return ckpt


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    loss_fn,
    named_params,
    seed: int = 0,
    h: float = 1e-5,
    max_entries: int = 4,
    floor: float = None,
):
    """
    Compare autograd gradients of ``loss_fn()`` with central differences.
    Tensors with more than ``max_entries`` entries are sampled.

    ``floor`` bounds the denominator of the relative error from below; by
    default 1e-6 times max(1, |loss|), the size below which float64
    round-off in the differenced loss dominates.

    Returns
    -------
    max_err (float), per_tensor (dict name -> max relative error)
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    if floor is None:
        floor = 1e-6 * max(1.0, abs(loss.detach().item()))
    per_tensor = {}
    with torch.no_grad():
        for name, p in named_params:
            flat = p.view(-1)
            grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            if flat.numel() <= max_entries:
                entries = np.arange(flat.numel())
            else:
                rng = philox(seed, "gradcheck", name)
                entries = rng.choice(flat.numel(), max_entries, replace=False)
            worst = 0.0
            for e in entries:
                original = flat[e].item()
                flat[e] = original + h
                plus = float(loss_fn())
                flat[e] = original - h
                minus = float(loss_fn())
                flat[e] = original
                numeric = (plus - minus) / (2 * h)
                worst = max(worst, relative_error(float(grad[e]), numeric, floor))
            per_tensor[name] = worst
    return max(per_tensor.values(), default=0.0), per_tensor


def gradcheck(
    config: RunConfig, seed: int = 0, n_samples: int = 4, max_entries: int = 4
):
    """
    Max relative error between analytic and finite-difference gradients of
    the total loss, in float64 on a small synthetic batch.
    """
    config = config.replace(train={"dtype": "float64", "seed": seed})
    model = build_model(config)
    data = generate_synthetic(n_samples, 2, seed, "correlated", config.data)
    batch = collate_triplets(data.triplets, dtype=torch.float64)
    masks = make_masks(model, batch, step=0)
    negatives = draw_negatives(len(batch), seed, 0)

    def loss_fn():
        return model.forward_loss(batch, masks, negatives)["total"]

    worst, per_tensor = finite_difference_check(
        loss_fn, model.named_parameters(), seed, max_entries=max_entries
    )
    name = max(per_tensor, key=per_tensor.get)
    logger.info("gradcheck max relative error %.3e (%s)", worst, name)
    return worst


def run_ablation(
    train_data, eval_data, config: RunConfig, variants, directions=("t2v", "t2a")
):
    """
    Train one model per variant with a common seed and budget, evaluate each
    direction on ``eval_data``.

    Returns
    -------
    table (DataFrame): one row per (variant, direction) with R@k columns and
        video-text pair similarity statistics
    reports (dict): (variant, direction) -> RetrievalReport
    """
    if not variants:
        raise ValueError("no ablation variants given")
    rows, reports = [], {}
    for variant in variants:
        cfg = config.replace(train=parse_variant(variant))
        logger.info("ablation variant %s", variant)
        ckpt = pretrain(train_data, cfg)
        embeddings = embed_dataset(ckpt.to_model(), eval_data, cfg.eval.batch_size)
        pairs = pair_similarity_summary(
            embeddings["video"], embeddings["text"], seed=cfg.train.seed
        )
        for direction in directions:
            report = evaluate(
                ckpt, eval_data, direction, absent_modality=cfg.eval.absent_modality
            )
            reports[(variant, direction)] = report
            row = {"variant": variant, "direction": direction, "steps": cfg.train.steps}
            row.update({f"R@{k}": v for k, v in report.recalls.items()})
            row["vt_pos_sim"] = pairs["pos_mean"]
            row["vt_neg_sim"] = pairs["neg_mean"]
            rows.append(row)
    return pd.DataFrame(rows), reports
