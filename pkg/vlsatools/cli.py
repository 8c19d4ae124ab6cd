"""
``vlsa`` command group: data generation, pre-training, evaluation,
embedding export, gradient check, ablations and spectrogram conversion.

Every command echoes its resolved configuration as JSON before acting.
Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation error.
"""
import json
import logging
from contextlib import contextmanager

import click
import numpy as np
import pandas as pd

from vlsatools import audio_frontend as af
from vlsatools.checkpoint import CheckpointFormatError, load_checkpoint
from vlsatools.config import (
    ABSENT_MODES,
    ConfigError,
    RunConfig,
    normalize_modality_set,
)
from vlsatools.loader import load_dataset, save_dataset
from vlsatools.reader import DatasetFormatError, TripletReader
from vlsatools.retrieval_eval import DIRECTIONS, embed_dataset, evaluate
from vlsatools.trainer import gradcheck, pretrain, run_ablation
from vlsatools.triplet_data import AUDIO_SOURCES, SYNTHETIC_MODES, generate_synthetic

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
ABLATE_SWITCHES = {
    "lpmm": "lpmm_on",
    "gam": "gam_on",
    "vtm": "vtm_on",
    "matching": "matching",
}
ABLATE_SETS = {
    "encoder": "joint_encoder_modalities",
    "decoder": "shared_decoder_modalities",
}


class ClickKs(click.ParamType):
    """
    Converts a comma-separated list like ``1,5,10`` to sorted unique ints >= 1
    """

    name = "ks"

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            ks = sorted({int(k) for k in value.split(",") if k.strip()})
        except ValueError:
            self.fail(
                f"{value!r} is not a comma-separated list of integers", param, ctx
            )
        if not ks or ks[0] < 1:
            self.fail(f"{value!r} must list integers >= 1", param, ctx)
        return ks


class ClickAblateFlags(click.ParamType):
    """
    Converts ``gam=off,lpmm=off,encoder=vt`` to train-section overrides
    """

    name = "flags"

    def convert(self, value, param, ctx):
        if isinstance(value, dict):
            return value
        overrides = {}
        for item in filter(None, (s.strip() for s in value.split(","))):
            key, _, setting = item.partition("=")
            if key in ABLATE_SWITCHES and setting in ("on", "off"):
                overrides[ABLATE_SWITCHES[key]] = setting == "on"
            elif key in ABLATE_SETS and setting:
                try:
                    overrides[ABLATE_SETS[key]] = normalize_modality_set(setting, key)
                except ConfigError as err:
                    self.fail(str(err), param, ctx)
            else:
                valid = [f"{k}=on|off" for k in ABLATE_SWITCHES]
                valid += [f"{k}=<set>" for k in ABLATE_SETS]
                self.fail(
                    f"bad ablation flag {item!r}, valid: {', '.join(valid)}", param, ctx
                )
        return overrides


@contextmanager
def reported_errors():
    """Map library exceptions onto click's exit codes."""
    try:
        yield
    except ConfigError as err:
        raise click.UsageError(str(err)) from None
    except (
        OSError,
        DatasetFormatError,
        CheckpointFormatError,
        FloatingPointError,
        ValueError,
    ) as err:
        raise click.ClickException(str(err)) from None


def load_config(path, **sections) -> RunConfig:
    config = RunConfig.from_file(path) if path else RunConfig.from_preset("desk")
    sections = {k: v for k, v in sections.items() if v}
    return config.replace(**sections) if sections else config


def echo_document(document: dict):
    click.echo(json.dumps(document, indent=2, sort_keys=True))


def check_data_config(config: RunConfig, dataset):
    if vars(config.data) != vars(dataset.data_config):
        raise ConfigError(
            "data",
            f"configuration {vars(config.data)} does not match "
            f"dataset {vars(dataset.data_config)}",
        )


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    help="run configuration JSON",
)
threads_option = click.option(
    "--threads", type=click.IntRange(min=1), default=1, show_default=True
)
data_option = click.option(
    "--data",
    "data_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help="dataset directory",
)
ckpt_option = click.option(
    "--ckpt", required=True, type=click.Path(exists=True, dir_okay=False)
)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="debug logging")
def cli(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@cli.command("gen-data")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--num", required=True, type=click.IntRange(min=1))
@click.option("--classes", type=click.IntRange(min=2), default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--mode",
    type=click.Choice(SYNTHETIC_MODES),
    default="correlated",
    show_default=True,
)
@click.option(
    "--audio",
    type=click.Choice(AUDIO_SOURCES),
    default="template",
    show_default=True,
)
@config_option
@threads_option
def gen_data(out, num, classes, seed, mode, audio, config_path, threads):
    """Write a synthetic triplet dataset directory."""
    with reported_errors():
        config = load_config(config_path)
        echo_document(
            {
                "data": vars(config.data),
                "num": num,
                "classes": classes,
                "seed": seed,
                "mode": mode,
                "audio": audio,
            }
        )
        dataset = generate_synthetic(
            num, classes, seed, mode, config.data, audio, threads=threads
        )
        manifest = save_dataset(dataset, out, threads=threads)
    click.echo(f"wrote {len(dataset)} samples, manifest {manifest}")


@cli.command("pretrain")
@config_option
@data_option
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option(
    "--log", "log_path", type=click.Path(dir_okay=False), help="default <out>.log.jsonl"
)
@click.option(
    "--ablate", type=ClickAblateFlags(), default="", help="e.g. gam=off,lpmm=off"
)
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=None,
    help="overrides train.threads",
)
def pretrain_cmd(config_path, data_dir, out, log_path, ablate, threads):
    """Pre-train on a dataset directory and save a checkpoint."""
    with reported_errors():
        train = dict(ablate)
        if threads is not None:
            train["threads"] = threads
        config = load_config(config_path, train=train)
        click.echo(config.to_json())
        dataset = load_dataset(data_dir, threads=config.train.threads)
        check_data_config(config, dataset)
        log_path = log_path or f"{out}.log.jsonl"
        ckpt = pretrain(dataset, config, checkpoint_path=out, log_path=log_path)
    click.echo(f"checkpoint {ckpt.checkpoint_id} after {ckpt.step} steps: {out}")


@cli.command("eval")
@ckpt_option
@data_option
@click.option("--direction", required=True, type=click.Choice(sorted(DIRECTIONS)))
@click.option("--ks", type=ClickKs(), default=None, help="e.g. 1,5,10")
@click.option(
    "--absent",
    type=click.Choice(ABSENT_MODES),
    default=None,
    help="overrides eval.absent_modality",
)
@click.option(
    "--out", type=click.Path(dir_okay=False), help="also write the report here"
)
@threads_option
def eval_cmd(ckpt, data_dir, direction, ks, absent, out, threads):
    """Recall@k of a checkpoint in one retrieval direction."""
    with reported_errors():
        checkpoint = load_checkpoint(ckpt)
        config = checkpoint.config
        if absent:
            config = config.replace(eval={"absent_modality": absent})
        if ks:
            config = config.replace(eval={"ks": ks})
        checkpoint.config = config
        click.echo(config.to_json())
        dataset = load_dataset(data_dir, threads=threads)
        report = evaluate(
            checkpoint, dataset, direction, absent_modality=config.eval.absent_modality
        )
        line = report.to_json()
        if out:
            with open(out, "w", encoding="utf-8") as f:
                f.write(line + "\n")
    click.echo(line)


@cli.command("embed")
@ckpt_option
@data_option
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@threads_option
def embed_cmd(ckpt, data_dir, out, threads):
    """
    Export the video, text and audio global embedding of every sample as
    text rows ``id modality v_1 ... v_D`` after a ``# dim=D count=N`` header.
    """
    with reported_errors():
        checkpoint = load_checkpoint(ckpt)
        click.echo(checkpoint.config.to_json())
        dataset = load_dataset(data_dir, threads=threads)
        check_data_config(checkpoint.config, dataset)
        batch_size = checkpoint.config.eval.batch_size
        embeddings = embed_dataset(checkpoint.to_model(), dataset, batch_size)
        frame = embeddings_frame([t.id for t in dataset], embeddings)
        with open(out, "w", encoding="utf-8") as f:
            f.write(f"# dim={frame.shape[1] - 2} count={len(frame)}\n")
            frame.to_csv(f, sep=" ", header=False, index=False, float_format="%.9g")
    click.echo(f"wrote {len(frame)} embeddings to {out}")


def embeddings_frame(ids: list, embeddings: dict) -> pd.DataFrame:
    """One row per (sample, modality), samples in dataset order."""
    modalities = ("video", "text", "audio")
    values = np.stack([embeddings[m] for m in modalities], axis=1)
    values = values.reshape(len(ids) * len(modalities), -1)
    frame = pd.DataFrame(values, columns=[f"d{i}" for i in range(values.shape[1])])
    frame.insert(0, "modality", list(modalities) * len(ids))
    frame.insert(0, "id", np.repeat(ids, len(modalities)))
    return frame


@cli.command("gradcheck")
@config_option
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck_cmd(config_path, seed):
    """Finite-difference check of the total-loss gradients (float64)."""
    with reported_errors():
        if config_path:
            config = RunConfig.from_file(config_path)
        else:
            config = RunConfig.from_preset("tiny")
        config = config.replace(train={"dtype": "float64", "seed": seed})
        click.echo(config.to_json())
        error = gradcheck(config, seed)
    click.echo(f"max relative error {error:.3e}")
    if not error < GRADCHECK_TOLERANCE:
        click.get_current_context().exit(1)


@cli.command("ablate")
@config_option
@click.option(
    "--train-data", required=True, type=click.Path(exists=True, file_okay=False)
)
@click.option(
    "--eval-data", required=True, type=click.Path(exists=True, file_okay=False)
)
@click.option(
    "--variants", default="none,gam,full", show_default=True, help="comma-separated"
)
@click.option(
    "--directions", default="t2v,t2a", show_default=True, help="comma-separated"
)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV table")
@threads_option
def ablate_cmd(config_path, train_data, eval_data, variants, directions, out, threads):
    """Train and evaluate one model per ablation variant."""
    variants = [v.strip() for v in variants.split(",") if v.strip()]
    directions = [d.strip() for d in directions.split(",") if d.strip()]
    bad = [d for d in directions if d not in DIRECTIONS]
    if bad:
        raise click.BadParameter(
            f"{bad}, valid: {sorted(DIRECTIONS)}", param_hint="--directions"
        )
    with reported_errors():
        config = load_config(config_path)
        click.echo(config.to_json())
        train = load_dataset(train_data, threads=threads)
        test = load_dataset(eval_data, threads=threads)
        check_data_config(config, train)
        check_data_config(config, test)
        try:
            table, _ = run_ablation(train, test, config, variants, directions)
        except ValueError as err:
            if "variant" in str(err):
                raise click.BadParameter(str(err), param_hint="--variants") from None
            raise
        if out:
            table.to_csv(out, index=False)
    click.echo(table.to_string(index=False))


@cli.command("spectrogram")
@click.option(
    "--wav",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="raw float32 LE",
)
@click.option("--rate", required=True, type=click.FloatRange(min=0, min_open=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--frames", type=click.IntRange(min=1), default=256, show_default=True)
@click.option("--bins", type=click.IntRange(min=1), default=256, show_default=True)
def spectrogram_cmd(wav, rate, out, frames, bins):
    """Convert a raw waveform into a log-frequency spectrogram record."""
    with reported_errors():
        echo_document(
            {
                "wav": wav,
                "rate": rate,
                "frames": frames,
                "bins": bins,
                "target_rate": af.TARGET_RATE,
            }
        )
        waveform = af.read_waveform(wav, rate)
        spec = af.waveform_to_spectrogram(waveform, n_frames=frames, n_bins=bins)
        record = TripletReader().encode_record("audio", spec.values.astype(np.float32))
        with open(out, "wb") as f:
            f.write(record)
    if spec.degenerate:
        logger.warning("%s: silent or constant clip, spectrogram is all zeros", wav)
    rows, cols = spec.values.shape
    click.echo(f"wrote {rows}x{cols} spectrogram to {out}")


def main():
    cli(prog_name="vlsa")
