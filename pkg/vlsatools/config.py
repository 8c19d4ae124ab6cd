"""
Run configuration: one JSON document with ``data``, ``model``, ``train`` and
``eval`` sections, resolved on top of a named preset (``tiny``, ``desk`` or
``large``).

Dataclass defaults are the full-scale values; the ``desk`` preset (the
default) shrinks them so a full pre-training run fits on a laptop CPU, and
``tiny`` is the gradient-check configuration.
"""
from __future__ import annotations

import copy
import json
import math
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

MODALITIES = ("audio", "video", "text")
MODALITY_LETTERS = {"a": "audio", "v": "video", "t": "text"}
ABSENT_MODES = ("joint", "zero")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    """
    Invalid configuration value. ``key`` is the dotted path of the offending
    entry (``train.lr``, ``model.patch.video_patch``, ...).
    """

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")


def normalize_modality_set(value: str, key: str) -> str:
    """
    Canonical spelling of a modality subset: letters from ``avt`` in that
    order, or ``none`` for the empty set.
    """
    letters = value.strip().lower()
    if letters in ("", "none"):
        return "none"
    unknown = set(letters) - set(MODALITY_LETTERS)
    if unknown:
        raise ConfigError(
            key,
            f"{value!r} is not a subset of 'avt' (or 'none'), bad {sorted(unknown)}",
        )
    return "".join(x for x in "avt" if x in letters)


def modality_set(value: str) -> frozenset:
    """Modality names selected by a canonical subset string."""
    if value == "none":
        return frozenset()
    return frozenset(MODALITY_LETTERS[x] for x in value)


def _require_positive(obj, names):
    for name in names:
        if getattr(obj, name) <= 0:
            raise ConfigError(name, f"must be positive, got {getattr(obj, name)}")


@dataclass
class DataConfig:
    n_frames: int = 8  # V
    height: int = 224  # H
    width: int = 224  # W
    max_tokens: int = 40  # S
    vocab_size: int = 30522  # C
    n_time: int = 256  # T
    n_freq: int = 256  # F

    def __post_init__(self):
        _require_positive(
            self,
            [
                "n_frames",
                "height",
                "width",
                "max_tokens",
                "vocab_size",
                "n_time",
                "n_freq",
            ],
        )

    @property
    def video_shape(self) -> tuple:
        return (self.n_frames, 3, self.height, self.width)

    @property
    def spectrogram_shape(self) -> tuple:
        return (self.n_time, self.n_freq)


@dataclass
class PatchConfig:
    video_patch: int = 16  # P_v
    audio_patch: int = 16  # P_a

    def __post_init__(self):
        _require_positive(self, ["video_patch", "audio_patch"])

    def check(self, data: DataConfig):
        """Raise if the frame or spectrogram sizes are not patch multiples."""
        if data.height % self.video_patch or data.width % self.video_patch:
            raise ConfigError(
                "video_patch",
                f"{self.video_patch} does not divide frames of "
                f"{data.height}x{data.width}",
            )
        if data.n_time % self.audio_patch or data.n_freq % self.audio_patch:
            raise ConfigError(
                "audio_patch",
                f"{self.audio_patch} does not divide spectrograms of "
                f"{data.n_time}x{data.n_freq}",
            )

    def patches_per_frame(self, data: DataConfig) -> int:
        """I = (H/P_v)(W/P_v)"""
        return (data.height // self.video_patch) * (data.width // self.video_patch)

    def audio_patches(self, data: DataConfig) -> int:
        """A = (T/P_a)(F/P_a)"""
        return (data.n_time // self.audio_patch) * (data.n_freq // self.audio_patch)


@dataclass
class EncoderConfig:
    dim: int = 768  # D
    n_layers: int = 12
    n_heads: int = 12
    mlp_ratio: float = 4.0

    def __post_init__(self):
        _require_positive(self, ["dim", "n_layers", "n_heads", "mlp_ratio"])
        if self.dim % self.n_heads:
            raise ConfigError(
                "n_heads", f"{self.n_heads} heads do not divide dim {self.dim}"
            )

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    @property
    def attention_scale(self) -> float:
        """Per-head logit divisor, sqrt(D / n_heads)."""
        return math.sqrt(self.head_dim)


@dataclass
class DecoderConfig:
    depth: int = 2
    dim: Optional[int] = None  # resolved to encoder dim // 2
    n_heads: Optional[int] = None  # resolved to the encoder head count

    def __post_init__(self):
        _require_positive(self, ["depth"])
        if self.dim is not None and self.dim <= 0:
            raise ConfigError("dim", f"must be positive, got {self.dim}")
        if self.n_heads is not None and self.n_heads <= 0:
            raise ConfigError("n_heads", f"must be positive, got {self.n_heads}")


@dataclass
class ModelConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        if self.decoder.dim is None:
            self.decoder.dim = max(1, self.encoder.dim // 2)
        if self.decoder.n_heads is None:
            self.decoder.n_heads = self.encoder.n_heads
        if self.decoder.dim % self.decoder.n_heads:
            raise ConfigError(
                "decoder.n_heads",
                f"{self.decoder.n_heads} heads do not divide decoder dim "
                f"{self.decoder.dim}",
            )


@dataclass
class MaskConfig:
    text: float = 0.15
    video: float = 0.75  # per frame
    audio: float = 0.75

    def __post_init__(self):
        for name in ("text", "video", "audio"):
            ratio = getattr(self, name)
            if not 0.0 <= ratio <= 1.0:
                raise ConfigError(name, f"ratio must be in [0, 1], got {ratio}")


@dataclass
class TrainConfig:
    steps: int = 200000
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 2048
    accum_steps: int = 1
    warmup_steps: int = 0
    lam: float = 5.0  # weight of the global loss
    temperature: float = 0.05
    matching: bool = True  # include the BCE matching terms
    seed: int = 0
    log_interval: int = 100
    threads: int = 1
    dtype: str = "float32"
    lpmm_on: bool = True
    gam_on: bool = True
    vtm_on: bool = False
    joint_encoder_modalities: str = "avt"
    shared_decoder_modalities: str = "avt"
    mask: MaskConfig = field(default_factory=MaskConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps", f"must be >= 0, got {self.steps}")
        _require_positive(
            self, ["batch_size", "accum_steps", "log_interval", "threads"]
        )
        if self.lr < 0:
            raise ConfigError("lr", f"must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", f"must be >= 0, got {self.warmup_steps}")
        if self.lam < 0:
            raise ConfigError("lam", f"must be >= 0, got {self.lam}")
        if self.temperature <= 0:
            raise ConfigError("temperature", f"must be > 0, got {self.temperature}")
        if self.dtype not in DTYPES:
            raise ConfigError("dtype", f"must be one of {DTYPES}, got {self.dtype!r}")
        if self.gam_on and self.vtm_on:
            raise ConfigError(
                "vtm_on", "the VTM baseline replaces GAM, turn gam_on off"
            )
        self.joint_encoder_modalities = normalize_modality_set(
            self.joint_encoder_modalities, "joint_encoder_modalities"
        )
        self.shared_decoder_modalities = normalize_modality_set(
            self.shared_decoder_modalities, "shared_decoder_modalities"
        )


@dataclass
class EvalConfig:
    batch_size: int = 32
    ks: Optional[list] = None  # None picks the per-direction default
    absent_modality: str = "joint"

    def __post_init__(self):
        _require_positive(self, ["batch_size"])
        if self.absent_modality not in ABSENT_MODES:
            raise ConfigError(
                "absent_modality",
                f"must be one of {ABSENT_MODES}, got {self.absent_modality!r}",
            )
        if self.ks is not None:
            if not self.ks or any(
                not isinstance(k, int) or isinstance(k, bool) or k < 1 for k in self.ks
            ):
                raise ConfigError(
                    "ks", f"must be a non-empty list of ints >= 1, got {self.ks}"
                )
            self.ks = sorted(set(self.ks))


def _tiny() -> dict:
    return {
        "data": {
            "n_frames": 2,
            "height": 8,
            "width": 8,
            "max_tokens": 6,
            "vocab_size": 32,
            "n_time": 16,
            "n_freq": 16,
        },
        "model": {
            "patch": {"video_patch": 4, "audio_patch": 4},
            "encoder": {"dim": 16, "n_layers": 1, "n_heads": 2, "mlp_ratio": 2.0},
            "decoder": {"depth": 1},
        },
        "train": {
            "steps": 10,
            "batch_size": 4,
            "log_interval": 1,
            "temperature": 0.5,
            "dtype": "float64",
        },
        "eval": {"batch_size": 8},
    }


def _desk() -> dict:
    return {
        "data": {
            "n_frames": 2,
            "height": 32,
            "width": 32,
            "max_tokens": 8,
            "vocab_size": 64,
            "n_time": 32,
            "n_freq": 32,
        },
        "model": {
            "patch": {"video_patch": 8, "audio_patch": 8},
            "encoder": {"dim": 64, "n_layers": 2, "n_heads": 2, "mlp_ratio": 4.0},
            "decoder": {"depth": 2},
        },
        "train": {"steps": 2000, "batch_size": 8, "log_interval": 50},
        "eval": {"batch_size": 32},
    }


def _large() -> dict:
    return {"data": {}, "model": {}, "train": {}, "eval": {}}


PRESETS = {"tiny": _tiny, "desk": _desk, "large": _large}


def _merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _check_type(key: str, hint, value):
    if typing.get_origin(hint) is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return
        hint = args[0]
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is list:
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {hint.__name__}, got {value!r}")


def _build(cls, values: dict, path: str):
    """Instantiate dataclass ``cls`` from ``values``, rejecting unknown keys."""
    if not isinstance(values, dict):
        raise ConfigError(path, f"expected an object, got {values!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = {}
    for name, value in values.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{path}.{name}")
        else:
            _check_type(f"{path}.{name}", hint, value)
            kwargs[name] = float(value) if hint is float else value
    try:
        return cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{path}.{err.key}", err.message) from None


@dataclass
class RunConfig:
    """
    Fully-resolved run configuration document.
    """

    preset: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        try:
            self.model.patch.check(self.data)
        except ConfigError as err:
            raise ConfigError(f"model.patch.{err.key}", err.message) from None

    @classmethod
    def from_dict(cls, document: dict) -> "RunConfig":
        """
        Resolve a (possibly partial) configuration document.

        Parameters
        ----------
        document (dict): parsed JSON with optional ``preset`` and sections

        Returns
        -------
        (RunConfig): configuration with every default filled from the preset
        """
        if not isinstance(document, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        sections = {"data", "model", "train", "eval", "preset"}
        for key in document:
            if key not in sections:
                raise ConfigError(key, "unknown key")
        preset = document.get("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(
                "preset", f"must be one of {sorted(PRESETS)}, got {preset!r}"
            )
        overrides = {k: v for k, v in document.items() if k != "preset"}
        resolved = _merge(PRESETS[preset](), overrides)
        try:
            return cls(
                preset=preset,
                data=_build(DataConfig, resolved["data"], "data"),
                model=_build(ModelConfig, resolved["model"], "model"),
                train=_build(TrainConfig, resolved["train"], "train"),
                eval=_build(EvalConfig, resolved["eval"], "eval"),
            )
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError("<root>", str(err)) from None

    @classmethod
    def from_preset(cls, preset: str = "desk", **sections) -> "RunConfig":
        return cls.from_dict({"preset": preset, **sections})

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            document = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError("<root>", f"not valid JSON: {err}") from None
        return cls.from_dict(document)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical echo of the resolved document."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **sections) -> "RunConfig":
        """Copy with section overrides, e.g. ``replace(train={"steps": 0})``."""
        document = self.to_dict()
        preset = document.pop("preset")
        if "encoder" in sections.get("model", {}):
            # let the decoder width follow a changed encoder
            document["model"]["decoder"].update(dim=None, n_heads=None)
        return RunConfig.from_dict({"preset": preset, **_merge(document, sections)})
