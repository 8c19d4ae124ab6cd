"""
Triplet data model, whitespace tokenizer and the synthetic triplet generator.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import dask
import numpy as np
import torch

from vlsatools import audio_frontend as af
from vlsatools.config import DataConfig
from vlsatools.tripletfile import TripletFile
from vlsatools.util.seeding import philox

logger = logging.getLogger(__name__)

PAD, MASK, UNK = 0, 1, 2
RESERVED_TOKENS = ["[PAD]", "[MASK]", "[UNK]"]

# Synthetic generator layout
N_SLOTS = 3  # latent slots shared by the three modalities
SLOT_VALUES = 4
N_FILLERS = 6
SYNTHETIC_MODES = ("correlated", "random")
AUDIO_SOURCES = ("template", "waveform")
WAVEFORM_RATE = 22050


@dataclass
class Vocab:
    """
    Token -> id map. Ids are dense in [0, len); 0, 1, 2 are PAD, MASK, UNK.
    """

    token_to_id: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, token in enumerate(RESERVED_TOKENS):
            if self.token_to_id.setdefault(token, i) != i:
                raise ValueError(f"reserved token {token} must have id {i}")
        if sorted(self.token_to_id.values()) != list(range(len(self.token_to_id))):
            raise ValueError("vocab ids must be dense in [0, size)")
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    @classmethod
    def from_words(cls, words) -> "Vocab":
        """Dense vocab over ``words`` (first-occurrence order) after reserved ids."""
        mapping = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for word in words:
            word = word.lower()
            if word.upper() in RESERVED_TOKENS:
                raise ValueError(f"{word!r} collides with a reserved token")
            if word not in mapping:
                mapping[word] = len(mapping)
        return cls(mapping)

    def __len__(self):
        return len(self.token_to_id)

    def get(self, word: str) -> int:
        return self.token_to_id.get(word, UNK)


def tokenize(text: str, vocab: Vocab, max_tokens: int) -> np.ndarray:
    """
    Lowercase, whitespace-split, map to ids (UNK if absent), truncate to
    ``max_tokens`` and right-pad with PAD.
    """
    if len(vocab) == 0:
        raise ValueError("empty vocab")
    ids = [vocab.get(w) for w in text.lower().split()][:max_tokens]
    out = np.full(max_tokens, PAD, dtype=np.int32)
    out[: len(ids)] = ids
    return out


def detokenize(ids, vocab: Vocab) -> str:
    return " ".join(vocab.id_to_token[int(i)] for i in ids if int(i) != PAD)


@dataclass(frozen=True, eq=False)
class Triplet:
    """
    One synchronized (video, caption, audio) sample. Arrays are read-only.
    """

    id: str
    video: np.ndarray  # V x 3 x H x W in [0, 1]
    tokens: np.ndarray  # S ids, trailing PADs
    spectrogram: np.ndarray  # T x F
    latent_class: Optional[int] = None

    def __post_init__(self):
        for name in ("video", "tokens", "spectrogram"):
            getattr(self, name).setflags(write=False)

    def validate(self, data_config: DataConfig):
        """Raise ValueError if shapes/ids disagree with ``data_config``."""
        expected = TripletFile().expected_shapes(data_config)
        actual = {
            "video": self.video.shape,
            "text": self.tokens.shape,
            "audio": self.spectrogram.shape,
        }
        for modality, shape in expected.items():
            if tuple(actual[modality]) != tuple(shape):
                raise ValueError(
                    f"{self.id}: {modality} shape {actual[modality]} "
                    f"!= expected {shape}"
                )
        vocab_size = data_config.vocab_size
        if self.tokens.min(initial=0) < 0 or self.tokens.max(initial=0) >= vocab_size:
            raise ValueError(f"{self.id}: token ids outside [0, {vocab_size})")
        if np.any(np.diff((self.tokens == PAD).astype(int)) < 0):
            raise ValueError(f"{self.id}: PAD tokens are not trailing")

    @property
    def n_text(self) -> int:
        """Number of non-PAD tokens."""
        return int(np.count_nonzero(self.tokens != PAD))

    def equals(self, other: "Triplet") -> bool:
        return (
            self.id == other.id
            and self.latent_class == other.latent_class
            and np.array_equal(self.video, other.video)
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.spectrogram, other.spectrogram)
        )


@dataclass
class Dataset:
    """
    Ordered triplets plus the vocab and configuration they were built with.
    """

    triplets: list
    vocab: Vocab
    data_config: DataConfig
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.triplets)

    def __getitem__(self, i):
        return self.triplets[i]

    def __iter__(self):
        return iter(self.triplets)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            [self.triplets[i] for i in indices],
            self.vocab,
            self.data_config,
            dict(self.metadata),
        )


@dataclass
class TripletBatch:
    video: torch.Tensor  # B x V x 3 x H x W
    tokens: torch.Tensor  # B x S (long)
    spectrogram: torch.Tensor  # B x T x F
    ids: list

    def __len__(self):
        return len(self.ids)

    def to(self, dtype) -> "TripletBatch":
        return TripletBatch(
            self.video.to(dtype), self.tokens, self.spectrogram.to(dtype), self.ids
        )


def collate_triplets(triplets, dtype=torch.float32) -> TripletBatch:
    return TripletBatch(
        video=torch.as_tensor(np.stack([t.video for t in triplets]), dtype=dtype),
        tokens=torch.as_tensor(np.stack([t.tokens for t in triplets]).astype(np.int64)),
        spectrogram=torch.as_tensor(
            np.stack([t.spectrogram for t in triplets]), dtype=dtype
        ),
        ids=[t.id for t in triplets],
    )


def synthetic_words(k_classes: int) -> list:
    """Word list of the synthetic corpus: topic words, slot words, fillers."""
    topics = [f"topic{c}" for c in range(k_classes)]
    slots = [f"slot{j}_{z}" for j in range(N_SLOTS) for z in range(SLOT_VALUES)]
    fillers = [f"filler{j}" for j in range(N_FILLERS)]
    return topics + slots + fillers


def _video(cls, slots, k_classes, data_config, rng):
    V, H, W = data_config.n_frames, data_config.height, data_config.width
    y, x = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    color = 0.5 + 0.5 * np.cos(2 * np.pi * (cls / k_classes + np.arange(3) / 3.0))
    frames = np.empty((V, 3, H, W))
    for f in range(V):
        drift = 0.5 * np.pi * f / V
        pattern = np.zeros((H, W))
        for j, z in enumerate(slots):
            theta = np.pi * (cls + j / N_SLOTS) / k_classes
            freq = 1 + z + j * SLOT_VALUES / 2
            pattern += np.cos(
                2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + drift
            )
        pattern /= N_SLOTS
        frames[f] = 0.5 + 0.35 * color[:, None, None] * pattern[None]
    frames += rng.normal(0.0, 0.05, size=frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _spectrogram_template(cls, slots, k_classes, data_config, rng):
    T, F = data_config.n_time, data_config.n_freq
    freq = np.arange(F)
    width = max(F / (4.0 * k_classes), 1.0)
    profile = np.exp(-0.5 * ((freq - (cls + 0.5) * F / k_classes) / width) ** 2)
    for j, z in enumerate(slots):
        centre = (j * SLOT_VALUES + z + 0.5) * F / (N_SLOTS * SLOT_VALUES)
        profile = profile + 0.5 * np.exp(-0.5 * (freq - centre) ** 2)
    envelope = 1.0 + 0.3 * np.cos(2 * np.pi * (1 + slots[0]) * np.arange(T) / T)
    spec = envelope[:, None] * profile[None, :]
    spec += rng.normal(0.0, 0.1, size=spec.shape)
    return spec.astype(np.float32)


def _spectrogram_waveform(cls, slots, k_classes, data_config, rng):
    n = 2 * af.clip_length(data_config.n_time)
    t = np.arange(n) / WAVEFORM_RATE
    class_tones = np.geomspace(150.0, 3000.0, k_classes)
    slot_tones = np.geomspace(200.0, 4000.0, N_SLOTS * SLOT_VALUES)
    signal = np.sin(2 * np.pi * class_tones[cls] * t)
    for j, z in enumerate(slots):
        am = 1.0 + 0.5 * np.cos(2 * np.pi * (1 + j) * t / t[-1])
        signal += 0.5 * am * np.sin(2 * np.pi * slot_tones[j * SLOT_VALUES + z] * t)
    signal += rng.normal(0.0, 0.05, size=n)
    spec = af.waveform_to_spectrogram(
        af.Waveform(signal, WAVEFORM_RATE),
        n_frames=data_config.n_time,
        n_bins=data_config.n_freq,
    )
    return spec.values.astype(np.float32)


def _caption(cls, slots, data_config, rng):
    content = [f"topic{cls}"] + [f"slot{j}_{z}" for j, z in enumerate(slots)]
    max_tokens = data_config.max_tokens
    n_words = int(rng.integers(min(len(content), max_tokens), max_tokens + 1))
    n_fill = max(n_words - len(content), 0)
    words = list(content)
    for _ in range(n_fill):
        filler = f"filler{int(rng.integers(N_FILLERS))}"
        words.insert(int(rng.integers(0, len(words) + 1)), filler)
    return " ".join(words)


def _latent(rng, k_classes):
    cls = int(rng.integers(k_classes))
    return cls, [int(z) for z in rng.integers(0, SLOT_VALUES, N_SLOTS)]


def make_synthetic_triplet(
    index, k_classes, seed, mode, data_config, vocab, audio="template"
):
    """
    Build sample ``index``; depends only on (index, k_classes, seed, mode).
    """
    sample_id = TripletFile().make_sample_id(index)
    rng = philox(seed, mode, index)
    if mode == "correlated":
        latents = dict.fromkeys(("video", "text", "audio"), _latent(rng, k_classes))
        latent_class = latents["video"][0]
    else:
        latents = {m: _latent(rng, k_classes) for m in ("video", "text", "audio")}
        latent_class = None
    make_audio = _spectrogram_waveform if audio == "waveform" else _spectrogram_template
    return Triplet(
        id=sample_id,
        video=_video(*latents["video"], k_classes, data_config, rng),
        tokens=tokenize(
            _caption(*latents["text"], data_config, rng), vocab, data_config.max_tokens
        ),
        spectrogram=make_audio(*latents["audio"], k_classes, data_config, rng),
        latent_class=latent_class,
    )


def generate_synthetic(
    n: int,
    k_classes: int,
    seed: int,
    mode: str = "correlated",
    data_config: DataConfig = None,
    audio: str = "template",
    threads: int = 1,
) -> Dataset:
    """
    Deterministic synthetic triplets.

    In ``correlated`` mode each sample draws one latent class and slot code
    shared by all three modalities: frames are class/slot keyed gratings,
    the spectrogram a class band plus slot bumps, the caption the class and
    slot words among filler words. In ``random`` mode every modality draws its
    own latent.

    Parameters
    ----------
    n: number of samples (>= 1)
    k_classes: number of latent classes (>= 2)
    seed: integer seed
    mode: "correlated" or "random"
    data_config: array sizes (full-scale defaults when omitted)
    audio: "template" draws spectrograms directly, "waveform" synthesizes
        tones and runs them through the audio front end
    threads: > 1 builds samples in parallel with dask

    Returns
    -------
    _: Dataset of ``n`` triplets with the synthetic vocab
    """
    data_config = data_config or DataConfig()
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if k_classes < 2:
        raise ValueError(f"k_classes must be >= 2, got {k_classes}")
    if mode not in SYNTHETIC_MODES:
        raise ValueError(f"mode must be one of {SYNTHETIC_MODES}, got {mode!r}")
    if audio not in AUDIO_SOURCES:
        raise ValueError(f"audio must be one of {AUDIO_SOURCES}, got {audio!r}")
    words = synthetic_words(k_classes)
    if len(words) + len(RESERVED_TOKENS) > data_config.vocab_size:
        raise ValueError(
            f"{k_classes} classes need {len(words) + len(RESERVED_TOKENS)} vocab ids, "
            f"vocab_size is {data_config.vocab_size}"
        )
    vocab = Vocab.from_words(words)
    args = (k_classes, seed, mode, data_config, vocab, audio)
    if threads > 1:
        tasks = [dask.delayed(make_synthetic_triplet)(i, *args) for i in range(n)]
        triplets = list(dask.compute(*tasks, scheduler="threads", num_workers=threads))
    else:
        triplets = [make_synthetic_triplet(i, *args) for i in range(n)]
    logger.info(
        "generated %d %s triplets (%d classes, seed %d)", n, mode, k_classes, seed
    )
    metadata = {"mode": mode, "classes": k_classes, "seed": seed, "audio": audio}
    return Dataset(triplets, vocab, data_config, metadata)
