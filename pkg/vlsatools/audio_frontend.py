"""
Waveform -> log-frequency spectrogram front end.

Pipeline: resample to 11025 Hz, fit the clip to exactly ``n_frames`` STFT
frames, Hann-windowed 1022-point STFT with hop 256 (no padding), remap the
512 linear bins onto logarithmically spaced bins, log1p, per-clip
standardization.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

logger = logging.getLogger(__name__)

TARGET_RATE = 11025
WINDOW = 1022
HOP = 256
N_BINS = WINDOW // 2 + 1  # 512 rows, 0..Nyquist
F_MIN = 30.0
DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # T x F, time-major
    scale: str = "log_freq"
    degenerate: bool = False  # standardization saw a constant clip

    def __post_init__(self):
        if self.scale not in ("linear_freq", "log_freq"):
            raise ValueError(f"unknown spectrogram scale {self.scale!r}")


def clip_length(n_frames: int, window: int = WINDOW, hop: int = HOP) -> int:
    """Samples needed for exactly ``n_frames`` unpadded frames."""
    return window + (n_frames - 1) * hop


def n_stft_frames(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    return (n_samples - window) // hop + 1


def resample(w: Waveform, target_rate: float = TARGET_RATE) -> Waveform:
    """
    Linear-interpolation resampling.

    Parameters
    ----------
    w: input waveform
    target_rate: output sample rate in Hz

    Returns
    -------
    _: waveform of round(len * target / src) samples at ``target_rate``
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if len(w) == 0:
        raise ValueError("cannot resample an empty waveform")
    if target_rate == w.sample_rate:
        return Waveform(np.array(w.samples, copy=True), target_rate)
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(len(w)) / w.sample_rate
    samples = np.interp(t_out, t_in, np.asarray(w.samples, dtype=np.float64))
    return Waveform(samples, target_rate)


def fit_clip_length(samples: np.ndarray, length: int) -> np.ndarray:
    """
    Center-crop a longer clip, loop-pad a shorter one, to exactly ``length``.
    """
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise ValueError("cannot fit an empty clip")
    if len(samples) >= length:
        start = (len(samples) - length) // 2
        return samples[start : start + length]
    return np.resize(samples, length)


def stft_magnitude(w: Waveform, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """
    Magnitude STFT with a periodic Hann window and no padding.

    Returns
    -------
    _: (window // 2 + 1) x n_frames array, n_frames = (len - window) // hop + 1
    """
    if len(w) < window:
        raise ValueError(
            f"waveform has {len(w)} samples, at least {window} are required"
        )
    x = np.asarray(w.samples, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    taper = get_window("hann", window, fftbins=True)
    spectrum = np.fft.rfft(frames * taper, n=window, axis=1)
    return np.abs(spectrum).T


def log_frequency_weights(
    n_bins: int = 256,
    sample_rate: float = TARGET_RATE,
    n_src: int = N_BINS,
    window: int = WINDOW,
    f_min: float = F_MIN,
) -> np.ndarray:
    """
    Interpolation matrix (n_bins x n_src) mapping linear STFT bins onto
    ``n_bins`` log-spaced centre frequencies over [f_min, Nyquist].
    Each row holds the two linear-interpolation weights of its neighbours.
    """
    nyquist = sample_rate / 2.0
    targets = np.geomspace(f_min, nyquist, n_bins)
    position = np.clip(targets * window / sample_rate, 0, n_src - 1)
    lower = np.floor(position).astype(int)
    upper = np.minimum(lower + 1, n_src - 1)
    frac = position - lower
    weights = np.zeros((n_bins, n_src))
    rows = np.arange(n_bins)
    np.add.at(weights, (rows, lower), 1.0 - frac)
    np.add.at(weights, (rows, upper), frac)
    return weights


def standardize(values: np.ndarray):
    """
    Per-clip zero-mean / unit-std. A (near) constant clip maps to zeros.

    Returns
    -------
    values, degenerate
    """
    std = values.std()
    if std < DEGENERATE_STD:
        return np.zeros_like(values), True
    return (values - values.mean()) / std, False


def to_log_frequency(
    spec: np.ndarray,
    n_bins: int = 256,
    sample_rate: float = TARGET_RATE,
    f_min: float = F_MIN,
    compress: bool = True,
) -> Spectrogram:
    """
    Remap a (512 x T) magnitude spectrogram to a time-major T x n_bins
    log-frequency spectrogram.

    Parameters
    ----------
    spec: magnitude from ``stft_magnitude``
    n_bins: number of log-spaced output bins
    sample_rate: rate the STFT was taken at
    f_min: lowest output frequency in Hz
    compress: apply log1p and per-clip standardization; ``False`` returns the
        raw remapped magnitudes

    Returns
    -------
    _: Spectrogram with ``values`` T x n_bins
    """
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[0] != N_BINS:
        raise ValueError(f"expected a {N_BINS} x T spectrogram, got shape {spec.shape}")
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrogram contains non-finite values")
    remapped = (log_frequency_weights(n_bins, sample_rate, f_min=f_min) @ spec).T
    if not compress:
        return Spectrogram(remapped, scale="log_freq")
    values, degenerate = standardize(np.log1p(remapped))
    if degenerate:
        logger.debug("degenerate spectrogram, standardized to zeros")
    return Spectrogram(values, scale="log_freq", degenerate=degenerate)


def waveform_to_spectrogram(
    w: Waveform,
    n_frames: int = 256,
    n_bins: int = 256,
    target_rate: float = TARGET_RATE,
) -> Spectrogram:
    """
    Full front end: resample, fit to ``n_frames`` frames, STFT, log-frequency.
    """
    w = resample(w, target_rate)
    w = Waveform(fit_clip_length(w.samples, clip_length(n_frames)), w.sample_rate)
    return to_log_frequency(stft_magnitude(w), n_bins=n_bins, sample_rate=target_rate)


def read_waveform(path, sample_rate: float) -> Waveform:
    """
    Read a headerless little-endian float32 waveform file.
    The rate comes from the dataset manifest (or the caller).
    """
    samples = np.fromfile(path, dtype="<f4").astype(np.float64)
    if samples.size == 0:
        raise ValueError(f"waveform file {path} is empty")
    return Waveform(samples, sample_rate)
