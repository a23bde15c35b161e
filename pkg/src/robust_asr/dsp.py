"""Waveform-to-log-mel frontend.

Pipeline: first-order pre-emphasis, 25 ms Hamming frames at a 10 ms shift,
512-point power spectrum, 80 triangular mel filters over [80, 8000] Hz,
natural log with a 1e-8 floor.  All stages are pure functions of their
inputs, so the frontend is safe to call from any number of threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .exceptions import AudioTooShort, ConfigError, EmptyAudio

SAMPLE_RATE = 16000
FRAME_LEN = 400          # 25 ms at 16 kHz
FRAME_HOP = 160          # 10 ms at 16 kHz
N_FFT = 512              # smallest power of two >= FRAME_LEN
N_MELS = 80
MEL_FMIN_HZ = 80.0
MEL_FMAX_HZ = 8000.0
LOG_FLOOR = 1e-8
PRE_EMPHASIS = 0.97

_FEATURE_MAGIC = b"LMEL"


@dataclass
class WaveForm:
    """Mono PCM audio with a declared sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ConfigError(f"expected mono audio, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ConfigError("waveform contains NaN or Inf")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class LogMelSpectrogram:
    """T'x80 matrix of log mel-filterbank energies."""

    values: np.ndarray
    frame_shift_s: float = 0.010
    frame_len_s: float = 0.025

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != N_MELS:
            raise ConfigError(f"expected (T', {N_MELS}) features, got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def num_frames(n_samples: int) -> int:
    """Frame count for an n-sample signal: floor((T - 400)/160) + 1."""
    if n_samples < FRAME_LEN:
        return 0
    return (n_samples - FRAME_LEN) // FRAME_HOP + 1


def pre_emphasize(wave: WaveForm, coeff: float = PRE_EMPHASIS) -> WaveForm:
    """Apply the high-pass difference x'[t] = x[t] - coeff * x[t-1], x[-1] = 0."""
    x = wave.samples
    if x.size == 0:
        raise EmptyAudio("cannot pre-emphasize an empty signal")
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - coeff * x[:-1]
    return WaveForm(out, wave.sample_rate)


def hamming_window(length: int = FRAME_LEN) -> np.ndarray:
    """Hamming window w[n] = 0.54 - 0.46 cos(2 pi n / (length - 1))."""
    return np.hamming(length)


def frame_and_window(wave: WaveForm) -> np.ndarray:
    """Slice a waveform into Hamming-windowed frames of 400 samples, hop 160."""
    x = wave.samples
    if x.size < FRAME_LEN:
        raise AudioTooShort(f"need at least {FRAME_LEN} samples, got {x.size}")
    n = num_frames(x.size)
    strided = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::FRAME_HOP][:n]
    return strided * hamming_window()


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = MEL_FMIN_HZ,
    fmax: float = MEL_FMAX_HZ,
) -> np.ndarray:
    """Triangular mel filter matrix of shape (n_mels, n_fft // 2 + 1).

    Band edges are spaced uniformly on the HTK mel scale and the triangles
    are evaluated at the continuous FFT bin frequencies, so narrow low
    filters keep nonzero weight instead of snapping to integer bins.
    """
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, bin_hz.size))
    for k in range(n_mels):
        left, center, right = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        fb[k] = np.maximum(0.0, np.minimum(up, down))
    return fb


def filter_center_frequencies(
    n_mels: int = N_MELS, fmin: float = MEL_FMIN_HZ, fmax: float = MEL_FMAX_HZ
) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges_hz[1:-1]


def log_mel(frames: np.ndarray, filterbank: np.ndarray | None = None) -> LogMelSpectrogram:
    """Map windowed frames to floored log mel-filterbank energies."""
    frames = np.asarray(frames, dtype=np.float64)
    if filterbank is None:
        filterbank = mel_filterbank()
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=-1)
    power = np.abs(spectrum) ** 2
    mel_energy = power @ filterbank.T
    return LogMelSpectrogram(np.log(np.maximum(mel_energy, LOG_FLOOR)))


def featurize(wave: WaveForm) -> LogMelSpectrogram:
    """Full frontend: pre-emphasis, framing/windowing, log mel filterbank."""
    return log_mel(frame_and_window(pre_emphasize(wave)))


def read_wav(path) -> WaveForm:
    """Read a mono 16 kHz RIFF WAV (PCM16 or float32); no resampling."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ConfigError(f"expected {SAMPLE_RATE} Hz audio, got {rate} Hz: {path}")
    if data.ndim != 1:
        raise ConfigError(f"expected mono audio, got {data.ndim} channels: {path}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ConfigError(f"unsupported WAV sample format {data.dtype}: {path}")
    return WaveForm(samples, rate)


def write_wav(path, wave: WaveForm) -> None:
    """Write a waveform as PCM16, clipping to [-1, 1)."""
    clipped = np.clip(wave.samples, -1.0, 32767.0 / 32768.0)
    wavfile.write(path, wave.sample_rate, (clipped * 32768.0).astype(np.int16))


def save_features(path, features: LogMelSpectrogram) -> None:
    """Write features as magic 'LMEL', u32 rows, u32 cols, row-major LE float64."""
    rows, cols = features.values.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(features.values.astype("<f8").tobytes(order="C"))


def load_features(path) -> LogMelSpectrogram:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FEATURE_MAGIC:
            raise ConfigError(f"bad feature file magic {magic!r}: {path}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ConfigError(f"truncated feature file: {path}")
    return LogMelSpectrogram(data.reshape(rows, cols).astype(np.float64))
