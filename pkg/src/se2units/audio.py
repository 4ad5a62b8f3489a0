"""Audio I/O, resampling, and the STFT/iSTFT pair used by every other module."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly


class MalformedWavError(ValueError):
    """The file is not a parseable RIFF/WAVE container."""


class UnsupportedWavError(ValueError):
    """The file is valid RIFF/WAVE but not 16-bit integer PCM."""


@dataclass
class AudioBuffer:
    """Mono audio: float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters: power-of-two FFT size, hop dividing it, hann window."""

    fft_size: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.hop <= 0 or self.hop > self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if self.fft_size % self.hop:
            raise ValueError("hop must divide fft_size for the reconstruction guarantee")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class ComplexSpectrogram:
    """One-sided STFT: T x F complex matrix plus the config and source length."""

    bins: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int = 16000

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2:
            raise ValueError(f"bins must be a T x F matrix, got shape {self.bins.shape}")
        if self.bins.shape[0] < 1:
            raise ValueError("spectrogram must have at least one frame")
        if self.bins.shape[1] != self.config.num_bins:
            raise ValueError(
                f"F={self.bins.shape[1]} inconsistent with fft_size "
                f"{self.config.fft_size} (expected {self.config.num_bins})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape


def hann_window(n: int) -> np.ndarray:
    """Hann window with nonzero endpoints (MATLAB hanning convention).

    The nonzero endpoints are what make the non-centered analysis/synthesis
    round trip exact everywhere, including the first hop of samples that only
    frame 0 covers.
    """
    k = np.arange(1, n + 1, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (n + 1))


def num_frames(length: int, cfg: StftConfig) -> int:
    if length <= cfg.fft_size:
        return 1
    return 1 + int(np.ceil((length - cfg.fft_size) / cfg.hop))


# ---------------------------------------------------------------------------
# WAV I/O (RIFF/WAVE, 16-bit PCM only; unknown chunks skipped)
# ---------------------------------------------------------------------------


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM RIFF/WAVE file; multichannel input is mono-averaged.

    Integer samples are scaled by 1/32768. Raises FileNotFoundError for a
    missing file, MalformedWavError for a broken container, and
    UnsupportedWavError for non-PCM or non-16-bit encodings.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < 12 or data[:4] != b"RIFF":
        raise MalformedWavError(f"{path}: missing RIFF header")
    if data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a WAVE file")

    fmt = None
    pcm_bytes = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise MalformedWavError(f"{path}: truncated data chunk")
            pcm_bytes = body
        # unknown chunks skipped; chunks are word-aligned
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None or pcm_bytes is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: audio format {audio_format} is not PCM")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: {bits}-bit PCM unsupported (16-bit only)")
    if channels < 1:
        raise MalformedWavError(f"{path}: zero channels")

    frame_count = len(pcm_bytes) // (2 * channels)
    ints = np.frombuffer(pcm_bytes[: frame_count * 2 * channels], dtype="<i2")
    samples = ints.astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(frame_count, channels).mean(axis=1)
    return AudioBuffer(samples, sample_rate)


def write_wav(path, buf: AudioBuffer) -> int:
    """Write mono 16-bit PCM. Out-of-range samples are clamped to [-1, 1].

    Returns the number of samples that needed clamping.
    """
    if len(buf.samples) == 0:
        raise ValueError("refusing to write an empty buffer")

    samples = buf.samples
    clamped = int(np.count_nonzero((samples < -1.0) | (samples > 1.0)))
    scaled = np.rint(np.clip(samples, -1.0, 1.0) * 32768.0)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")

    pcm = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, buf.sample_rate, buf.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    with open(path, "wb") as fh:
        fh.write(header + pcm)
    return clamped


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling to target_rate.

    Output length is round(len * target/source); the windowed-sinc filtering
    is delegated to scipy's polyphase resampler.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)

    g = np.gcd(buf.sample_rate, target_rate)
    up, down = target_rate // g, buf.sample_rate // g
    out = resample_poly(buf.samples, up, down)

    target_len = int(round(len(buf.samples) * target_rate / buf.sample_rate))
    if len(out) < target_len:
        out = np.concatenate([out, np.zeros(target_len - len(out))])
    return AudioBuffer(out[:target_len], target_rate)


# ---------------------------------------------------------------------------
# STFT / iSTFT
# ---------------------------------------------------------------------------


def stft(buf: AudioBuffer, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT with tail zero-padding.

    Frames start at multiples of the hop; the signal is zero-padded so the
    last frame is complete, giving T = 1 + ceil((len - fft_size)/hop) frames
    (T = 1 for inputs shorter than one window).
    """
    n = len(buf.samples)
    if n < 1:
        raise ValueError("cannot analyse an empty buffer")

    frames = num_frames(n, cfg)
    padded_len = (frames - 1) * cfg.hop + cfg.fft_size
    padded = np.zeros(padded_len)
    padded[:n] = buf.samples

    window = hann_window(cfg.fft_size)
    idx = np.arange(frames)[:, None] * cfg.hop + np.arange(cfg.fft_size)[None, :]
    bins = np.fft.rfft(padded[idx] * window, axis=1)
    return ComplexSpectrogram(bins, cfg, n, buf.sample_rate)


def istft(spec: ComplexSpectrogram) -> AudioBuffer:
    """Weighted overlap-add inverse, truncated to the recorded source length.

    Frames are synthesis-windowed with the analysis hann window and the sum is
    normalized by the accumulated squared window, which reconstructs stft()
    output exactly (the window is strictly positive, so the normalizer never
    vanishes).
    """
    cfg = spec.config
    frames, nbins = spec.bins.shape
    if nbins != cfg.num_bins:
        raise ValueError(f"bin count {nbins} inconsistent with fft_size {cfg.fft_size}")
    if spec.original_length < 1:
        raise ValueError("original_length must be positive")
    padded_len = (frames - 1) * cfg.hop + cfg.fft_size
    if spec.original_length > padded_len:
        raise ValueError(
            f"original_length {spec.original_length} exceeds frame coverage {padded_len}"
        )

    window = hann_window(cfg.fft_size)
    time_frames = np.fft.irfft(spec.bins, n=cfg.fft_size, axis=1)

    num = np.zeros(padded_len)
    den = np.zeros(padded_len)
    for t in range(frames):
        start = t * cfg.hop
        num[start:start + cfg.fft_size] += window * time_frames[t]
        den[start:start + cfg.fft_size] += window * window
    out = num / den
    return AudioBuffer(out[: spec.original_length], spec.sample_rate)
