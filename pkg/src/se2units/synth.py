"""Synthetic desk-scale test signals: speech-like utterances and noise.

Used by the bundled mini-corpus, the test suite, and the README demo. The
"speech" is a harmonic source with a wandering pitch, formant-shaped
spectrum, and syllable-rate amplitude gating — enough structure for the
VAD, STOI, and unit-agreement checks to behave like they would on speech.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .manifest import ManifestRow, write_manifest

_FORMANTS = ((500.0, 120.0), (1500.0, 180.0), (2500.0, 250.0))


def _formant_weight(freq: np.ndarray) -> np.ndarray:
    w = np.zeros_like(freq)
    for center, width in _FORMANTS:
        w += np.exp(-0.5 * ((freq - center) / width) ** 2)
    return w + 0.05


def _syllable_envelope(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Alternating voiced bursts and gaps with 10 ms raised-cosine edges."""
    env = np.zeros(n)
    edge = int(0.010 * sr)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, edge))
    pos = int(rng.uniform(0.02, 0.12) * sr)
    while pos < n:
        burst = int(rng.uniform(0.12, 0.30) * sr)
        gap = int(rng.uniform(0.05, 0.15) * sr)
        end = min(pos + burst, n)
        env[pos:end] = 1.0
        if end - pos > 2 * edge:
            env[pos:pos + edge] = ramp
            env[end - edge:end] = ramp[::-1]
        pos = end + gap
    return env


def speech_like(duration: float, sample_rate: int = 16000, seed: int = 0) -> AudioBuffer:
    """Harmonic pseudo-speech: pitch glide, formant spectrum, syllable gating."""
    rng = np.random.default_rng(seed)
    n = int(duration * sample_rate)
    t = np.arange(n) / sample_rate

    base = rng.uniform(100.0, 180.0)
    f0 = base * 2.0 ** (0.25 * np.sin(2.0 * np.pi * rng.uniform(0.3, 0.9) * t
                                      + rng.uniform(0, 2 * np.pi)))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    sig = np.zeros(n)
    n_harm = int(4000.0 / base)
    for h in range(1, n_harm + 1):
        freq = h * base
        if freq > sample_rate / 2:
            break
        amp = _formant_weight(np.array(freq))[()] / h
        sig += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    env = _syllable_envelope(n, sample_rate, rng)
    sig = sig * env + 0.002 * rng.standard_normal(n)
    sig *= 0.7 / np.max(np.abs(sig))
    return AudioBuffer(sig, sample_rate)


def noise_signal(kind: str, duration: float, sample_rate: int = 16000,
                 seed: int = 0) -> AudioBuffer:
    """White or pink noise, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n = int(duration * sample_rate)
    if kind == "white":
        sig = rng.standard_normal(n)
    elif kind == "pink":
        spectrum = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spectrum[1:] /= np.sqrt(freqs[1:])
        spectrum[0] = 0.0
        sig = np.fft.irfft(spectrum, n=n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    sig *= 0.5 / np.max(np.abs(sig))
    return AudioBuffer(sig, sample_rate)


def make_mini_corpus(root, n_clean: int = 4, n_noise: int = 2,
                     duration: float = 2.0, sample_rate: int = 16000,
                     seed: int = 0) -> tuple[Path, Path]:
    """Write a tiny clean/noise corpus and its manifests.

    Returns (clean_manifest_path, noise_manifest_path).
    """
    root = Path(root)
    clean_dir = root / "clean_src"
    noise_dir = root / "noise_src"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)

    clean_rows = []
    for i in range(n_clean):
        utt_id = f"utt{i:03d}"
        path = clean_dir / f"{utt_id}.wav"
        write_wav(path, speech_like(duration, sample_rate, seed=seed + i))
        clean_rows.append(ManifestRow(utt_id, str(path)))

    noise_rows = []
    kinds = ("white", "pink")
    for i in range(n_noise):
        noise_id = f"noise{i:03d}"
        path = noise_dir / f"{noise_id}.wav"
        write_wav(path, noise_signal(kinds[i % len(kinds)], duration + 1.0,
                                     sample_rate, seed=seed + 100 + i))
        noise_rows.append(ManifestRow(noise_id, str(path)))

    clean_manifest = root / "clean.tsv"
    noise_manifest = root / "noise.tsv"
    write_manifest(clean_manifest, clean_rows)
    write_manifest(noise_manifest, noise_rows)
    return clean_manifest, noise_manifest
