"""Additive signal model and SNR-controlled corpus simulation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav
from .manifest import ManifestRow, read_manifest, write_manifest


@dataclass(frozen=True)
class MixtureSpec:
    """SNR range (dB), base seed, and the joint peak ceiling."""

    snr_low: float = -35.0
    snr_high: float = -15.0
    seed: int = 0
    peak_ceiling: float = 0.99

    def __post_init__(self):
        if self.snr_low > self.snr_high:
            raise ValueError(f"snr_low {self.snr_low} > snr_high {self.snr_high}")
        if not 0 < self.peak_ceiling <= 1.0:
            raise ValueError(f"peak_ceiling must be in (0, 1], got {self.peak_ceiling}")


@dataclass
class MixtureRecord:
    """One simulated mixture: x = s + n holds sample-for-sample."""

    mixture: AudioBuffer
    clean: AudioBuffer
    scaled_noise: AudioBuffer
    achieved_snr: float
    noise_gain: float


def rms(buf: AudioBuffer) -> float:
    if len(buf.samples) == 0:
        raise ValueError("rms of an empty buffer")
    return float(np.sqrt(np.mean(np.square(buf.samples))))


def _crop_noise(noise: np.ndarray, length: int, rng: np.random.Generator | None) -> np.ndarray:
    """Tile short noise, then crop `length` samples from a (seeded) offset."""
    if len(noise) < length:
        reps = int(np.ceil(length / len(noise)))
        noise = np.tile(noise, reps)
    max_offset = len(noise) - length
    offset = int(rng.integers(0, max_offset + 1)) if rng is not None and max_offset > 0 else 0
    return noise[offset:offset + length]


def mix_at_snr(
    clean: AudioBuffer,
    noise: AudioBuffer,
    snr_db: float,
    peak_ceiling: float = 0.99,
    rng: np.random.Generator | None = None,
) -> MixtureRecord:
    """Mix noise into clean speech at the requested SNR.

    The noise is cropped to the clean length (random offset drawn from `rng`
    if given, tiling first when it is shorter), scaled so that
    20*log10(rms(clean)/rms(noise)) equals `snr_db`, and added. If the
    mixture peak exceeds `peak_ceiling`, all three signals are rescaled by
    the same factor, which leaves the SNR untouched.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: clean {clean.sample_rate} vs noise {noise.sample_rate}"
        )
    clean_rms = rms(clean)
    if clean_rms == 0.0:
        raise ValueError("clean signal is silent")

    noise_crop = _crop_noise(noise.samples, len(clean.samples), rng)
    noise_rms = float(np.sqrt(np.mean(np.square(noise_crop))))
    if noise_rms == 0.0:
        raise ValueError("noise signal is silent")

    gain = (clean_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)
    clean_out = clean.samples.copy()
    noise_out = gain * noise_crop
    mixture = clean_out + noise_out

    peak = float(np.max(np.abs(mixture)))
    if peak > peak_ceiling:
        factor = peak_ceiling / peak
        clean_out = clean_out * factor
        noise_out = noise_out * factor
        mixture = clean_out + noise_out

    achieved = 20.0 * np.log10(
        np.sqrt(np.mean(np.square(clean_out))) / np.sqrt(np.mean(np.square(noise_out)))
    )
    sr = clean.sample_rate
    return MixtureRecord(
        mixture=AudioBuffer(mixture, sr),
        clean=AudioBuffer(clean_out, sr),
        scaled_noise=AudioBuffer(noise_out, sr),
        achieved_snr=float(achieved),
        noise_gain=float(gain),
    )


# ---------------------------------------------------------------------------
# Corpus-scale driver
# ---------------------------------------------------------------------------


def utterance_rng(seed: int, utt_id: str) -> np.random.Generator:
    """Per-utterance generator derived from (seed, utt_id); process-stable."""
    digest = hashlib.sha256(f"{seed}:{utt_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def draw_simulation_params(
    spec: MixtureSpec, utt_id: str, n_noise_files: int
) -> tuple[int, float, np.random.Generator]:
    """Draw (noise file index, snr dB, leftover rng for the crop offset)."""
    rng = utterance_rng(spec.seed, utt_id)
    noise_idx = int(rng.integers(0, n_noise_files))
    snr = float(rng.uniform(spec.snr_low, spec.snr_high))
    return noise_idx, snr, rng


def simulate_corpus(
    clean_manifest,
    noise_manifest,
    spec: MixtureSpec,
    out_dir,
) -> tuple[list[ManifestRow], list[str]]:
    """Simulate one mixture per clean utterance.

    Writes mixture and (jointly rescaled) clean WAVs under out_dir plus a
    `manifest.tsv` manifest with `clean=` and `snr=` keys. Per-file failures
    are skipped and returned; the call fails only if nothing was produced.
    """
    clean_rows = read_manifest(clean_manifest)
    noise_rows = read_manifest(noise_manifest)
    if not clean_rows:
        raise ValueError(f"empty clean manifest: {clean_manifest}")
    if not noise_rows:
        raise ValueError(f"empty noise manifest: {noise_manifest}")

    out_dir = Path(out_dir)
    mix_dir = out_dir / "mixtures"
    clean_dir = out_dir / "clean"
    mix_dir.mkdir(parents=True, exist_ok=True)
    clean_dir.mkdir(parents=True, exist_ok=True)

    rows: list[ManifestRow] = []
    failures: list[str] = []
    for row in clean_rows:
        try:
            noise_idx, snr, rng = draw_simulation_params(spec, row.utt_id, len(noise_rows))
            clean = read_wav(row.path)
            noise = read_wav(noise_rows[noise_idx].path)
            rec = mix_at_snr(clean, noise, snr, spec.peak_ceiling, rng)
            mix_path = mix_dir / f"{row.utt_id}.wav"
            clean_path = clean_dir / f"{row.utt_id}.wav"
            write_wav(mix_path, rec.mixture)
            write_wav(clean_path, rec.clean)
            rows.append(ManifestRow(
                row.utt_id, str(mix_path),
                {"clean": str(clean_path), "snr": f"{rec.achieved_snr:.6f}"},
            ))
        except Exception as exc:  # per-file failure: record and continue
            failures.append(f"{row.utt_id}: {exc}")

    if not rows:
        raise RuntimeError(f"no mixtures produced ({len(failures)} failures)")
    write_manifest(out_dir / "manifest.tsv", rows)
    return rows, failures
