"""Objective evaluation: Si-SDR, STOI intelligibility, and WER alignment counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer, hann_window, read_wav, resample
from .manifest import ManifestRow, read_manifest


@dataclass
class SiSdrBreakdown:
    """Optimal scaling alpha plus the energies behind the dB value."""

    alpha: float
    target_energy: float
    error_energy: float
    value: float


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def wer(self) -> float:
        return (self.substitutions + self.deletions + self.insertions) / self.ref_len


# ---------------------------------------------------------------------------
# Si-SDR
# ---------------------------------------------------------------------------


def si_sdr(reference: AudioBuffer, estimate: AudioBuffer,
           zero_mean: bool = False) -> SiSdrBreakdown:
    """Scale-invariant signal-to-distortion ratio in dB.

    alpha = <estimate, reference> / ||reference||^2; the value is
    10*log10(||alpha*ref||^2 / ||alpha*ref - estimate||^2). A perfect (up to
    scale) estimate returns +inf rather than a capped number. `zero_mean`
    removes the DC component of both signals first, making the value
    invariant to constant offsets of the estimate.
    """
    s = np.asarray(reference.samples, dtype=np.float64)
    s_hat = np.asarray(estimate.samples, dtype=np.float64)
    if len(s) != len(s_hat):
        raise ValueError(f"length mismatch: {len(s)} vs {len(s_hat)}")
    if zero_mean:
        s = s - s.mean()
        s_hat = s_hat - s_hat.mean()
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all-zero")

    alpha = float(np.dot(s_hat, s)) / ref_energy
    target = alpha * s
    target_energy = float(np.dot(target, target))
    error = target - s_hat
    error_energy = float(np.dot(error, error))

    # estimates that equal a rescaled reference up to float rounding (ratio
    # beyond ~280 dB) count as perfect
    if error_energy <= target_energy * 1e-28:
        value = math.inf
    elif target_energy == 0.0:
        value = -math.inf
    else:
        value = 10.0 * math.log10(target_energy / error_energy)
    return SiSdrBreakdown(alpha, target_energy, error_energy, value)


# ---------------------------------------------------------------------------
# STOI (classic variant)
# ---------------------------------------------------------------------------

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30          # 30 frames = 384 ms
_STOI_BETA = -15.0      # lower SDR clipping bound, dB
_STOI_DYN_RANGE = 40.0  # silent-frame energy range, dB
_EPS = np.finfo(np.float64).eps


def third_octave_bands(rate: int, nfft: int, n_bands: int, min_freq: float) -> np.ndarray:
    """Boolean one-third-octave band matrix over one-sided FFT bins."""
    f = np.linspace(0, rate, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    freq_low = min_freq * 2.0 ** ((2.0 * k - 1.0) / 6.0)
    freq_high = min_freq * 2.0 ** ((2.0 * k + 1.0) / 6.0)
    obm = np.zeros((n_bands, len(f)))
    for i in range(n_bands):
        lo_bin = int(np.argmin(np.square(f - freq_low[i])))
        hi_bin = int(np.argmin(np.square(f - freq_high[i])))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm


def _frame_starts(n: int, frame: int, hop: int) -> range:
    # Mirrors the reference implementation: the frame starting exactly at
    # n - frame is excluded.
    return range(0, n - frame, hop)


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames where the reference is >40 dB below its loudest frame.

    Both signals are re-assembled by overlap-adding the kept windowed frames,
    using the reference's activity mask for both.
    """
    w = hann_window(_STOI_FRAME)
    starts = list(_frame_starts(len(x), _STOI_FRAME, _STOI_HOP))
    if not starts:
        return np.zeros(0), np.zeros(0)
    x_frames = np.array([w * x[s:s + _STOI_FRAME] for s in starts])
    y_frames = np.array([w * y[s:s + _STOI_FRAME] for s in starts])

    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + _EPS)
    mask = energies > energies.max() - _STOI_DYN_RANGE
    x_frames, y_frames = x_frames[mask], y_frames[mask]

    n_out = (len(x_frames) - 1) * _STOI_HOP + _STOI_FRAME if len(x_frames) else 0
    x_out = np.zeros(n_out)
    y_out = np.zeros(n_out)
    for i in range(len(x_frames)):
        pos = i * _STOI_HOP
        x_out[pos:pos + _STOI_FRAME] += x_frames[i]
        y_out[pos:pos + _STOI_FRAME] += y_frames[i]
    return x_out, y_out


def _stoi_spectra(x: np.ndarray) -> np.ndarray:
    """Hann-windowed frames zero-padded to the 512-point FFT, (frames, 257)."""
    w = hann_window(_STOI_FRAME)
    starts = list(_frame_starts(len(x), _STOI_FRAME, _STOI_HOP))
    frames = np.array([w * x[s:s + _STOI_FRAME] for s in starts])
    return np.fft.rfft(frames, n=_STOI_NFFT, axis=1)


def stoi(reference: AudioBuffer, estimate: AudioBuffer) -> float:
    """Short-time objective intelligibility of `estimate` given `reference`.

    Classic variant: 10 kHz resampling, silent-frame removal over a 40 dB
    range, 256/128 hann STFT zero-padded to 512 bins, 15 one-third-octave
    bands from 150 Hz, per-band normalization and -15 dB SDR clipping over
    384 ms segments, and the mean of the band/segment correlations.
    """
    if len(reference.samples) != len(estimate.samples):
        raise ValueError(
            f"length mismatch: {len(reference.samples)} vs {len(estimate.samples)}"
        )
    x = resample(reference, _STOI_RATE).samples
    y = resample(estimate, _STOI_RATE).samples
    if len(x) < _STOI_SEG * _STOI_HOP:
        raise ValueError(
            f"input too short for STOI: {len(x)} samples at 10 kHz "
            f"(need >= {_STOI_SEG * _STOI_HOP})"
        )

    x, y = _remove_silent_frames(x, y)
    if len(x) == 0:
        raise ValueError("no active frames in the reference signal")

    x_spec = _stoi_spectra(x)
    y_spec = _stoi_spectra(y)
    if x_spec.shape[0] < _STOI_SEG:
        raise ValueError(
            f"too few active frames for STOI: {x_spec.shape[0]} < {_STOI_SEG}"
        )

    obm = third_octave_bands(_STOI_RATE, _STOI_NFFT, _STOI_BANDS, _STOI_MIN_FREQ)
    x_bands = np.sqrt(obm @ np.square(np.abs(x_spec)).T)   # (bands, frames)
    y_bands = np.sqrt(obm @ np.square(np.abs(y_spec)).T)

    clip_gain = 10.0 ** (-_STOI_BETA / 20.0)
    n_frames = x_bands.shape[1]
    total = 0.0
    count = 0
    for m in range(n_frames - _STOI_SEG + 1):
        x_seg = x_bands[:, m:m + _STOI_SEG]
        y_seg = y_bands[:, m:m + _STOI_SEG]
        alpha = np.linalg.norm(x_seg, axis=1, keepdims=True) / (
            np.linalg.norm(y_seg, axis=1, keepdims=True) + _EPS
        )
        y_prime = np.minimum(alpha * y_seg, x_seg * (1.0 + clip_gain))

        xc = x_seg - x_seg.mean(axis=1, keepdims=True)
        yc = y_prime - y_prime.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        total += float(((xc * yc).sum(axis=1) / denom).sum())
        count += _STOI_BANDS
    return total / count


# ---------------------------------------------------------------------------
# WER
# ---------------------------------------------------------------------------


def _tokens(seq) -> list[str]:
    if isinstance(seq, str):
        return seq.split()
    return list(seq)


def wer(reference, hypothesis) -> WerBreakdown:
    """Word error rate from a minimal Levenshtein alignment.

    Unit costs; alignment ties are resolved preferring substitution over
    insertion over deletion during backtrace. Accepts token lists or
    whitespace-separated strings.
    """
    ref = _tokens(reference)
    hyp = _tokens(hypothesis)
    if not ref:
        raise ValueError("empty reference")

    rows, cols = len(ref) + 1, len(hyp) + 1
    dist = np.zeros((rows, cols), dtype=np.int64)
    dist[:, 0] = np.arange(rows)
    dist[0, :] = np.arange(cols)
    for i in range(1, rows):
        for j in range(1, cols):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            ins = dist[i, j - 1] + 1
            dele = dist[i - 1, j] + 1
            dist[i, j] = min(sub, ins, dele)

    subs = ins = dels = 0
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerBreakdown(int(subs), int(dels), int(ins), len(ref))


# ---------------------------------------------------------------------------
# Corpus evaluation
# ---------------------------------------------------------------------------

METRIC_ORDER = ("si_sdr", "stoi", "wer")


@dataclass
class EvalReport:
    metrics: list[str]
    rows: list[tuple[str, dict[str, float]]]
    means: dict[str, float]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    infinite: dict[str, int] = field(default_factory=dict)

    def format(self) -> str:
        lines = ["\t".join(["utt_id", *self.metrics])]
        for utt_id, values in self.rows:
            cells = [utt_id] + [_fmt(values[m]) for m in self.metrics]
            lines.append("\t".join(cells))
        mean_cells = ["#mean"] + [_fmt(self.means[m]) for m in self.metrics]
        lines.append("\t".join(mean_cells))
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def _row_metrics(row: ManifestRow, metrics: list[str], estimate_key: str) -> dict[str, float]:
    values: dict[str, float] = {}
    needs_audio = any(m in ("si_sdr", "stoi") for m in metrics)
    if needs_audio:
        if "clean" not in row.attrs:
            raise ValueError("manifest row lacks a clean= reference")
        est_path = row.attrs.get(estimate_key, row.path)
        ref = read_wav(row.attrs["clean"])
        est = read_wav(est_path)
        if "si_sdr" in metrics:
            values["si_sdr"] = si_sdr(ref, est).value
        if "stoi" in metrics:
            values["stoi"] = stoi(ref, est)
    if "wer" in metrics:
        if "text_ref" not in row.attrs or "text_hyp" not in row.attrs:
            raise ValueError("manifest row lacks text_ref=/text_hyp= for WER")
        values["wer"] = wer(row.attrs["text_ref"], row.attrs["text_hyp"]).wer
    return values


def eval_corpus(pairs_manifest, metrics: list[str],
                estimate_key: str = "enhanced") -> EvalReport:
    """Per-utterance metrics plus corpus means over a pairs manifest.

    The estimate is the `estimate_key` attribute when present (falling back
    to the row's audio path); the reference is the `clean=` attribute. Rows
    that fail are skipped and counted; the call fails only when every row
    skips. Infinite Si-SDR rows are excluded from the mean and counted.
    """
    selection = [m for m in METRIC_ORDER if m in metrics]
    unknown = set(metrics) - set(METRIC_ORDER)
    if unknown or not selection:
        raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {METRIC_ORDER}")

    rows_in = (read_manifest(pairs_manifest)
               if not isinstance(pairs_manifest, list) else pairs_manifest)
    rows_out: list[tuple[str, dict[str, float]]] = []
    skipped: list[tuple[str, str]] = []
    for row in sorted(rows_in, key=lambda r: r.utt_id):
        try:
            rows_out.append((row.utt_id, _row_metrics(row, selection, estimate_key)))
        except Exception as exc:
            skipped.append((row.utt_id, str(exc)))
    if not rows_out:
        raise RuntimeError(f"all {len(skipped)} rows failed evaluation")

    means: dict[str, float] = {}
    infinite: dict[str, int] = {}
    for metric in selection:
        finite = [v[metric] for _, v in rows_out if math.isfinite(v[metric])]
        infinite[metric] = sum(1 for _, v in rows_out if math.isinf(v[metric]))
        means[metric] = float(np.mean(finite)) if finite else math.inf
    return EvalReport(selection, rows_out, means, skipped, infinite)
