"""Discrete unit extraction: log-mel features (or imported ones), k-means
codebook fitting, frame-to-unit assignment, and consecutive-duplicate
reduction."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audio import AudioBuffer, StftConfig, stft


class FeatureFormatError(ValueError):
    """Bad magic, truncated payload, or non-finite entries in a feature file."""


@dataclass
class FeatureMatrix:
    """N frames x d dims, plus the hop (seconds) and where it came from."""

    rows: np.ndarray
    frame_hop: float
    source: str = "logmel"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(f"rows must be a non-empty N x d matrix, got {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("feature matrix contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class Codebook:
    centroids: np.ndarray
    inertia: float
    # per-iteration inertia from the fit; empty for loaded codebooks
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids)
        if self.centroids.ndim != 2:
            raise ValueError(f"centroids must be k x d, got {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("codebook contains non-finite centroids")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class UnitSequence:
    units: np.ndarray
    utt_id: str = ""

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int64)


# ---------------------------------------------------------------------------
# Log-mel features (desk-scale stand-in for externally computed features)
# ---------------------------------------------------------------------------


def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, (n_mels, fft_size//2 + 1)."""
    n_bins = fft_size // 2 + 1
    fmax = sample_rate / 2.0

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / fft_size
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = points[i], points[i + 1], points[i + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def logmel(buf: AudioBuffer, n_mels: int = 40,
           cfg: StftConfig = StftConfig()) -> FeatureMatrix:
    """Power spectrogram -> mel filterbank -> log(x + 1e-10), shape T x n_mels."""
    if n_mels > cfg.num_bins:
        raise ValueError(f"n_mels {n_mels} exceeds bin count {cfg.num_bins}")
    spec = stft(buf, cfg)
    power = np.square(np.abs(spec.bins))
    bank = mel_filterbank(buf.sample_rate, cfg.fft_size, n_mels)
    feats = np.log(power @ bank.T + 1e-10)
    return FeatureMatrix(feats, frame_hop=cfg.hop / buf.sample_rate, source="logmel")


# ---------------------------------------------------------------------------
# FEAT1 / KMC1 file formats
#
#   magic (4 bytes) | u8 version=1 | u32 rows | u32 dims
#   | f32 little-endian scalar | rows*dims row-major float32
#
# The scalar is the frame hop in seconds for features and the final k-means
# inertia for codebooks.
# ---------------------------------------------------------------------------

_FEAT_MAGIC = b"FEAT"
_CODEBOOK_MAGIC = b"KMC1"


def _write_matrix(path, magic: bytes, matrix: np.ndarray, scalar: float) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    header = magic + struct.pack("<BIIf", 1, arr.shape[0], arr.shape[1], scalar)
    with open(path, "wb") as fh:
        fh.write(header + arr.tobytes())


def _read_matrix(path, magic: bytes) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 17 or data[:4] != magic:
        raise FeatureFormatError(f"{path}: bad magic (expected {magic.decode()})")
    version, n, d, scalar = struct.unpack_from("<BIIf", data, 4)
    if version != 1:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    expected = n * d * 4
    payload = data[17:]
    if len(payload) != expected:
        raise FeatureFormatError(
            f"{path}: payload length {len(payload)} != expected {expected} "
            f"for {n}x{d} float32"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    if not np.all(np.isfinite(matrix)):
        raise FeatureFormatError(f"{path}: non-finite entries")
    return matrix, float(scalar)


def export_features(path, feat: FeatureMatrix) -> None:
    _write_matrix(path, _FEAT_MAGIC, feat.rows, feat.frame_hop)


def import_features(path) -> FeatureMatrix:
    rows, hop = _read_matrix(path, _FEAT_MAGIC)
    return FeatureMatrix(rows, frame_hop=hop, source="imported")


def save_codebook(path, cb: Codebook) -> None:
    _write_matrix(path, _CODEBOOK_MAGIC, cb.centroids, cb.inertia)


def load_codebook(path) -> Codebook:
    centroids, inertia = _read_matrix(path, _CODEBOOK_MAGIC)
    return Codebook(centroids, inertia=inertia)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _assigned_sq_dists(rows: np.ndarray, centroids: np.ndarray,
                       assign: np.ndarray) -> np.ndarray:
    diff = rows - centroids[assign]
    return np.square(diff).sum(axis=1)


def l2_normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Unit-norm each row; zero rows pass through unchanged."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(norms == 0.0, 1.0, norms)


def kmeans_fit(features: np.ndarray, k: int, max_iters: int = 100,
               seed: int = 0, normalize: bool = False) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Runs until the assignment reaches a fixpoint or max_iters. Empty clusters
    are re-seeded to the point farthest from its assigned centroid. The
    per-iteration inertia (non-increasing) is kept on the returned codebook.

    `normalize` unit-norms every feature row before clustering; use the same
    setting in assign_units, it is not recorded in the codebook file.
    """
    rows = np.asarray(features, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"features must be N x d, got shape {rows.shape}")
    if normalize:
        rows = l2_normalize_rows(rows)
    n = rows.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k ({k}) exceeds the number of rows ({n})")

    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.empty((k, rows.shape[1]))
    centroids[0] = rows[rng.integers(0, n)]
    closest = np.square(rows - centroids[0]).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(0, n)
        centroids[j] = rows[idx]
        closest = np.minimum(closest, np.square(rows - centroids[j]).sum(axis=1))

    history: list[float] = []
    prev_assign = None
    for _ in range(max_iters):
        assign = _kernels.nearest_centroid(rows, centroids)
        history.append(float(_assigned_sq_dists(rows, centroids, assign).sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        for j in range(k):
            members = rows[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        empties = [j for j in range(k) if not np.any(assign == j)]
        if empties:
            dists = _assigned_sq_dists(rows, centroids, assign)
            for j in empties:
                far = int(np.argmax(dists))
                centroids[j] = rows[far]
                dists[far] = -1.0

    return Codebook(centroids, inertia=history[-1], history=history)


def assign_units(feat: FeatureMatrix, cb: Codebook, utt_id: str = "",
                 normalize: bool = False) -> UnitSequence:
    """Nearest centroid per frame; ties go to the lowest centroid index.

    `normalize` must match the setting the codebook was fitted with.
    """
    if feat.dim != cb.feature_dim:
        raise ValueError(f"feature dim {feat.dim} != codebook dim {cb.feature_dim}")
    rows = feat.rows.astype(np.float64)
    if normalize:
        rows = l2_normalize_rows(rows)
    ids = _kernels.nearest_centroid(rows, cb.centroids.astype(np.float64))
    return UnitSequence(ids, utt_id)


def dedup(seq: UnitSequence) -> UnitSequence:
    """Collapse maximal runs of equal ids to a single id, order preserved."""
    units = seq.units
    if len(units) == 0:
        return UnitSequence(units.copy(), seq.utt_id)
    keep = np.ones(len(units), dtype=bool)
    keep[1:] = units[1:] != units[:-1]
    return UnitSequence(units[keep], seq.utt_id)


# ---------------------------------------------------------------------------
# Unit files: one line per utterance, `utt_id<TAB>u0 u1 u2 ...`
# ---------------------------------------------------------------------------


def write_units(path, sequences: list[UnitSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sorted(sequences, key=lambda s: s.utt_id):
            fh.write(f"{seq.utt_id}\t{' '.join(str(u) for u in seq.units)}\n")


def read_units(path) -> list[UnitSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            utt_id, _, payload = line.rstrip("\n").partition("\t")
            ids = [int(tok) for tok in payload.split()] if payload else []
            out.append(UnitSequence(np.asarray(ids, dtype=np.int64), utt_id))
    return out
