"""Forward pass of the grid-structured enhancement network.

Encoder conv + global layer norm, B stacked blocks (frequency-axis BLSTM
module, time-axis BLSTM module, frame-level self-attention), and a deconv
head emitting a complex ratio mask. Inference only: weights are loaded from
the GNW1 file format or randomly initialized; there is no training code.

Weight numerics: tensors are stored as float32 (the GNW1 payload type) and
kept bit-exact in memory; all arithmetic runs in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audio import AudioBuffer, ComplexSpectrogram, StftConfig, istft, stft
from .masking import MaskTensor, apply_mask, compress_mask


class WeightFormatError(ValueError):
    """Bad magic, truncated payload, or otherwise unparseable weight file."""


class MissingTensorError(ValueError):
    """A tensor required by the config is absent from the file."""


class TensorShapeError(ValueError):
    """A tensor is present but its shape disagrees with the config."""


@dataclass(frozen=True)
class GridNetConfig:
    """Architecture hyperparameters plus the STFT front end.

    channels:      embedding width D of the grid feature
    num_blocks:    stacked block count B
    hidden:        BLSTM hidden size per direction
    heads:         attention head count (must divide channels)
    unfold_kernel, unfold_stride: window/step of the per-module unfolding
    mask_bound:    if set, the output mask is tanh-compressed to [-K, K]
    """

    channels: int = 32
    num_blocks: int = 4
    hidden: int = 128
    heads: int = 4
    unfold_kernel: int = 1
    unfold_stride: int = 1
    stft: StftConfig = field(default_factory=StftConfig)
    mask_bound: float | None = None

    def __post_init__(self):
        if self.channels < 1 or self.num_blocks < 1 or self.hidden < 1:
            raise ValueError("channels, num_blocks, and hidden must be positive")
        if self.heads < 1 or self.channels % self.heads:
            raise ValueError(
                f"heads ({self.heads}) must divide channels ({self.channels})"
            )
        if self.unfold_kernel < 1 or self.unfold_stride < 1:
            raise ValueError("unfold_kernel and unfold_stride must be positive")


def tensor_manifest(cfg: GridNetConfig) -> dict[str, tuple[int, ...]]:
    """Exact name -> shape map a weight set must provide for `cfg`."""
    d, h, uk = cfg.channels, cfg.hidden, cfg.unfold_kernel
    names: dict[str, tuple[int, ...]] = {
        "encoder.conv.kernel": (d, 2, 3, 3),
        "encoder.conv.bias": (d,),
        "encoder.gln.gain": (d,),
        "encoder.gln.bias": (d,),
        "decoder.deconv.kernel": (2, d, 3, 3),
        "decoder.deconv.bias": (2,),
    }
    for i in range(cfg.num_blocks):
        for mod in ("intra", "sub"):
            p = f"block{i}.{mod}"
            names[f"{p}.ln.gain"] = (d,)
            names[f"{p}.ln.bias"] = (d,)
            for direction in ("fwd", "bwd"):
                names[f"{p}.blstm.{direction}.w_ih"] = (4 * h, d * uk)
                names[f"{p}.blstm.{direction}.w_hh"] = (4 * h, h)
                names[f"{p}.blstm.{direction}.bias"] = (4 * h,)
            names[f"{p}.deconv.kernel"] = (d, 2 * h, uk)
            names[f"{p}.deconv.bias"] = (d,)
        p = f"block{i}.attn"
        names[f"{p}.ln.gain"] = (d,)
        names[f"{p}.ln.bias"] = (d,)
        for proj in ("q", "k", "v", "out"):
            names[f"{p}.{proj}.weight"] = (d, d)
            names[f"{p}.{proj}.bias"] = (d,)
    return names


class GridNetWeights:
    """Named float32 tensor map validated against a config."""

    def __init__(self, tensors: dict[str, np.ndarray], sample_rate: int, cfg: GridNetConfig):
        expected = tensor_manifest(cfg)
        for name in tensors:
            if name not in expected:
                raise WeightFormatError(f"unexpected tensor {name!r}")
        for name, shape in expected.items():
            if name not in tensors:
                raise MissingTensorError(f"missing tensor {name!r}")
            got = tuple(tensors[name].shape)
            if got != shape:
                raise TensorShapeError(f"tensor {name!r} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(tensors[name])):
                raise WeightFormatError(f"non-finite values in tensor {name!r}")
        self.tensors = {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}
        self.sample_rate = int(sample_rate)
        self.cfg = cfg
        self._f64: dict[str, np.ndarray] = {}

    def f64(self, name: str) -> np.ndarray:
        """Float64 view used by the forward pass; cached per tensor."""
        if name not in self._f64:
            self._f64[name] = self.tensors[name].astype(np.float64)
        return self._f64[name]


def init_random_weights(
    cfg: GridNetConfig, seed: int = 0, sample_rate: int = 16000, scale: float = 0.1
) -> GridNetWeights:
    """Small random weights for invariant testing; gains start at 1."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_manifest(cfg).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = (scale * rng.standard_normal(shape)).astype(np.float32)
    return GridNetWeights(tensors, sample_rate, cfg)


def zero_weights(cfg: GridNetConfig, sample_rate: int = 16000) -> GridNetWeights:
    tensors = {name: np.zeros(shape, dtype=np.float32)
               for name, shape in tensor_manifest(cfg).items()}
    return GridNetWeights(tensors, sample_rate, cfg)


# ---------------------------------------------------------------------------
# GNW1 weight file format
#
#   "GNW1" | u32 sample_rate | u32 tensor count
#   per tensor: u16 name length | name (UTF-8) | u8 ndim | ndim * u32 dims
#               | row-major float32 little-endian payload
# ---------------------------------------------------------------------------

_MAGIC = b"GNW1"


def save_weights(path, weights: GridNetWeights) -> None:
    """Serialize; tensors are written sorted by name so files are canonical."""
    parts = [_MAGIC, struct.pack("<II", weights.sample_rate, len(weights.tensors))]
    for name in sorted(weights.tensors):
        arr = np.ascontiguousarray(weights.tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_weights(path, cfg: GridNetConfig) -> GridNetWeights:
    """Parse a GNW1 file and validate every tensor shape against `cfg`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise WeightFormatError(f"{path}: bad magic (expected GNW1)")
    sample_rate, count = struct.unpack_from("<II", data, 4)

    tensors: dict[str, np.ndarray] = {}
    pos = 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
        except struct.error as exc:
            raise WeightFormatError(f"{path}: truncated header ({exc})") from exc
        n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = data[pos:pos + 4 * n_values]
        if len(payload) != 4 * n_values:
            raise WeightFormatError(f"{path}: truncated payload for tensor {name!r}")
        pos += 4 * n_values
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return GridNetWeights(tensors, sample_rate, cfg)


# ---------------------------------------------------------------------------
# Normalizations and conv primitives
# ---------------------------------------------------------------------------


def gln(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Global layer norm: one mean/variance over all (D, T, F) entries,
    then a per-channel affine."""
    mu = x.mean()
    var = x.var()
    return gain[:, None, None] * (x - mu) / np.sqrt(var + eps) + bias[:, None, None]


def channel_layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-8
) -> np.ndarray:
    """Per-position layer norm over the channel axis (the blocks' LN)."""
    mu = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    return gain[:, None, None] * (x - mu) / np.sqrt(var + eps) + bias[:, None, None]


def conv2d_3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Shape-preserving 3x3 correlation, stride 1, zero padding 1.

    x: (C_in, T, F), kernel: (C_out, C_in, 3, 3).
    """
    c_in, t, f = x.shape
    padded = np.zeros((c_in, t + 2, f + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((kernel.shape[0], t, f))
    for u in range(3):
        for v in range(3):
            out += np.einsum("oc,ctf->otf", kernel[:, :, u, v], padded[:, u:u + t, v:v + f])
    return out + bias[:, None, None]


def deconv2d_3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Transposed 3x3 conv, stride 1, padding 1: correlation with the
    spatially flipped kernel, which is the adjoint of conv2d_3x3."""
    return conv2d_3x3(x, kernel[:, :, ::-1, ::-1], bias)


def _deconv1d(seq_out: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
              stride: int, length: int) -> np.ndarray:
    """1D transposed conv mapping (L', T, C) back to (D, T, length).

    kernel: (D, C, k); position l scatters to output indices l*stride + j.
    """
    n_win = seq_out.shape[0]
    out = np.zeros((kernel.shape[0], seq_out.shape[1], length))
    positions = stride * np.arange(n_win)
    for j in range(kernel.shape[2]):
        out[:, :, positions + j] += np.einsum("dc,ltc->dtl", kernel[:, :, j], seq_out)
    return out + bias[:, None, None]


# ---------------------------------------------------------------------------
# BLSTM
# ---------------------------------------------------------------------------


def _lstm_direction(seq: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray,
                    bias: np.ndarray, reverse: bool) -> np.ndarray:
    """One direction over (L, B, IN) -> (L, B, H); gate order (i, f, g, o)."""
    inp = seq[::-1] if reverse else seq
    length, batch, _ = inp.shape
    x_proj = inp.reshape(length * batch, -1) @ w_ih.T + bias
    x_proj = x_proj.reshape(length, batch, -1)
    out = _kernels.lstm_batch(x_proj, np.ascontiguousarray(w_hh.T))
    return out[::-1] if reverse else out


def blstm_forward(seq: np.ndarray, weights: dict[str, np.ndarray]) -> np.ndarray:
    """Bidirectional LSTM over a single sequence of input vectors.

    seq: (N, IN); weights holds fwd/bwd triples keyed `fwd.w_ih`, `fwd.w_hh`,
    `fwd.bias` (and `bwd.*`). Returns (N, 2*hidden), forward half first.
    Both directions start from zero state.
    """
    batched = seq[:, None, :]
    fwd = _lstm_direction(batched, weights["fwd.w_ih"], weights["fwd.w_hh"],
                          weights["fwd.bias"], reverse=False)
    bwd = _lstm_direction(batched, weights["bwd.w_ih"], weights["bwd.w_hh"],
                          weights["bwd.bias"], reverse=True)
    return np.concatenate([fwd[:, 0, :], bwd[:, 0, :]], axis=1)


def _blstm_batch(seq: np.ndarray, w, prefix: str) -> np.ndarray:
    """(L, B, IN) -> (L, B, 2H) using tensors under `prefix`.blstm."""
    fwd = _lstm_direction(seq, w.f64(f"{prefix}.blstm.fwd.w_ih"),
                          w.f64(f"{prefix}.blstm.fwd.w_hh"),
                          w.f64(f"{prefix}.blstm.fwd.bias"), reverse=False)
    bwd = _lstm_direction(seq, w.f64(f"{prefix}.blstm.bwd.w_ih"),
                          w.f64(f"{prefix}.blstm.bwd.w_hh"),
                          w.f64(f"{prefix}.blstm.bwd.bias"), reverse=True)
    return np.concatenate([fwd, bwd], axis=2)


# ---------------------------------------------------------------------------
# Block modules
# ---------------------------------------------------------------------------


def _grid_module(x: np.ndarray, w: GridNetWeights, prefix: str, cfg: GridNetConfig) -> np.ndarray:
    """LN -> unfold along the last axis -> BLSTM -> 1D deconv -> residual.

    x: (D, batch_axis, seq_axis). The unfolded window at position l
    concatenates taps l*stride .. l*stride+kernel-1, each a D-vector
    (tap-major blocks of D).
    """
    d, batch, length = x.shape
    uk, us = cfg.unfold_kernel, cfg.unfold_stride
    if length < uk:
        raise ValueError(f"sequence length {length} shorter than unfold kernel {uk}")
    if (length - uk) % us:
        raise ValueError(
            f"(length - kernel) = {length - uk} not divisible by stride {us}; "
            "the deconvolution could not restore the input length"
        )

    y = channel_layer_norm(x, w.f64(f"{prefix}.ln.gain"), w.f64(f"{prefix}.ln.bias"))

    n_win = (length - uk) // us + 1
    # (L', batch, D*uk): window l, tap j contributes channels [j*D, (j+1)*D)
    seq = np.empty((n_win, batch, d * uk))
    for j in range(uk):
        tap = y[:, :, j:j + us * n_win:us]          # (D, batch, L')
        seq[:, :, j * d:(j + 1) * d] = np.transpose(tap, (2, 1, 0))

    hidden_seq = _blstm_batch(seq, w, prefix)
    out = _deconv1d(hidden_seq, w.f64(f"{prefix}.deconv.kernel"),
                    w.f64(f"{prefix}.deconv.bias"), us, length)
    return x + out


def intra_frame_module(x: np.ndarray, w: GridNetWeights, prefix: str,
                       cfg: GridNetConfig) -> np.ndarray:
    """Full-band module: BLSTM runs along frequency, one sequence per frame."""
    return _grid_module(x, w, prefix, cfg)


def sub_band_module(x: np.ndarray, w: GridNetWeights, prefix: str,
                    cfg: GridNetConfig) -> np.ndarray:
    """Temporal module: the intra module with time and frequency exchanged."""
    flipped = _grid_module(np.transpose(x, (0, 2, 1)), w, prefix, cfg)
    return np.transpose(flipped, (0, 2, 1))


def cross_frame_attention(x: np.ndarray, w: GridNetWeights, prefix: str,
                          heads: int) -> np.ndarray:
    """Multi-head self-attention across frames.

    Q/K/V projections are channelwise; each head's token at frame t is its
    (D/heads) x F channel slice flattened, so weights stay independent of F.
    Scores are scaled by sqrt of the token dimension (D/heads * F).
    """
    d, t, f = x.shape
    if d % heads:
        raise ValueError(f"heads ({heads}) must divide channels ({d})")
    dh = d // heads

    y = channel_layer_norm(x, w.f64(f"{prefix}.ln.gain"), w.f64(f"{prefix}.ln.bias"))

    def project(name):
        return (np.einsum("ed,dtf->etf", w.f64(f"{prefix}.{name}.weight"), y)
                + w.f64(f"{prefix}.{name}.bias")[:, None, None])

    q, k, v = project("q"), project("k"), project("v")

    ctx = np.empty((d, t, f))
    scale = 1.0 / np.sqrt(dh * f)
    for head in range(heads):
        sl = slice(head * dh, (head + 1) * dh)
        q_tok = np.transpose(q[sl], (1, 0, 2)).reshape(t, dh * f)
        k_tok = np.transpose(k[sl], (1, 0, 2)).reshape(t, dh * f)
        v_tok = np.transpose(v[sl], (1, 0, 2)).reshape(t, dh * f)

        scores = (q_tok @ k_tok.T) * scale
        scores -= scores.max(axis=1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=1, keepdims=True)

        head_ctx = (attn @ v_tok).reshape(t, dh, f)
        ctx[sl] = np.transpose(head_ctx, (1, 0, 2))

    out = (np.einsum("ed,dtf->etf", w.f64(f"{prefix}.out.weight"), ctx)
           + w.f64(f"{prefix}.out.bias")[:, None, None])
    return x + out


# ---------------------------------------------------------------------------
# Full forward pass
# ---------------------------------------------------------------------------


def encode(spec: ComplexSpectrogram, w: GridNetWeights) -> np.ndarray:
    """Stack real/imag, 3x3 conv to D channels, global layer norm."""
    stacked = np.stack([spec.bins.real, spec.bins.imag])
    feat = conv2d_3x3(stacked, w.f64("encoder.conv.kernel"), w.f64("encoder.conv.bias"))
    return gln(feat, w.f64("encoder.gln.gain"), w.f64("encoder.gln.bias"))


def gridnet_forward(mix_spec: ComplexSpectrogram, w: GridNetWeights,
                    cfg: GridNetConfig) -> MaskTensor:
    """encode -> B x (intra -> sub-band -> attention) -> deconv head -> mask."""
    feat = encode(mix_spec, w)
    for i in range(cfg.num_blocks):
        feat = intra_frame_module(feat, w, f"block{i}.intra", cfg)
        feat = sub_band_module(feat, w, f"block{i}.sub", cfg)
        feat = cross_frame_attention(feat, w, f"block{i}.attn", cfg.heads)
    head = deconv2d_3x3(feat, w.f64("decoder.deconv.kernel"), w.f64("decoder.deconv.bias"))
    mask = MaskTensor(head[0] + 1j * head[1])
    if cfg.mask_bound is not None:
        mask = compress_mask(mask, bound=cfg.mask_bound, slope=1.0)
    return mask


def enhance(noisy: AudioBuffer, w: GridNetWeights, cfg: GridNetConfig) -> AudioBuffer:
    """stft -> mask estimation -> mask multiply -> istft; length preserved."""
    if noisy.sample_rate != w.sample_rate:
        raise ValueError(
            f"sample rate {noisy.sample_rate} does not match the weights' "
            f"training rate {w.sample_rate}"
        )
    spec = stft(noisy, cfg.stft)
    mask = gridnet_forward(spec, w, cfg)
    return istft(apply_mask(mask, spec))
