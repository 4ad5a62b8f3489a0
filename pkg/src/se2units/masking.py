"""Complex ratio masks: oracle computation, tanh compression, application."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import ComplexSpectrogram


@dataclass
class MaskTensor:
    """T x F complex multiplier; `bound` is set iff the mask was compressed."""

    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError(f"mask must be T x F, got shape {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def oracle_cirm(
    clean_spec: ComplexSpectrogram,
    mix_spec: ComplexSpectrogram,
    eps: float = 1e-8,
) -> MaskTensor:
    """Ideal complex ratio mask: regularized bin-wise division of clean by mixture.

    M = S * conj(X) / (|X|^2 + eps), the least-squares-safe form of S / X.
    """
    if clean_spec.shape != mix_spec.shape:
        raise ValueError(f"shape mismatch: {clean_spec.shape} vs {mix_spec.shape}")
    x = mix_spec.bins
    denom = (x.real * x.real + x.imag * x.imag) + eps
    return MaskTensor(clean_spec.bins * np.conj(x) / denom)


def compress_mask(mask: MaskTensor, bound: float = 5.0, slope: float = 1.0) -> MaskTensor:
    """Squash each real/imag component through bound * tanh(slope * m)."""
    if bound <= 0 or slope <= 0:
        raise ValueError(f"bound and slope must be positive, got {bound}, {slope}")
    real = bound * np.tanh(slope * mask.values.real)
    imag = bound * np.tanh(slope * mask.values.imag)
    return MaskTensor(real + 1j * imag, bound=bound)


def apply_mask(mask: MaskTensor, mix_spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Bin-wise complex multiply; length and config metadata carry over."""
    if mask.shape != mix_spec.shape:
        raise ValueError(f"shape mismatch: mask {mask.shape} vs spec {mix_spec.shape}")
    return ComplexSpectrogram(
        mask.values * mix_spec.bins,
        mix_spec.config,
        mix_spec.original_length,
        mix_spec.sample_rate,
    )
