"""Speech enhancement to discrete units, desk scale.

SNR-controlled mixture simulation, complex-ratio-mask enhancement with a
grid-structured network forward pass, energy VAD trimming, k-means discrete
units with duplicate reduction, and Si-SDR/STOI/WER evaluation.
"""

from ._kernels import BACKEND as kernel_backend
from .audio import (AudioBuffer, ComplexSpectrogram, StftConfig, istft,
                    read_wav, resample, stft, write_wav)
from .gridnet import (GridNetConfig, GridNetWeights, enhance, gridnet_forward,
                      init_random_weights, load_weights, save_weights)
from .masking import MaskTensor, apply_mask, compress_mask, oracle_cirm
from .metrics import EvalReport, SiSdrBreakdown, WerBreakdown, eval_corpus, si_sdr, stoi, wer
from .mixing import MixtureRecord, MixtureSpec, mix_at_snr, rms, simulate_corpus
from .units import (Codebook, FeatureMatrix, UnitSequence, assign_units, dedup,
                    export_features, import_features, kmeans_fit, load_codebook,
                    logmel, save_codebook)
from .vad import SegmentList, VadConfig, detect_segments, frame_energies, trim

__version__ = "0.1.0"
