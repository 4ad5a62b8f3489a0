"""Tests for the enhancement network forward pass and the GNW1 weight format."""

import math
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
from gridnet_slow import forward_slow  # noqa: E402

from se2units.audio import AudioBuffer, ComplexSpectrogram, StftConfig, istft, stft
from se2units.gridnet import (GridNetConfig, GridNetWeights, MissingTensorError,
                              TensorShapeError, WeightFormatError, blstm_forward,
                              channel_layer_norm, conv2d_3x3, cross_frame_attention,
                              encode, enhance, gln, gridnet_forward,
                              init_random_weights, intra_frame_module, load_weights,
                              save_weights, sub_band_module, tensor_manifest,
                              zero_weights)

TINY = GridNetConfig(channels=2, num_blocks=1, hidden=2, heads=1, stft=StftConfig(8, 4))


def _spec(bins, cfg=TINY, length=None):
    bins = np.asarray(bins, dtype=complex)
    if length is None:
        length = (bins.shape[0] - 1) * cfg.stft.hop + cfg.stft.fft_size
    return ComplexSpectrogram(bins, cfg.stft, length)


def _write_raw_gnw1(path, tensors, sample_rate=16000, magic=b"GNW1"):
    parts = [magic, struct.pack("<II", sample_rate, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode()
        parts += [struct.pack("<H", len(encoded)), encoded,
                  struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(parts))


class TestConfig:
    def test_defaults(self):
        cfg = GridNetConfig()
        assert (cfg.channels, cfg.num_blocks, cfg.hidden) == (32, 4, 128)
        assert (cfg.stft.fft_size, cfg.stft.hop) == (512, 256)

    def test_head_divisibility(self):
        with pytest.raises(ValueError, match="divide"):
            GridNetConfig(channels=6, heads=4)


class TestWeightFile:
    def test_round_trip_bit_exact(self, tmp_path):
        w = init_random_weights(TINY, seed=1, sample_rate=8000)
        path = tmp_path / "w.gnw"
        save_weights(path, w)
        back = load_weights(path, TINY)
        assert back.sample_rate == 8000
        assert set(back.tensors) == set(w.tensors)
        for name in w.tensors:
            assert np.array_equal(back.tensors[name], w.tensors[name])
        # second save is byte-identical
        path2 = tmp_path / "w2.gnw"
        save_weights(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gnw"
        _write_raw_gnw1(path, {}, magic=b"XXXX")
        with pytest.raises(WeightFormatError, match="magic"):
            load_weights(path, TINY)

    def test_shape_mismatch_names_tensor(self, tmp_path):
        w = init_random_weights(TINY, seed=2)
        tensors = dict(w.tensors)
        tensors["encoder.conv.kernel"] = np.zeros((2, 2, 3, 2), dtype=np.float32)
        path = tmp_path / "shape.gnw"
        _write_raw_gnw1(path, tensors)
        with pytest.raises(TensorShapeError, match="encoder.conv.kernel"):
            load_weights(path, TINY)

    def test_missing_tensor_named(self, tmp_path):
        w = init_random_weights(TINY, seed=3)
        tensors = dict(w.tensors)
        del tensors["block0.attn.q.weight"]
        path = tmp_path / "missing.gnw"
        _write_raw_gnw1(path, tensors)
        with pytest.raises(MissingTensorError, match="block0.attn.q.weight"):
            load_weights(path, TINY)

    def test_unexpected_tensor_rejected(self, tmp_path):
        w = init_random_weights(TINY, seed=4)
        tensors = dict(w.tensors)
        tensors["mystery.blob"] = np.zeros(3, dtype=np.float32)
        path = tmp_path / "extra.gnw"
        _write_raw_gnw1(path, tensors)
        with pytest.raises(WeightFormatError, match="mystery.blob"):
            load_weights(path, TINY)

    def test_truncated_payload(self, tmp_path):
        w = init_random_weights(TINY, seed=5)
        path = tmp_path / "trunc.gnw"
        save_weights(path, w)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_weights(path, TINY)

    def test_non_finite_rejected(self, tmp_path):
        w = init_random_weights(TINY, seed=6)
        tensors = dict(w.tensors)
        bad = tensors["encoder.conv.bias"].copy()
        bad[0] = np.nan
        tensors["encoder.conv.bias"] = bad
        path = tmp_path / "nan.gnw"
        _write_raw_gnw1(path, tensors)
        with pytest.raises(WeightFormatError, match="non-finite"):
            load_weights(path, TINY)

    def test_manifest_covers_all_blocks(self):
        cfg = GridNetConfig(channels=4, num_blocks=3, hidden=2, heads=2)
        manifest = tensor_manifest(cfg)
        assert "block2.attn.out.bias" in manifest
        assert manifest["block1.sub.blstm.bwd.w_ih"] == (8, 4)


class TestNorms:
    def test_gln_constant_tensor(self):
        x = np.full((3, 4, 5), 2.5)
        out = gln(x, np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_gln_zero_gain_broadcasts_bias(self):
        rng = np.random.default_rng(0)
        out = gln(rng.standard_normal((3, 4, 5)), np.zeros(3), np.full(3, 7.0))
        np.testing.assert_array_equal(out, np.full((3, 4, 5), 7.0))

    def test_gln_normalizes_globally(self):
        rng = np.random.default_rng(1)
        out = gln(rng.standard_normal((4, 6, 7)) * 3 + 5, np.ones(4), np.zeros(4))
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1.0) < 1e-6

    def test_channel_ln_normalizes_columns(self):
        rng = np.random.default_rng(2)
        out = channel_layer_norm(rng.standard_normal((8, 3, 4)), np.ones(8), np.zeros(8))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)


class TestEncode:
    def test_zero_input_zero_bias_gives_bias_field(self):
        w = zero_weights(TINY)
        w.tensors["encoder.gln.bias"] = np.full(2, 3.0, dtype=np.float32)
        w._f64.clear()
        feat = encode(_spec(np.zeros((4, 5))), w)
        np.testing.assert_array_equal(feat[0], np.full((4, 5), 3.0))
        np.testing.assert_array_equal(feat[1], np.full((4, 5), 3.0))

    def test_identity_kernel_passes_real_channel(self):
        rng = np.random.default_rng(3)
        bins = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
        w = zero_weights(TINY)
        kernel = np.zeros((2, 2, 3, 3), dtype=np.float32)
        kernel[0, 0, 1, 1] = 1.0  # center tap, channel 0 <- real part
        w.tensors["encoder.conv.kernel"] = kernel
        w.tensors["encoder.gln.gain"] = np.ones(2, dtype=np.float32)
        w._f64.clear()
        feat = encode(_spec(bins), w)
        raw = np.zeros((2, 4, 5))
        raw[0] = bins.real
        expected = gln(raw, np.ones(2), np.zeros(2))
        np.testing.assert_allclose(feat, expected, atol=1e-7)

    def test_output_shape(self):
        for t in (1, 3, 9):
            feat = encode(_spec(np.ones((t, 5))), init_random_weights(TINY, seed=7))
            assert feat.shape == (2, t, 5)


class TestBlstm:
    def _weights(self, w_ih, w_hh, bias):
        return {
            "fwd.w_ih": np.asarray(w_ih, float), "fwd.w_hh": np.asarray(w_hh, float),
            "fwd.bias": np.asarray(bias, float),
            "bwd.w_ih": np.asarray(w_ih, float), "bwd.w_hh": np.asarray(w_hh, float),
            "bwd.bias": np.asarray(bias, float),
        }

    def test_zero_weights_zero_output(self):
        weights = self._weights(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        out = blstm_forward(np.random.default_rng(0).standard_normal((5, 3)), weights)
        assert out.shape == (5, 4)
        np.testing.assert_array_equal(out, 0.0)

    def test_single_step_hand_computed(self):
        # hidden=1, one step: gates = w_ih*x + bias, c = sig(gi)*tanh(gg),
        # h = sig(go)*tanh(c)
        w_ih = np.array([[0.5], [-0.3], [0.8], [0.2]])
        bias = np.array([0.1, 0.2, -0.1, 0.3])
        weights = self._weights(w_ih, np.zeros((4, 1)), bias)
        x = 2.0
        out = blstm_forward(np.array([[x]]), weights)

        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        i = sig(0.5 * x + 0.1)
        g = math.tanh(0.8 * x - 0.1)
        o = sig(0.2 * x + 0.3)
        expected = o * math.tanh(i * g)
        assert out.shape == (1, 2)
        assert out[0, 0] == pytest.approx(expected, abs=1e-12)
        assert out[0, 1] == pytest.approx(expected, abs=1e-12)  # same weights both ways

    def test_output_width(self):
        rng = np.random.default_rng(1)
        weights = self._weights(rng.standard_normal((12, 4)),
                                rng.standard_normal((12, 3)),
                                rng.standard_normal(12))
        out = blstm_forward(rng.standard_normal((7, 4)), weights)
        assert out.shape == (7, 6)


class TestBlockModules:
    def test_zero_path_is_identity(self):
        w = zero_weights(TINY)
        w.tensors["block0.intra.ln.gain"] = np.ones(2, dtype=np.float32)
        w._f64.clear()
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 5))
        np.testing.assert_array_equal(intra_frame_module(x, w, "block0.intra", TINY), x)
        np.testing.assert_array_equal(sub_band_module(x, w, "block0.sub", TINY), x)

    def test_transpose_duality_with_shared_weights(self):
        w = init_random_weights(TINY, seed=8, scale=0.4)
        for suffix in ("ln.gain", "ln.bias", "deconv.kernel", "deconv.bias",
                       "blstm.fwd.w_ih", "blstm.fwd.w_hh", "blstm.fwd.bias",
                       "blstm.bwd.w_ih", "blstm.bwd.w_hh", "blstm.bwd.bias"):
            w.tensors[f"block0.sub.{suffix}"] = w.tensors[f"block0.intra.{suffix}"]
        w._f64.clear()
        x = np.random.default_rng(5).standard_normal((2, 3, 5))
        left = sub_band_module(x, w, "block0.sub", TINY)
        right = np.transpose(
            intra_frame_module(np.transpose(x, (0, 2, 1)), w, "block0.intra", TINY),
            (0, 2, 1))
        assert np.max(np.abs(left - right)) < 1e-9

    def test_shape_preserved(self):
        w = init_random_weights(TINY, seed=9)
        x = np.random.default_rng(6).standard_normal((2, 4, 6))
        assert intra_frame_module(x, w, "block0.intra", TINY).shape == x.shape
        assert sub_band_module(x, w, "block0.sub", TINY).shape == x.shape

    def test_too_short_sequence_rejected(self):
        cfg = GridNetConfig(channels=2, num_blocks=1, hidden=2, heads=1,
                            unfold_kernel=4, unfold_stride=1, stft=StftConfig(8, 4))
        w = init_random_weights(cfg, seed=10)
        x = np.zeros((2, 3, 3))
        with pytest.raises(ValueError, match="shorter than unfold kernel"):
            intra_frame_module(x, w, "block0.intra", cfg)

    def test_module_matches_slow_oracle(self):
        import gridnet_slow
        w = init_random_weights(TINY, seed=11, scale=0.5)
        x = np.random.default_rng(7).standard_normal((2, 2, 4))
        fast = intra_frame_module(x, w, "block0.intra", TINY)
        slow = gridnet_slow.grid_module_slow(x, w, "block0.intra", TINY)
        assert np.max(np.abs(fast - slow)) < 1e-6


class TestAttention:
    def test_identical_frames_give_uniform_attention(self):
        w = init_random_weights(TINY, seed=12, scale=0.5)
        rng = np.random.default_rng(8)
        col = rng.standard_normal((2, 1, 5))
        x = np.repeat(col, 4, axis=1)  # 4 identical frames
        out = cross_frame_attention(x, w, "block0.attn", heads=1)
        # with uniform weights every frame sees the mean token == its own token,
        # so all output frames are identical and equal the single-frame result
        single = cross_frame_attention(col, w, "block0.attn", heads=1)
        for t in range(4):
            np.testing.assert_allclose(out[:, t, :], single[:, 0, :], atol=1e-12)

    def test_zero_output_projection_is_identity(self):
        w = init_random_weights(TINY, seed=13)
        w.tensors["block0.attn.out.weight"] = np.zeros((2, 2), dtype=np.float32)
        w.tensors["block0.attn.out.bias"] = np.zeros(2, dtype=np.float32)
        w._f64.clear()
        x = np.random.default_rng(9).standard_normal((2, 3, 5))
        np.testing.assert_array_equal(cross_frame_attention(x, w, "block0.attn", 1), x)

    def test_two_frame_hand_computation(self):
        # D=2, F=1, heads=1: tokens are plain 2-vectors; verify against the
        # softmax(q k^T / sqrt(2)) v formula written out longhand
        w = zero_weights(TINY)
        rng = np.random.default_rng(10)
        for name in ("q", "k", "v", "out"):
            w.tensors[f"block0.attn.{name}.weight"] = rng.standard_normal((2, 2)).astype(np.float32)
            w.tensors[f"block0.attn.{name}.bias"] = rng.standard_normal(2).astype(np.float32)
        w.tensors["block0.attn.ln.gain"] = np.ones(2, dtype=np.float32)
        w._f64.clear()
        x = rng.standard_normal((2, 2, 1))
        out = cross_frame_attention(x, w, "block0.attn", heads=1)

        gain = w.f64("block0.attn.ln.gain")
        y = channel_layer_norm(x, gain, w.f64("block0.attn.ln.bias"))
        toks = {}
        for name in ("q", "k", "v"):
            weight, bias = w.f64(f"block0.attn.{name}.weight"), w.f64(f"block0.attn.{name}.bias")
            toks[name] = [weight @ y[:, t, 0] + bias for t in range(2)]
        expected = np.empty_like(x)
        for t in range(2):
            s0 = toks["q"][t] @ toks["k"][0] / math.sqrt(2.0)
            s1 = toks["q"][t] @ toks["k"][1] / math.sqrt(2.0)
            e0, e1 = math.exp(s0 - max(s0, s1)), math.exp(s1 - max(s0, s1))
            a0, a1 = e0 / (e0 + e1), e1 / (e0 + e1)
            ctx = a0 * toks["v"][0] + a1 * toks["v"][1]
            expected[:, t, 0] = (x[:, t, 0]
                                 + w.f64("block0.attn.out.weight") @ ctx
                                 + w.f64("block0.attn.out.bias"))
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_head_divisibility_checked(self):
        w = init_random_weights(TINY, seed=14)
        with pytest.raises(ValueError, match="divide"):
            cross_frame_attention(np.zeros((2, 3, 5)), w, "block0.attn", heads=3)


class TestForward:
    def test_zero_weights_zero_mask(self):
        mask = gridnet_forward(_spec(np.ones((3, 5))), zero_weights(TINY), TINY)
        np.testing.assert_array_equal(mask.values, 0.0)

    def test_shape_matches_input(self):
        rng = np.random.default_rng(11)
        for fft_size in (8, 16, 32):
            cfg = GridNetConfig(channels=2, num_blocks=1, hidden=2, heads=1,
                                stft=StftConfig(fft_size, fft_size // 2))
            w = init_random_weights(cfg, seed=15)
            t = int(rng.integers(1, 7))
            f = fft_size // 2 + 1
            bins = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
            mask = gridnet_forward(_spec(bins, cfg), w, cfg)
            assert mask.values.shape == (t, f)

    def test_matches_slow_oracle(self):
        rng = np.random.default_rng(12)
        for seed in range(3):
            w = init_random_weights(TINY, seed=20 + seed, scale=0.4)
            bins = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
            fast = gridnet_forward(_spec(bins), w, TINY).values
            slow = forward_slow(bins, w, TINY)
            assert np.max(np.abs(fast - slow)) < 1e-5

    def test_mask_bound_applied(self):
        cfg = GridNetConfig(channels=2, num_blocks=1, hidden=2, heads=1,
                            stft=StftConfig(8, 4), mask_bound=0.5)
        w = init_random_weights(cfg, seed=16, scale=2.0)
        mask = gridnet_forward(_spec(np.ones((3, 5)) * 5, cfg), w, cfg)
        assert mask.bound == 0.5
        assert np.all(np.abs(mask.values.real) <= 0.5)
        assert np.all(np.abs(mask.values.imag) <= 0.5)


class TestEnhance:
    def test_unit_mask_weights_reproduce_input(self):
        w = zero_weights(TINY)
        w.tensors["decoder.deconv.bias"] = np.array([1.0, 0.0], dtype=np.float32)
        w._f64.clear()
        rng = np.random.default_rng(13)
        buf = AudioBuffer(rng.uniform(-0.8, 0.8, 100), 16000)
        out = enhance(buf, w, TINY)
        assert len(out.samples) == 100
        assert np.max(np.abs(out.samples - buf.samples)) <= 1e-6

    def test_zero_weights_silence(self):
        buf = AudioBuffer(np.random.default_rng(14).uniform(-1, 1, 64), 16000)
        out = enhance(buf, zero_weights(TINY), TINY)
        np.testing.assert_array_equal(out.samples, 0.0)

    def test_deterministic(self):
        w = init_random_weights(TINY, seed=17, scale=0.3)
        buf = AudioBuffer(np.random.default_rng(15).uniform(-1, 1, 90), 16000)
        a = enhance(buf, w, TINY)
        b = enhance(buf, w, TINY)
        assert np.array_equal(a.samples, b.samples)

    def test_rate_mismatch_rejected(self):
        w = init_random_weights(TINY, seed=18, sample_rate=8000)
        with pytest.raises(ValueError, match="sample rate"):
            enhance(AudioBuffer(np.ones(40), 16000), w, TINY)

    def test_output_always_finite(self):
        rng = np.random.default_rng(16)
        for seed in range(3):
            w = init_random_weights(TINY, seed=30 + seed, scale=1.5)
            buf = AudioBuffer(rng.uniform(-1, 1, 120), 16000)
            out = enhance(buf, w, TINY)
            assert np.all(np.isfinite(out.samples))
