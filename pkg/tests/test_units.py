"""Tests for feature extraction, the FEAT1/KMC1 formats, k-means, and dedup."""

import numpy as np
import pytest

from se2units.audio import AudioBuffer, StftConfig
from se2units.units import (Codebook, FeatureFormatError, FeatureMatrix,
                            UnitSequence, assign_units, dedup, export_features,
                            import_features, kmeans_fit, l2_normalize_rows,
                            load_codebook, logmel, mel_filterbank, read_units,
                            save_codebook, write_units)

SR = 16000
CFG = StftConfig(512, 256)


class TestLogmel:
    def test_silence_hits_log_floor(self):
        feat = logmel(AudioBuffer(np.zeros(SR), SR), 40, CFG)
        np.testing.assert_allclose(feat.rows, np.log(1e-10), rtol=1e-6)

    def test_tone_peaks_in_the_right_band(self):
        t = np.arange(SR) / SR
        feat = logmel(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000.0 * t), SR), 40, CFG)
        observed = int(np.argmax(feat.rows.mean(axis=0)))

        # independent derivation: triangle response of each band at 1 kHz
        def hz_to_mel(f):
            return 2595.0 * np.log10(1.0 + f / 700.0)

        def mel_to_hz(m):
            return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

        pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(SR / 2.0), 42))
        responses = [
            max(0.0, min((1000.0 - pts[i]) / (pts[i + 1] - pts[i]),
                         (pts[i + 2] - 1000.0) / (pts[i + 2] - pts[i + 1])))
            for i in range(40)
        ]
        assert observed == int(np.argmax(responses))

    def test_shape_and_hop(self):
        feat = logmel(AudioBuffer(np.ones(SR), SR), 24, CFG)
        assert feat.rows.shape[1] == 24
        assert feat.frame_hop == pytest.approx(256 / SR)
        assert feat.source == "logmel"

    def test_too_many_bands_rejected(self):
        with pytest.raises(ValueError, match="n_mels"):
            logmel(AudioBuffer(np.ones(SR), SR), 300, CFG)

    def test_filterbank_shape(self):
        bank = mel_filterbank(SR, 512, 40)
        assert bank.shape == (40, 257)
        assert np.all(bank >= 0)


class TestFeatureFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        feat = FeatureMatrix(rng.standard_normal((7, 13)).astype(np.float32),
                             frame_hop=0.016)
        path = tmp_path / "a.feat"
        export_features(path, feat)
        back = import_features(path)
        assert np.array_equal(back.rows, feat.rows)
        assert back.frame_hop == np.float32(0.016)
        assert back.source == "imported"
        # re-export is byte identical
        path2 = tmp_path / "b.feat"
        export_features(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.feat"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FeatureFormatError, match="magic"):
            import_features(path)

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "nan.feat"
        export_features(path, FeatureMatrix(np.zeros((2, 3), dtype=np.float32),
                                            frame_hop=0.01))
        # splice a NaN into the payload (the constructor refuses to write one)
        rows = np.zeros((2, 3), dtype=np.float32)
        rows[1, 1] = np.nan
        raw = bytearray(path.read_bytes())
        raw[17:] = rows.tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFormatError, match="non-finite"):
            import_features(path)

    def test_truncated_payload(self, tmp_path):
        feat = FeatureMatrix(np.ones((4, 4), dtype=np.float32), frame_hop=0.01)
        path = tmp_path / "trunc.feat"
        export_features(path, feat)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FeatureFormatError, match="payload length"):
            import_features(path)

    def test_codebook_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cb = Codebook(rng.standard_normal((5, 8)).astype(np.float32), inertia=12.5)
        path = tmp_path / "c.kmc"
        save_codebook(path, cb)
        back = load_codebook(path)
        assert np.array_equal(back.centroids, cb.centroids)
        assert back.inertia == np.float32(12.5)
        path2 = tmp_path / "c2.kmc"
        save_codebook(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_codebook_magic_distinct_from_features(self, tmp_path):
        feat = FeatureMatrix(np.ones((2, 2), dtype=np.float32), frame_hop=0.01)
        path = tmp_path / "d.feat"
        export_features(path, feat)
        with pytest.raises(FeatureFormatError, match="KMC1"):
            load_codebook(path)


class TestKmeans:
    def test_k1_centroid_is_exact_mean(self):
        rng = np.random.default_rng(2)
        rows = rng.standard_normal((50, 6))
        cb = kmeans_fit(rows, 1, seed=0)
        np.testing.assert_allclose(cb.centroids[0], rows.mean(axis=0), atol=1e-12)

    def test_separated_clouds(self):
        rng = np.random.default_rng(3)
        a = rng.normal(0.0, 0.05, (30, 4))
        b = rng.normal(10.0, 0.05, (30, 4))
        cb = kmeans_fit(np.vstack([a, b]), 2, seed=1)
        means = sorted(cb.centroids[:, 0])
        assert abs(means[0] - a[:, 0].mean()) < 1e-9
        assert abs(means[1] - b[:, 0].mean()) < 1e-9

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(4)
        for trial in range(5):
            rows = rng.standard_normal((120, 5))
            cb = kmeans_fit(rows, 8, seed=trial)
            assert all(b <= a + 1e-9 for a, b in zip(cb.history, cb.history[1:]))
            assert cb.inertia == cb.history[-1]

    def test_k_exceeding_rows_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            kmeans_fit(np.zeros((3, 2)), 4)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError, match="at least 1"):
            kmeans_fit(np.zeros((3, 2)), 0)

    def test_duplicate_rows_survive_empty_cluster_reseed(self):
        rows = np.vstack([np.zeros((5, 2)), np.ones((1, 2))])
        cb = kmeans_fit(rows, 3, seed=0)
        assert np.all(np.isfinite(cb.centroids))
        assert cb.inertia == pytest.approx(0.0, abs=1e-18)

    def test_normalize_flag_clusters_by_direction(self):
        rng = np.random.default_rng(10)
        # same two directions at wildly different magnitudes
        dirs = np.array([[1.0, 0.0], [0.0, 1.0]])
        rows = np.vstack([dirs[i % 2] * rng.uniform(0.5, 50.0) +
                          rng.normal(0, 1e-3, 2) for i in range(60)])
        cb = kmeans_fit(rows, 2, seed=0, normalize=True)
        units = assign_units(FeatureMatrix(rows.astype(np.float32), frame_hop=0.01),
                             cb, normalize=True).units
        by_dir = [set(units[i % 2::2].tolist()) for i in range(2)]
        assert by_dir[0].isdisjoint(by_dir[1]) and len(by_dir[0]) == 1

    def test_l2_normalize_rows_handles_zero(self):
        rows = np.array([[3.0, 4.0], [0.0, 0.0]])
        out = l2_normalize_rows(rows)
        np.testing.assert_allclose(out[0], [0.6, 0.8])
        np.testing.assert_array_equal(out[1], [0.0, 0.0])

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        rows = rng.standard_normal((80, 4))
        a = kmeans_fit(rows, 6, seed=9)
        b = kmeans_fit(rows, 6, seed=9)
        assert np.array_equal(a.centroids, b.centroids)


class TestAssign:
    def _codebook(self, seed=6, k=5, d=4):
        rng = np.random.default_rng(seed)
        return Codebook(rng.standard_normal((k, d)), inertia=0.0)

    def test_centroid_row_maps_to_itself(self):
        cb = self._codebook()
        feat = FeatureMatrix(cb.centroids[3:4].astype(np.float32), frame_hop=0.01)
        assert assign_units(feat, cb).units.tolist() == [3]

    def test_reassigning_all_centroids_is_identity(self):
        cb = self._codebook(seed=7, k=8)
        feat = FeatureMatrix(cb.centroids.astype(np.float32), frame_hop=0.01)
        assert assign_units(feat, cb).units.tolist() == list(range(8))

    def test_tie_breaks_to_lowest_index(self):
        cb = Codebook(np.array([[5.0, 5.0], [1.0, 0.0], [9.0, 9.0],
                                [9.0, 1.0], [-1.0, 0.0]]), inertia=0.0)
        feat = FeatureMatrix(np.zeros((1, 2), dtype=np.float32), frame_hop=0.01)
        # centroids 1 and 4 are both at distance 1
        assert assign_units(feat, cb).units.tolist() == [1]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        cb = Codebook(rng.standard_normal((10, 6)), inertia=0.0)
        frames = rng.standard_normal((200, 6)).astype(np.float32)
        got = assign_units(FeatureMatrix(frames, frame_hop=0.01), cb).units
        for i in range(200):
            dists = [float(np.sum((frames[i].astype(np.float64) - c) ** 2))
                     for c in cb.centroids]
            best = min(range(10), key=lambda j: (dists[j], j))
            assert got[i] == best

    def test_dim_mismatch_rejected(self):
        cb = self._codebook(d=4)
        feat = FeatureMatrix(np.zeros((2, 3), dtype=np.float32), frame_hop=0.01)
        with pytest.raises(ValueError, match="dim"):
            assign_units(feat, cb)


class TestDedup:
    def test_run_collapse(self):
        out = dedup(UnitSequence(np.array([3, 3, 5, 5, 5, 2])))
        assert out.units.tolist() == [3, 5, 2]

    def test_empty(self):
        assert dedup(UnitSequence(np.array([], dtype=np.int64))).units.tolist() == []

    def test_non_adjacent_repeats_kept(self):
        assert dedup(UnitSequence(np.array([1, 2, 1]))).units.tolist() == [1, 2, 1]

    def test_properties_random(self):
        rng = np.random.default_rng(9)
        for trial in range(200):
            seq = UnitSequence(rng.integers(0, 5, size=rng.integers(0, 40)))
            out = dedup(seq)
            assert not np.any(out.units[1:] == out.units[:-1])
            # subsequence check
            it = iter(seq.units.tolist())
            assert all(any(u == v for v in it) for u in out.units.tolist())
            assert np.array_equal(dedup(out).units, out.units)


class TestUnitFiles:
    def test_round_trip(self, tmp_path):
        seqs = [UnitSequence(np.array([1, 2, 3]), "b"),
                UnitSequence(np.array([9]), "a"),
                UnitSequence(np.array([], dtype=np.int64), "c")]
        path = tmp_path / "units.tsv"
        write_units(path, seqs)
        back = read_units(path)
        assert [s.utt_id for s in back] == ["a", "b", "c"]  # sorted on write
        assert back[1].units.tolist() == [1, 2, 3]
        assert back[2].units.tolist() == []
