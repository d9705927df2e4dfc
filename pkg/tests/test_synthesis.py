import numpy as np
import pytest

from artimit import dsp, graph, synthesis
from artimit.graph import ParameterSet, grad_check
from artimit.synthesis import (AnalyticSynthesizer, AnalyticTractConfig,
                               CorpusConfig, SynthesizerNet, SynthTrainConfig,
                               generate_corpus, tract_forward_np,
                               tract_forward_t, train_synthesizer)

UNVOICED = np.array([[0.0, 0.0]])


def neutral_frame():
    return np.zeros((1, 6))


class TestTractForward:
    def test_output_shape(self):
        cfg = AnalyticTractConfig()
        out = tract_forward_np(np.zeros((5, 6)), np.tile(UNVOICED, (5, 1)), cfg)
        assert out.shape == (5, 80)

    def test_formant_peaks_at_mapped_bins(self):
        """With narrow peaks, the strongest bin must sit at the mel-bin
        coordinate of F1 = 500 Hz for the neutral frame."""
        cfg = AnalyticTractConfig()
        out = tract_forward_np(neutral_frame(), UNVOICED, cfg)
        f1_bin = dsp.freq_to_bin_coord(500.0)
        assert abs(np.argmax(out[0]) - f1_bin) <= 1.0

    def test_jh_moves_f1_up(self):
        cfg = AnalyticTractConfig()
        lo = neutral_frame()
        hi = neutral_frame()
        hi[0, 0] = 2.0  # JH
        out_lo = tract_forward_np(lo, UNVOICED, cfg)
        out_hi = tract_forward_np(hi, UNVOICED, cfg)
        assert np.argmax(out_hi[0]) > np.argmax(out_lo[0])
        want = dsp.freq_to_bin_coord(500.0 + 200.0 * 2.0)
        assert abs(np.argmax(out_hi[0]) - want) <= 1.0

    def test_speaker_scale_shifts_all_formants(self):
        a = neutral_frame()
        base = tract_forward_np(a, UNVOICED, AnalyticTractConfig())
        scaled = tract_forward_np(
            a, UNVOICED, AnalyticTractConfig(speaker_scale=1.2))
        want = dsp.freq_to_bin_coord(1.2 * 500.0)
        assert abs(np.argmax(scaled[0]) - want) <= 1.0
        assert np.argmax(scaled[0]) > np.argmax(base[0])

    def test_lh_gates_amplitude(self):
        cfg = AnalyticTractConfig()
        open_frame = neutral_frame()
        open_frame[0, 5] = 2.0
        closed = neutral_frame()
        closed[0, 5] = -4.0
        e_open = tract_forward_np(open_frame, UNVOICED, cfg)
        e_closed = tract_forward_np(closed, UNVOICED, cfg)
        assert np.all(e_closed <= e_open + 1e-12)
        assert e_closed.max() < e_open.max() - 1.0

    def test_tb_widens_peaks(self):
        cfg = AnalyticTractConfig()
        narrow = neutral_frame()
        narrow[0, 1] = -3.0
        wide = neutral_frame()
        wide[0, 1] = 3.0
        out_n = np.exp(tract_forward_np(narrow, UNVOICED, cfg)[0])
        out_w = np.exp(tract_forward_np(wide, UNVOICED, cfg)[0])
        # Same total proportions but spread: wide has lower kurtosis around F1.
        peak = np.argmax(out_n)
        assert out_w[peak + 4] > out_n[peak + 4]

    def test_voiced_ripple_modulates_bins(self):
        cfg = AnalyticTractConfig()
        a = neutral_frame()
        flat = tract_forward_np(a, UNVOICED, cfg)
        voiced = tract_forward_np(a, np.array([[160.0, 1.0]]), cfg)
        m = np.arange(80)
        ripple = 1.0 + 0.3 * np.cos(2 * np.pi * m * 160.0 / 320.0)
        want = flat[0] + np.log(ripple) \
            - np.log1p(0.0)  # MEL_FLOOR negligible at peak bins
        peak = np.argmax(flat[0])
        assert abs(voiced[0, peak] - want[peak]) < 1e-6

    def test_source_validation(self):
        cfg = AnalyticTractConfig()
        with pytest.raises(ValueError, match="pitch period"):
            tract_forward_np(neutral_frame(), np.array([[40.0, 0.5]]), cfg)
        with pytest.raises(ValueError, match="coefficient"):
            tract_forward_np(neutral_frame(), np.array([[160.0, 1.5]]), cfg)

    def test_nonfinite_input_rejected(self):
        cfg = AnalyticTractConfig()
        a = neutral_frame()
        a[0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            tract_forward_np(a, UNVOICED, cfg)

    def test_scale_bounds_enforced(self):
        with pytest.raises(ValueError, match="speaker_scale"):
            AnalyticTractConfig(speaker_scale=1.5)

    def test_graph_path_matches_numpy(self):
        rng = np.random.default_rng(0)
        cfg = AnalyticTractConfig(speaker_scale=1.1)
        a = rng.normal(size=(6, 6))
        s = np.column_stack([rng.uniform(80, 320, 6), rng.uniform(0, 1, 6)])
        want = tract_forward_np(a, s, cfg)
        got = tract_forward_t(graph.constant(a), s, cfg).value
        assert np.allclose(got, want, atol=1e-10)

    def test_gradient_wrt_articulation(self):
        rng = np.random.default_rng(1)
        cfg = AnalyticTractConfig()
        s = np.column_stack([rng.uniform(80, 320, 3), rng.uniform(0, 1, 3)])
        p = ParameterSet()
        p.add("a", rng.normal(size=(3, 6)) * 0.5)

        def f():
            return tract_forward_t(p["a"], s, cfg).square().mean()

        report = grad_check(f, p, tol=1e-4)
        assert report["__all__"], report


class TestCorpus:
    def test_deterministic(self):
        cfg = CorpusConfig(items_per_speaker=5)
        a = generate_corpus(cfg, seed=3)
        b = generate_corpus(cfg, seed=3)
        assert [u.utt_id for u in a] == [u.utt_id for u in b]
        for ua, ub in zip(a, b):
            assert np.array_equal(ua.logmel, ub.logmel)
            assert np.array_equal(ua.trajectory.frames, ub.trajectory.frames)

    def test_seed_changes_content(self):
        cfg = CorpusConfig(items_per_speaker=5)
        a = generate_corpus(cfg, seed=3)
        b = generate_corpus(cfg, seed=4)
        assert any(not np.array_equal(ua.logmel, ub.logmel)
                   for ua, ub in zip(a, b))

    def test_single_speaker_scale_is_one(self):
        for u in generate_corpus(CorpusConfig(items_per_speaker=3), seed=0):
            assert u.speaker_scale == 1.0

    def test_multi_speaker_scales_in_range(self):
        cfg = CorpusConfig(n_speakers=4, items_per_speaker=2)
        utts = generate_corpus(cfg, seed=0)
        scales = {u.speaker: u.speaker_scale for u in utts}
        assert len(scales) == 4
        assert all(0.85 <= s <= 1.2 for s in scales.values())
        assert len(set(scales.values())) > 1

    def test_segments_tile_utterance(self):
        for u in generate_corpus(CorpusConfig(items_per_speaker=10), seed=1):
            assert u.segments[0].start == 0
            assert u.segments[-1].end == u.n_frames
            for s1, s2 in zip(u.segments, u.segments[1:]):
                assert s1.end == s2.start

    def test_labels_match_utt_id(self):
        for u in generate_corpus(CorpusConfig(items_per_speaker=10), seed=2):
            v1cv2 = u.utt_id.split("_")[-1]
            labels = [s.label for s in u.segments]
            assert "".join(labels) == v1cv2
            assert labels[0] in synthesis.VOWEL_TARGETS
            assert labels[1] in synthesis.CONSONANT_SPECS
            assert labels[2] in synthesis.VOWEL_TARGETS

    def test_source_within_bounds(self):
        for u in generate_corpus(CorpusConfig(items_per_speaker=5), seed=3):
            pp, pc = u.source.frames[:, 0], u.source.frames[:, 1]
            assert np.all((pp >= 80) & (pp <= 320))
            assert np.all((pc >= 0) & (pc <= 1))

    def test_logmel_is_tract_output(self):
        for u in generate_corpus(CorpusConfig(items_per_speaker=3), seed=4):
            cfg = AnalyticTractConfig(speaker_scale=u.speaker_scale)
            want = tract_forward_np(u.trajectory.frames, u.source.frames, cfg)
            assert np.allclose(u.logmel, want, atol=1e-12)

    def test_empty_inventory_rejected(self):
        with pytest.raises(ValueError):
            CorpusConfig(vowels=())


class TestSynthesizerNet:
    def test_forward_shape(self):
        net = SynthesizerNet.init(seed=0)
        out = net.forward_np(np.zeros((4, 6)), np.tile(UNVOICED, (4, 1)))
        assert out.shape == (4, 80)

    def test_tensor_round_trip(self):
        net = SynthesizerNet.init(seed=1)
        net.in_mean = np.arange(8.0)
        net.in_std = np.arange(1.0, 9.0)
        back = SynthesizerNet.from_tensors(net.to_tensors())
        a = np.random.default_rng(0).normal(size=(3, 6))
        s = np.tile(np.array([[160.0, 0.5]]), (3, 1))
        assert np.allclose(back.forward_np(a, s), net.forward_np(a, s),
                           atol=1e-6)

    def test_checksum_tracks_values(self):
        net = SynthesizerNet.init(seed=0)
        before = net.checksum()
        net.params["ff0_W"].value[0, 0] += 1.0
        assert net.checksum() != before

    def test_training_converges(self):
        """Quick convergence sanity on a small corpus slice; the full
        MSE < 0.05 regression lives in the acceptance suite."""
        utts = generate_corpus(CorpusConfig(items_per_speaker=20), seed=5)
        pairs = [(u.trajectory.frames, u.source.frames, u.logmel)
                 for u in utts]
        cfg = SynthTrainConfig(epochs=60, seed=0)
        net, history = train_synthesizer(pairs, cfg)
        assert history[-1][1] < history[0][1] / 10.0
        assert history[-1][2] < history[0][2] / 10.0
        assert np.isfinite(history[-1][1])

    def test_heldout_mse_on_2000_frames(self):
        """Full regression target: ~2000 tract frames, 200 epochs, held-out
        MSE below 0.05 log-mel units. Slowest test in the suite (~2 min)."""
        utts = generate_corpus(CorpusConfig(items_per_speaker=110), seed=5)
        pairs, n = [], 0
        for u in utts:
            if n >= 2000:
                break
            pairs.append((u.trajectory.frames, u.source.frames, u.logmel))
            n += u.n_frames
        cfg = SynthTrainConfig(epochs=200, seed=0, batch_frames=128)
        net, history = train_synthesizer(pairs, cfg)
        assert history[-1][2] < 0.05

    def test_unaligned_pair_rejected(self):
        with pytest.raises(ValueError, match="unaligned"):
            train_synthesizer([(np.zeros((4, 6)), np.zeros((3, 2)),
                                np.zeros((4, 80)))])


class TestAnalyticSynthesizer:
    def test_checksum_depends_on_config(self):
        a = AnalyticSynthesizer()
        b = AnalyticSynthesizer(AnalyticTractConfig(speaker_scale=1.1))
        assert a.checksum() != b.checksum()
        assert a.checksum() == AnalyticSynthesizer().checksum()
