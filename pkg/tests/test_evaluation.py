import functools
import itertools

import numpy as np
import pytest

from artimit import evaluation
from artimit.evaluation import (AbxTriplet, LabelCoverageError,
                                MissingItemError, ProbeConfig,
                                UndefinedCorrelationError, UndefinedWerError,
                                VcvItem, abx_score, build_abx_triplets,
                                pearson_per_param, probe_accuracy, train_probe,
                                vcv_items_from_segments, wer)


class TestPearson:
    def test_affine_transform_gives_unit_r(self):
        rng = np.random.default_rng(0)
        truth = rng.normal(size=(50, 6))
        pred = truth * 3.25 + 4.0
        rs, mean_r = pearson_per_param(pred, truth)
        assert np.allclose(rs, 1.0, atol=1e-12)
        assert abs(mean_r - 1.0) < 1e-12

    def test_negated_column_gives_minus_one(self):
        rng = np.random.default_rng(1)
        truth = rng.normal(size=(40, 6))
        pred = truth.copy()
        pred[:, 2] *= -2.0
        rs, _ = pearson_per_param(pred, truth)
        assert abs(rs[2] + 1.0) < 1e-12
        assert np.allclose(np.delete(rs, 2), 1.0, atol=1e-12)

    def test_pools_across_utterances(self):
        rng = np.random.default_rng(2)
        truths = [rng.normal(size=(10, 6)) for _ in range(4)]
        preds = [t + rng.normal(size=t.shape) * 0.1 for t in truths]
        rs, _ = pearson_per_param(preds, truths)
        want = np.zeros(6)
        P = np.concatenate(preds)
        T = np.concatenate(truths)
        for k in range(6):
            want[k] = np.corrcoef(P[:, k], T[:, k])[0, 1]
        assert np.allclose(rs, want, atol=1e-12)

    def test_zero_variance_names_parameter(self):
        rng = np.random.default_rng(3)
        truth = rng.normal(size=(20, 6))
        pred = truth.copy()
        pred[:, 4] = 1.0
        with pytest.raises(UndefinedCorrelationError, match="LP"):
            pearson_per_param(pred, truth)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(Exception):
            pearson_per_param([np.zeros((4, 6))], [np.zeros((5, 6))])


def item(utt, cons, place, manner, speaker="A", context="a_a", start=0, end=3):
    return VcvItem(utt, speaker, cons, place, manner, context, start, end)


class TestVcvExtraction:
    def test_extracts_vcv_runs(self):
        segs = [("a", "none", "vowel", 0, 4),
                ("td", "coronal", "stop", 4, 7),
                ("i", "none", "vowel", 7, 11),
                ("pb", "labial", "stop", 11, 14),
                ("u", "none", "vowel", 14, 18)]
        items = vcv_items_from_segments("u0", "A", segs)
        assert len(items) == 2
        assert items[0].consonant == "td"
        assert items[0].context == "a_i"
        assert (items[0].start, items[0].end) == (4, 7)
        assert items[1].consonant == "pb"
        assert items[1].context == "i_u"

    def test_requires_vowel_flanks(self):
        segs = [("td", "coronal", "stop", 0, 3),
                ("sz", "coronal", "fricative", 3, 6),
                ("a", "none", "vowel", 6, 9)]
        assert vcv_items_from_segments("u0", "A", segs) == []


class TestTripletConstruction:
    def test_hand_counted_case(self):
        i1 = item("u1", "td", "coronal", "stop", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", context="a_i")
        i3 = item("u3", "pb", "labial", "stop", context="a_a")
        triplets, skipped = build_abx_triplets([i1, i2, i3], "within_speaker")
        # A and X swap over the two td items; B is always the pb item.
        assert len(triplets) == 2
        assert {(t.a.utt_id, t.x.utt_id) for t in triplets} == \
            {("u1", "u2"), ("u2", "u1")}
        assert all(t.b.utt_id == "u3" for t in triplets)
        # Only one pb item, so the reverse contrast has no (A, X) pair.
        assert ("pb", "td", "stop") in skipped

    def test_within_speaker_constraint(self):
        i1 = item("u1", "td", "coronal", "stop", speaker="A")
        i2 = item("u2", "td", "coronal", "stop", speaker="B")
        i3 = item("u3", "pb", "labial", "stop", speaker="A")
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        assert triplets == []

    def test_across_context_requires_different_contexts(self):
        i1 = item("u1", "td", "coronal", "stop", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", context="a_a")
        i3 = item("u3", "pb", "labial", "stop", context="a_i")
        triplets, _ = build_abx_triplets([i1, i2, i3], "across_context")
        assert triplets == []

    def test_across_context_ignores_speaker(self):
        i1 = item("u1", "td", "coronal", "stop", speaker="A", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", speaker="B", context="a_i")
        i3 = item("u3", "pb", "labial", "stop", speaker="C", context="a_a")
        triplets, _ = build_abx_triplets([i1, i2, i3], "across_context")
        assert len(triplets) == 2

    def test_manner_must_match(self):
        i1 = item("u1", "td", "coronal", "stop", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", context="a_i")
        i3 = item("u3", "fv", "labial", "fricative")
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        assert triplets == []

    def test_cap_and_seed_deterministic(self):
        items = []
        for k in range(6):
            items.append(item(f"t{k}", "td", "coronal", "stop",
                              context=f"a_{k}"))
            items.append(item(f"p{k}", "pb", "labial", "stop",
                              context=f"i_{k}"))
        full, _ = build_abx_triplets(items, "within_speaker")
        capped1, _ = build_abx_triplets(items, "within_speaker",
                                        cap_per_contrast=10, seed=7)
        capped2, _ = build_abx_triplets(items, "within_speaker",
                                        cap_per_contrast=10, seed=7)
        capped3, _ = build_abx_triplets(items, "within_speaker",
                                        cap_per_contrast=10, seed=8)
        assert len(full) > 20
        per = {}
        for t in capped1:
            per[t.contrast] = per.get(t.contrast, 0) + 1
        assert all(n == 10 for n in per.values())
        assert capped1 == capped2
        assert capped1 != capped3
        assert set(capped1) <= set(full)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            build_abx_triplets([], "both")


class TestAbxScore:
    def three_items(self):
        i1 = item("u1", "td", "coronal", "stop", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", context="a_i")
        i3 = item("u3", "pb", "labial", "stop", context="a_a")
        return i1, i2, i3

    def test_perfect_when_a_matches_x(self):
        i1, i2, i3 = self.three_items()
        reps = {"u1": np.tile([1.0, 0.0], (3, 1)),
                "u2": np.tile([0.9, 0.1], (3, 1)),
                "u3": np.tile([0.0, 1.0], (3, 1))}
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        report = abx_score(triplets, lambda it: reps[it.utt_id])
        assert report.overall == 1.0
        assert report.n_triplets == 2
        assert report.n_ties == 0

    def test_zero_when_b_matches_x(self):
        i1, i2, i3 = self.three_items()
        reps = {"u1": np.tile([0.0, 1.0], (3, 1)),
                "u2": np.tile([1.0, 0.0], (3, 1)),
                "u3": np.tile([1.0, 0.05], (3, 1))}
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        report = abx_score(triplets, lambda it: reps[it.utt_id])
        # u2 (X for the first triplet) is closer to u3 (B) than to u1 (A),
        # and symmetrically for the second triplet.
        assert report.overall == 0.0

    def test_exact_tie_scores_half(self):
        i1, i2, i3 = self.three_items()
        rep = np.tile([1.0, 2.0], (3, 1))
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        report = abx_score(triplets, lambda it: rep)
        assert report.overall == 0.5
        assert report.n_ties == 2

    def test_missing_item_named(self):
        i1, i2, i3 = self.three_items()
        triplets, _ = build_abx_triplets([i1, i2, i3], "within_speaker")
        with pytest.raises(MissingItemError):
            abx_score(triplets, lambda it: {}[it.utt_id])

    def test_per_contrast_weighted_overall(self):
        i1 = item("u1", "td", "coronal", "stop", context="a_a")
        i2 = item("u2", "td", "coronal", "stop", context="a_i")
        i3 = item("u3", "pb", "labial", "stop", context="a_a")
        i4 = item("u4", "pb", "labial", "stop", context="a_u")
        reps = {"u1": np.tile([1.0, 0.0], (3, 1)),
                "u2": np.tile([0.9, 0.1], (3, 1)),
                "u3": np.tile([0.0, 1.0], (3, 1)),
                "u4": np.tile([0.1, 0.9], (3, 1))}
        triplets, skipped = build_abx_triplets([i1, i2, i3, i4],
                                               "within_speaker")
        assert skipped == []
        report = abx_score(triplets, lambda it: reps[it.utt_id])
        total = sum(n for n, _ in report.per_contrast.values())
        weighted = sum(n * s for n, s in report.per_contrast.values()) / total
        assert abs(report.overall - weighted) < 1e-12
        assert report.overall == 1.0


class TestProbes:
    def separable_data(self, n=300, seed=0):
        rng = np.random.default_rng(seed)
        X0 = rng.normal(size=(n, 4)) + np.array([4.0, 0, 0, 0])
        X1 = rng.normal(size=(n, 4)) - np.array([4.0, 0, 0, 0])
        X2 = rng.normal(size=(n, 4)) + np.array([0, 4.0, 0, 0])
        X = np.concatenate([X0, X1, X2])
        y = ["p"] * n + ["t"] * n + ["k"] * n
        return X, y

    def test_separable_above_99(self):
        X, y = self.separable_data()
        model = train_probe(X, y)
        assert probe_accuracy(model, X, y) >= 0.99

    def test_generalizes_to_fresh_draw(self):
        X, y = self.separable_data(seed=0)
        model = train_probe(X, y)
        X2, y2 = self.separable_data(seed=1)
        assert probe_accuracy(model, X2, y2) >= 0.99

    def test_shuffled_labels_at_chance(self):
        X, y = self.separable_data()
        rng = np.random.default_rng(2)
        y_shuf = [y[i] for i in rng.permutation(len(y))]
        model = train_probe(X, y_shuf)
        X2, _ = self.separable_data(seed=3)
        acc = probe_accuracy(model, X2, [y[i] for i in rng.permutation(len(y))])
        # 3 balanced classes: chance is 1/3; allow a generous band.
        assert abs(acc - 1.0 / 3.0) < 0.1

    def test_single_class_rejected(self):
        with pytest.raises(LabelCoverageError):
            train_probe(np.zeros((10, 2)), ["a"] * 10)

    def test_unseen_test_label_rejected(self):
        X, y = self.separable_data(n=50)
        model = train_probe(X, y)
        with pytest.raises(LabelCoverageError, match="q"):
            probe_accuracy(model, X[:1], ["q"])

    def test_loss_history_decreases(self):
        X, y = self.separable_data(n=100)
        model = train_probe(X, y, ProbeConfig(epochs=50))
        assert model.history[-1] < model.history[0]


def oracle_edit_distance(ref, hyp):
    """Textbook recurrence, memoized on suffix indices."""
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1,
                   d(i + 1, j + 1) + (0 if ref[i] == hyp[j] else 1))
    return d(0, 0)


class TestWer:
    def test_identical_zero(self):
        assert wer(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_empty_hypothesis(self):
        assert wer(["a", "b"], []) == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(UndefinedWerError):
            wer([], ["a"])

    def test_can_exceed_one(self):
        assert wer(["a"], ["b", "c", "d"]) == 3.0

    def test_matches_oracle_exhaustive(self):
        """Every pair of token sequences over {a, b} up to length 5."""
        vocab = ("a", "b")
        seqs = [list(s) for L in range(6)
                for s in itertools.product(vocab, repeat=L)]
        for ref in seqs:
            if not ref:
                continue
            for hyp in seqs:
                want = oracle_edit_distance(tuple(ref), tuple(hyp)) / len(ref)
                assert wer(ref, hyp) == want, (ref, hyp)
