import itertools
import math

import numpy as np
import pytest
import sacrebleu
from scipy.linalg import sqrtm

from antgen import metrics
from antgen.metrics import (
    GaussianSummary,
    bleu,
    bleu_family,
    cosine_matrix,
    fed,
    fed_from_summaries,
    inverse_bleu,
    lcr,
    mean_pairwise_cosine,
    self_bleu,
    temperature_sweep,
)
from antgen.model import ANT, ModelConfig


def random_psd(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + 0.1 * np.eye(dim)


def oracle_fed(m1, c1, m2, c2):
    """Textbook form with scipy's general matrix square root."""
    covmean = sqrtm(c1 @ c2).real
    return float(np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2.0 * covmean))


class TestFED:
    def test_identical_sets(self):
        a = np.random.default_rng(0).standard_normal((50, 6))
        assert abs(fed(a, a)) < 1e-8

    def test_one_dimensional_shift(self):
        s1 = GaussianSummary(np.array([0.0]), np.array([[1.0]]))
        s2 = GaussianSummary(np.array([1.0]), np.array([[1.0]]))
        assert abs(fed_from_summaries(s1, s2) - 1.0) < 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scipy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m1, m2 = rng.standard_normal(4), rng.standard_normal(4)
        c1, c2 = random_psd(rng, 4), random_psd(rng, 4)
        ours = fed_from_summaries(GaussianSummary(m1, c1), GaussianSummary(m2, c2))
        assert abs(ours - oracle_fed(m1, c1, m2, c2)) < 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((40, 5)), rng.standard_normal((30, 5)) + 0.5
        assert abs(fed(a, b) - fed(b, a)) < 1e-9

    def test_few_samples_are_regularised(self):
        rng = np.random.default_rng(2)
        s = GaussianSummary.fit(rng.standard_normal((3, 8)))
        assert np.linalg.eigvalsh(s.cov).min() > 0
        assert np.isfinite(fed(rng.standard_normal((3, 8)), rng.standard_normal((4, 8))))

    def test_single_sample(self):
        s = GaussianSummary.fit(np.ones((1, 3)))
        np.testing.assert_allclose(s.cov, 1e-6 * np.eye(3))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fed(np.zeros((0, 3)), np.ones((2, 3)))

    def test_non_psd_rejected(self):
        with pytest.raises(ValueError, match="semi-definite"):
            metrics.trace_sqrt_product(-np.eye(2), np.eye(2))

    def test_embedder_and_cache(self, tmp_path):
        ant = ANT(ModelConfig(vocab_size=10, max_len=5, d_model=8, heads=2, d_ff=8, layers=1), seed=0)
        embed = metrics.AlignerEmbedder(ant.aligner, batch_size=2)
        ids = np.array([[4, 5, 2, 0, 0], [6, 7, 8, 2, 0], [4, 2, 0, 0, 0]])
        emb = embed(ids)
        assert emb.shape == (3, 8)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, rtol=1e-6)
        metrics.save_embeddings(tmp_path / "e.bin", {"test": emb})
        np.testing.assert_allclose(metrics.load_embeddings(tmp_path / "e.bin")["test"], emb, rtol=1e-6)


class TestLCR:
    def test_identical_unit_sets(self):
        a = np.eye(3)
        assert lcr(a, a, tau=1.0) == 1.0

    def test_orthogonal_sets(self):
        assert lcr(np.eye(4)[:2], np.eye(4)[2:], tau=0.5) == 0.0

    def test_takes_the_minimum_direction(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        # rows of a: sums 3 and 0; rows of b: each sums to 1
        assert lcr(a, b, tau=1.0) == 0.5
        assert lcr(b, a, tau=1.0) == 0.5
        assert lcr(a, b, tau=1.5) == 0.0

    def test_hand_enumeration(self):
        a = np.array([[1.0, 0.0], [0.6, 0.8]])
        b = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        # sim rows of a: [1, 0, -1] -> 0 ; [0.6, 0.8, -0.6] -> 0.8
        # sim columns (rows of b): [1, 0.6] -> 1.6 ; [0, 0.8] -> 0.8 ; [-1, -0.6] -> -1.6
        assert lcr(a, b, tau=0.5) == pytest.approx(min(1 / 2, 2 / 3))
        assert lcr(a, b, tau=0.9) == pytest.approx(min(0 / 2, 1 / 3))

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_matrix(np.zeros((1, 2)), np.ones((1, 2)))

    def test_mean_pairwise_cosine(self):
        assert mean_pairwise_cosine(np.ones((4, 3))) == 1.0
        assert mean_pairwise_cosine(np.eye(3)) == 0.0
        with pytest.raises(ValueError):
            mean_pairwise_cosine(np.ones((1, 3)))


def sacre(cands, refs, max_n=5):
    scorer = sacrebleu.BLEU(max_ngram_order=max_n, smooth_method="add-k", tokenize="none")
    streams = [[" ".join(r)] * len(cands) for r in refs]
    return scorer.corpus_score([" ".join(c) for c in cands], streams).score


def random_corpus(rng, count, vocab=5, lo=2, hi=9):
    return [[f"w{int(t)}" for t in rng.integers(0, vocab, size=rng.integers(lo, hi))] for _ in range(count)]


class TestBLEU:
    def test_frozen_example(self):
        # sacrebleu 2.x, add-k smoothing, 5-gram order
        value = bleu([["the", "cat"]], [["the", "cat", "sat"]])
        assert value == pytest.approx(60.653065971263345, abs=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_agrees_with_sacrebleu(self, seed):
        rng = np.random.default_rng(seed)
        cands, refs = random_corpus(rng, 6), random_corpus(rng, 4)
        assert bleu(cands, refs) == pytest.approx(sacre(cands, refs), abs=1e-9)

    def test_identical_corpus(self):
        sents = [["a", "b", "c", "d", "e", "f"], ["x", "y", "z", "w", "v"]]
        assert bleu(sents, sents) == pytest.approx(100.0)

    def test_no_overlap(self):
        assert bleu([["a", "b"]], [["c", "d"]]) == 0.0

    def test_empty_candidate_scores_zero(self):
        assert bleu([[]], [["a"]]) == 0.0

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError):
            bleu([], [["a"]])

    @pytest.mark.parametrize("seed", range(4))
    def test_self_bleu_is_leave_one_out(self, seed):
        rng = np.random.default_rng(seed)
        sents = random_corpus(rng, 5, vocab=3)
        stats = [0] * 5, [0] * 5
        sys_len = ref_len = 0
        for i, s in enumerate(sents):
            others = sents[:i] + sents[i + 1:]
            sys_len += len(s)
            ref_len += min((len(r) for r in others), key=lambda r: (abs(r - len(s)), r))
            for n in range(1, 6):
                grams = metrics.ngram_counts(s, n)
                best = {}
                for r in others:
                    for g, c in metrics.ngram_counts(r, n).items():
                        best[g] = max(best.get(g, 0), c)
                stats[0][n - 1] += sum(min(c, best.get(g, 0)) for g, c in grams.items())
                stats[1][n - 1] += sum(grams.values())
        expected = metrics._score(stats[0], stats[1], sys_len, ref_len)
        assert self_bleu(sents) == pytest.approx(expected, abs=1e-12)

    def test_self_bleu_needs_two(self):
        with pytest.raises(ValueError):
            self_bleu([["a"]])

    def test_inverse_swaps_roles(self):
        rng = np.random.default_rng(5)
        gen, test = random_corpus(rng, 4), random_corpus(rng, 6)
        assert inverse_bleu(gen, test) == bleu(test, gen)
        fam = bleu_family(gen, test)
        assert set(fam) == {"bleu", "self_bleu", "inverse_bleu"}

    def test_closest_length_ties_go_short(self):
        assert metrics._closest_length(4, [3, 5]) == 3


class TestTemperatureSweep:
    def test_rows_and_seeds(self):
        seen = []

        def sampler(count, temp, seed):
            seen.append((count, temp, seed))
            rng = np.random.default_rng(seed)
            return random_corpus(rng, count, vocab=4)

        test = random_corpus(np.random.default_rng(0), 5)
        rows = temperature_sweep(sampler, test, [0.5, 1.0, 1.0], seed=10)
        assert [r[0] for r in rows] == [0.5, 1.0, 1.0]
        assert seen == [(5, 0.5, 10), (5, 1.0, 11), (5, 1.0, 12)]
        assert rows[1] != rows[2]
        assert all(r[1] <= 0 for r in rows)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            temperature_sweep(lambda c, t, s: [["a"]] * c, [["a"]], [1.0, 0.0])


def test_all_pairs_brute_force_cosine():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 4))
    pairs = [
        x[i] @ x[j] / (np.linalg.norm(x[i]) * np.linalg.norm(x[j]))
        for i, j in itertools.combinations(range(5), 2)
    ]
    assert mean_pairwise_cosine(x) == pytest.approx(float(np.mean(pairs)), abs=1e-12)
    assert math.isfinite(mean_pairwise_cosine(x))
