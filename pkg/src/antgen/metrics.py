"""Embedding-level (FED, LCR) and token-level (BLEU family) evaluation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import PAD

Sentence = Sequence[str]


# -- sentence embeddings ---------------------------------------------------------

class SentenceEmbedder(Protocol):
    def __call__(self, ids: np.ndarray) -> np.ndarray:
        """Map ``[B, N]`` token ids to ``[B, dim]`` embeddings."""


class AlignerEmbedder:
    """Mean of the aligner's ``mu`` over non-pad positions, scaled to unit norm."""

    def __init__(self, aligner, batch_size: int = 256):
        self.aligner = aligner
        self.batch_size = batch_size

    @property
    def dim(self) -> int:
        return self.aligner.cfg.d_model

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        out = []
        for lo in range(0, len(ids), self.batch_size):
            chunk = ids[lo:lo + self.batch_size]
            mu = self.aligner.encode(chunk).astype(np.float64)
            keep = (chunk != PAD)[..., None]
            pooled = (mu * keep).sum(axis=1) / np.maximum(keep.sum(axis=1), 1)
            norms = np.linalg.norm(pooled, axis=-1, keepdims=True)
            out.append(pooled / np.where(norms > 0, norms, 1.0))
        return np.concatenate(out) if out else np.zeros((0, self.dim))


def save_embeddings(path, arrays: dict[str, np.ndarray], config_hash: bytes = bytes(32)) -> None:
    """Embedding cache in the checkpoint archive format (stored as float32)."""
    save_checkpoint(path, Checkpoint(config_hash, dict(arrays), phase="embeddings"))


def load_embeddings(path, expected_hash: bytes | None = None) -> dict[str, np.ndarray]:
    return load_checkpoint(path, expected_hash).tensors


# -- Frechet embedding distance ---------------------------------------------------

@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, emb: np.ndarray, reg: float = 1e-6) -> "GaussianSummary":
        """Sample mean and covariance; adds ``reg * I`` when there are fewer than dim+1 samples."""
        emb = np.asarray(emb, dtype=np.float64)
        if emb.ndim != 2 or len(emb) == 0:
            raise ValueError("need a non-empty [count, dim] embedding matrix")
        n, dim = emb.shape
        mean = emb.mean(axis=0)
        cov = np.cov(emb, rowvar=False).reshape(dim, dim) if n > 1 else np.zeros((dim, dim))
        if n < dim + 1:
            cov = cov + reg * np.eye(dim)
        return cls(mean, cov)


def _psd_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    """``Tr((c1 c2)^(1/2))`` via the symmetric form ``sqrt(c1) c2 sqrt(c1)``."""
    s1 = _psd_sqrt(c1)
    prod = s1 @ c2 @ s1
    w = np.linalg.eigvalsh(0.5 * (prod + prod.T))
    if w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise ValueError(f"covariance product has negative eigenvalue {w.min():.3e}")
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fed_from_summaries(a: GaussianSummary, b: GaussianSummary) -> float:
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * trace_sqrt_product(a.cov, b.cov)
    return max(value, 0.0)


def fed(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two embedding sets."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("FED needs two non-empty embedding sets")
    return fed_from_summaries(GaussianSummary.fit(set_a), GaussianSummary.fit(set_b))


# -- least coverage rate ------------------------------------------------------------

def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("cosine similarity is undefined for zero-norm embeddings")
    # rounding can push the cosine of identical rows just past 1
    return np.clip((a / na[:, None]) @ (b / nb[:, None]).T, -1.0, 1.0)


def mean_pairwise_cosine(rows: np.ndarray) -> float:
    """Mean cosine similarity over all unordered pairs of distinct rows.

    Uses ``1 - |a_hat - b_hat|^2 / 2``, which is exactly 1 for identical rows
    and keeps precision near 1 where the dot-product form rounds.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) < 2:
        raise ValueError("need at least two rows for a pairwise mean")
    norms = np.linalg.norm(rows, axis=1)
    if (norms == 0).any():
        raise ValueError("cosine similarity is undefined for zero-norm embeddings")
    unit = rows / norms[:, None]
    i, j = np.triu_indices(len(rows), k=1)
    diff = unit[i] - unit[j]
    return float(np.mean(1.0 - 0.5 * np.einsum("pd,pd->p", diff, diff)))


def lcr(set_a: np.ndarray, set_b: np.ndarray, tau: float) -> float:
    """Least coverage rate: ``min(R_a, R_b)``.

    ``R_a`` is the fraction of rows ``i`` of ``set_a`` whose summed cosine
    similarity to all of ``set_b``, ``sum_j S_ij``, reaches ``tau``; ``R_b``
    is the same with the roles swapped. Note that the threshold applies to
    the sum, so a useful ``tau`` grows with the size of the other set.
    """
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("LCR needs two non-empty embedding sets")
    sim = cosine_matrix(set_a, set_b)
    r_a = float(np.mean(sim.sum(axis=1) >= tau))
    r_b = float(np.mean(sim.sum(axis=0) >= tau))
    return min(r_a, r_b)


# -- BLEU family ------------------------------------------------------------------

def ngram_counts(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_length(length: int, ref_lengths: Sequence[int]) -> int:
    # ties go to the shorter reference
    return min(ref_lengths, key=lambda r: (abs(r - length), r))


def _score(matches: Sequence[int], totals: Sequence[int], sys_len: int, ref_len: int) -> float:
    """BLEU from sufficient statistics, add-one smoothing on orders above 1."""
    if sys_len == 0:
        return 0.0
    log_p = 0.0
    for n, (m, c) in enumerate(zip(matches, totals), start=1):
        if n > 1:
            m, c = m + 1, c + 1
        if m == 0:
            return 0.0
        log_p += math.log(m / c)
    bp = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    return 100.0 * bp * math.exp(log_p / len(matches))


class _ReferenceSet:
    """Max n-gram counts over a reference set, with leave-one-out support."""

    def __init__(self, refs: Sequence[Sentence], max_n: int):
        self.max_n = max_n
        self.lengths = [len(r) for r in refs]
        self.counts = [[ngram_counts(r, n) for n in range(1, max_n + 1)] for r in refs]
        # per order: ngram -> (best count, owner index, second best count)
        self.best: list[dict] = []
        for k in range(max_n):
            table: dict = {}
            for idx, per_order in enumerate(self.counts):
                for gram, c in per_order[k].items():
                    top, owner, second = table.get(gram, (0, -1, 0))
                    if c > top:
                        table[gram] = (c, idx, top)
                    elif c > second:
                        table[gram] = (top, owner, c)
            self.best.append(table)
        self.sorted_lengths = sorted(self.lengths)

    def max_count(self, k: int, gram, exclude: int | None) -> int:
        top, owner, second = self.best[k].get(gram, (0, -1, 0))
        return second if owner == exclude else top

    def closest_length(self, length: int, exclude: int | None) -> int:
        lengths = self.sorted_lengths
        if exclude is not None:
            lengths = list(lengths)
            lengths.remove(self.lengths[exclude])
        if not lengths:
            raise ValueError("leave-one-out needs at least two sentences")
        return _closest_length(length, lengths)


def _corpus_stats(cands: Sequence[Sentence], refs: _ReferenceSet, exclude_self: bool):
    max_n = refs.max_n
    matches, totals = [0] * max_n, [0] * max_n
    sys_len = ref_len = 0
    for i, cand in enumerate(cands):
        ex = i if exclude_self else None
        sys_len += len(cand)
        ref_len += refs.closest_length(len(cand), ex)
        for k in range(max_n):
            grams = ngram_counts(cand, k + 1)
            totals[k] += sum(grams.values())
            matches[k] += sum(min(c, refs.max_count(k, g, ex)) for g, c in grams.items())
    return matches, totals, sys_len, ref_len


def bleu(candidates: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 5) -> float:
    """Corpus BLEU (0-100) where every candidate is scored against the whole reference set."""
    if not candidates or not references:
        raise ValueError("BLEU needs non-empty candidate and reference sets")
    stats = _corpus_stats(candidates, _ReferenceSet(references, max_n), exclude_self=False)
    return _score(*stats)


def self_bleu(sentences: Sequence[Sentence], max_n: int = 5) -> float:
    """Each sentence scored against all the others; higher means less diverse."""
    if len(sentences) < 2:
        raise ValueError("Self-BLEU needs at least two sentences")
    stats = _corpus_stats(sentences, _ReferenceSet(sentences, max_n), exclude_self=True)
    return _score(*stats)


def inverse_bleu(generated: Sequence[Sentence], test: Sequence[Sentence], max_n: int = 5) -> float:
    """Test sentences as candidates, generated sentences as the references."""
    return bleu(test, generated, max_n)


def bleu_family(candidates: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 5) -> dict[str, float]:
    return {
        "bleu": bleu(candidates, references, max_n),
        "self_bleu": self_bleu(candidates, max_n),
        "inverse_bleu": inverse_bleu(candidates, references, max_n),
    }


def temperature_sweep(sampler: Callable[[int, float, int], list[list[str]]], test: Sequence[Sentence],
                      temps: Sequence[float], max_n: int = 5, seed: int = 0) -> list[tuple[float, float, float]]:
    """Rows ``(temperature, -BLEU, Self-BLEU)``; each row draws ``len(test)`` fresh samples.

    ``sampler(count, temperature, seed)`` returns decoded sentences. Row ``i``
    uses seed ``seed + i``, so repeated temperatures are sampled independently.
    """
    rows = []
    for i, temp in enumerate(temps):
        if not temp > 0:
            raise ValueError(f"temperatures must be positive, got {temp}")
        samples = sampler(len(test), float(temp), seed + i)
        rows.append((float(temp), -bleu(samples, test, max_n), self_bleu(samples, max_n)))
    return rows
